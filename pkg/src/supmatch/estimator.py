"""Estimator facades so the pipeline composes with the scikit-learn
ecosystem: fit / transform / predict plus get_params for cloning and grid
search. The heavy lifting lives in the training and clustering modules.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, TransformerMixin

from .bagging import BalancingScheme
from .baselines import _balanced_batch, _round_to_multiple
from .clustering import (
    ClusterConfig,
    assign_clusters,
    clustering_accuracy,
    fit_clustering,
)
from .exceptions import StateError
from .training import ModelConfig, TrainConfig, train_loop
from .validation import new_rng


def fit_linear_probe(model, train_dataset, spec, epochs=15, lr=1e-3, batch_size=64, seed=0):
    """Fresh linear classifier on the frozen invariant code, trained on the
    same hierarchically balanced batches as everything else."""
    torch.manual_seed(seed + 17)
    rng = new_rng(seed + 17)
    probe = torch.nn.Linear(model.z_width, spec.n_y)
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    batch = _round_to_multiple(batch_size, spec.n_y)
    steps = max(1, len(train_dataset) // batch)
    for _ in range(epochs):
        for _ in range(steps):
            x, _, y = _balanced_batch(train_dataset, spec, batch, rng)
            with torch.no_grad():
                z = model.encode(x).z
            opt.zero_grad()
            F.cross_entropy(probe(z), y).backward()
            opt.step()
    probe.eval()
    return probe


def predict_with_probe(model, probe, features) -> np.ndarray:
    features = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    with torch.no_grad():
        logits = probe(model.encode(features).z)
    return logits.argmax(dim=-1).numpy()


class SupportMatchEstimator(BaseEstimator, TransformerMixin):
    """Adversarial support matching with a downstream linear probe.

    ``fit`` consumes a labeled training set, an unlabeled deployment set
    and the support spec; ``transform`` maps features to the invariant
    code z; ``predict`` classifies through the probe.
    """

    def __init__(
        self,
        encoding_size=64,
        hidden=(32, 64, 128),
        level_depth=1,
        binarize_s=False,
        feature_blocks=None,
        bag_size=32,
        bags_per_batch=8,
        iterations=1000,
        lambda_y=1.0,
        lambda_s=1.0,
        lambda_adv=1.0,
        embed_l2=1e-2,
        disc_updates=1,
        stop_gradient=False,
        attention_kind="gated",
        attention_embed_dim=32,
        disc_pre_hidden=(64, 64),
        disc_post_hidden=(64,),
        lr_encoder=1e-3,
        lr_predictors=3e-4,
        lr_disc=3e-4,
        scheme="oracle_balanced",
        instancewise=False,
        probe_epochs=15,
        probe_lr=1e-3,
        probe_batch=64,
        checkpoint_every=500,
        seed=0,
    ):
        self.encoding_size = encoding_size
        self.hidden = hidden
        self.level_depth = level_depth
        self.binarize_s = binarize_s
        self.feature_blocks = feature_blocks
        self.bag_size = bag_size
        self.bags_per_batch = bags_per_batch
        self.iterations = iterations
        self.lambda_y = lambda_y
        self.lambda_s = lambda_s
        self.lambda_adv = lambda_adv
        self.embed_l2 = embed_l2
        self.disc_updates = disc_updates
        self.stop_gradient = stop_gradient
        self.attention_kind = attention_kind
        self.attention_embed_dim = attention_embed_dim
        self.disc_pre_hidden = disc_pre_hidden
        self.disc_post_hidden = disc_post_hidden
        self.lr_encoder = lr_encoder
        self.lr_predictors = lr_predictors
        self.lr_disc = lr_disc
        self.scheme = scheme
        self.instancewise = instancewise
        self.probe_epochs = probe_epochs
        self.probe_lr = probe_lr
        self.probe_batch = probe_batch
        self.checkpoint_every = checkpoint_every
        self.seed = seed

    def _configs(self):
        model_config = ModelConfig(
            encoding_size=self.encoding_size,
            hidden=tuple(self.hidden),
            level_depth=self.level_depth,
            binarize_s=self.binarize_s,
            feature_blocks=self.feature_blocks,
        )
        train_config = TrainConfig(
            bag_size=self.bag_size,
            bags_per_batch=self.bags_per_batch,
            iterations=self.iterations,
            lambda_y=self.lambda_y,
            lambda_s=self.lambda_s,
            lambda_adv=self.lambda_adv,
            embed_l2=self.embed_l2,
            disc_updates=self.disc_updates,
            stop_gradient=self.stop_gradient,
            attention_kind=self.attention_kind,
            attention_embed_dim=self.attention_embed_dim,
            disc_pre_hidden=tuple(self.disc_pre_hidden),
            disc_post_hidden=tuple(self.disc_post_hidden),
            lr_encoder=self.lr_encoder,
            lr_predictors=self.lr_predictors,
            lr_disc=self.lr_disc,
            scheme=BalancingScheme(self.scheme),
            instancewise=self.instancewise,
            checkpoint_every=self.checkpoint_every,
            seed=self.seed,
        )
        return model_config, train_config

    def fit(self, train_dataset, deployment_dataset, spec, run_dir=None):
        model_config, train_config = self._configs()
        result = train_loop(
            train_dataset,
            deployment_dataset,
            spec,
            train_config,
            model_config=model_config,
            run_dir=run_dir,
        )
        self.model_ = result.model
        self.discriminator_ = result.discriminator
        self.history_ = result.history
        self.spec_ = spec
        self.probe_ = fit_linear_probe(
            self.model_, train_dataset, spec,
            epochs=self.probe_epochs, lr=self.probe_lr,
            batch_size=self.probe_batch, seed=self.seed,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise StateError("estimator is not fitted")

    def transform(self, features) -> np.ndarray:
        self._check_fitted()
        features = torch.as_tensor(np.asarray(features), dtype=torch.float32)
        with torch.no_grad():
            return self.model_.encode(features).z.numpy()

    def predict(self, features) -> np.ndarray:
        self._check_fitted()
        return predict_with_probe(self.model_, self.probe_, features)

    def score(self, features, y) -> float:
        return float((self.predict(features) == np.asarray(y)).mean())


class RankStatsClusterer(BaseEstimator):
    """Semi-supervised clusterer producing deployment cluster assignments."""

    def __init__(self, n_clusters=None, rank_depth=5, embed_dim=32, hidden=(32, 64),
                 level_depth=1, pretrain_epochs=20, cluster_epochs=30, batch_size=64,
                 lr=1e-3, perturb_scale=0.05, seed=0):
        self.n_clusters = n_clusters
        self.rank_depth = rank_depth
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.level_depth = level_depth
        self.pretrain_epochs = pretrain_epochs
        self.cluster_epochs = cluster_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.perturb_scale = perturb_scale
        self.seed = seed

    def _config(self) -> ClusterConfig:
        return ClusterConfig(
            n_clusters=self.n_clusters,
            rank_depth=self.rank_depth,
            embed_dim=self.embed_dim,
            hidden=tuple(self.hidden),
            level_depth=self.level_depth,
            pretrain_epochs=self.pretrain_epochs,
            cluster_epochs=self.cluster_epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            perturb_scale=self.perturb_scale,
            seed=self.seed,
        )

    def fit(self, train_dataset, deployment_dataset, spec):
        self.model_, self.assignment_ = fit_clustering(
            train_dataset, deployment_dataset, spec, self._config()
        )
        return self

    def predict(self, deployment_dataset) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise StateError("clusterer is not fitted")
        return assign_clusters(self.model_, deployment_dataset).clusters

    def score(self, deployment_dataset) -> float:
        """Evaluation-only clustering accuracy against hidden sources."""
        assignment = assign_clusters(self.model_, deployment_dataset)
        with deployment_dataset.oracle_labels():
            sources = deployment_dataset.hidden_y * deployment_dataset.n_s + deployment_dataset.hidden_s
        return clustering_accuracy(assignment, sources)
