"""Reference classifiers: ERM, DRO, gDRO, LfF, their label-oracle variants,
and the adapted two-head GEORGE pipeline. All of them consume the same
hierarchically balanced training batches as the main method.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator

from .bagging import sample_train_bag
from .clustering import ClusterConfig, pretrain_encoder, rank_pairwise_matrix
from .exceptions import ValidationError
from .hierarchy import SupportSpec
from .validation import new_rng


class BaselineKind(str, enum.Enum):
    ERM = "erm"
    ERM_LABEL_ORACLE = "erm_label_oracle"
    DRO = "dro"
    GDRO = "gdro"
    GDRO_LABEL_ORACLE = "gdro_label_oracle"
    LFF = "lff"
    GEORGE = "george_adapted"


class ConvBackbone(nn.Module):
    """One Conv-BN-LReLU block per stage, each followed by 2x max-pooling."""

    def __init__(self, in_channels, input_size, widths, n_out):
        super().__init__()
        layers = []
        channels, size = in_channels, input_size
        for width in widths:
            layers += [
                nn.Conv2d(channels, width, 3, padding=1),
                nn.BatchNorm2d(width),
                nn.LeakyReLU(0.01),
                nn.MaxPool2d(2),
            ]
            channels, size = width, size // 2
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(channels * size * size, n_out)

    def forward(self, x):
        return self.head(self.body(x).flatten(1))


class MlpBackbone(nn.Module):
    """Single hidden layer with SELU, per the tabular baseline setup."""

    def __init__(self, in_dim, hidden, n_out):
        super().__init__()
        self.body = nn.Sequential(nn.Linear(in_dim, hidden), nn.SELU(), nn.Linear(hidden, n_out))

    def forward(self, x):
        return self.body(x)


def build_backbone(feature_shape, n_out, widths=(16, 32, 64), mlp_hidden=35):
    if len(feature_shape) == 3:
        return ConvBackbone(feature_shape[0], feature_shape[1], widths, n_out)
    return MlpBackbone(feature_shape[0], mlp_hidden, n_out)


def _balanced_batch(dataset, spec, batch_size, rng):
    bag = sample_train_bag(spec, dataset, batch_size, rng)
    idx = bag.indices
    return (
        dataset.features[torch.from_numpy(idx)],
        torch.from_numpy(dataset.s[idx]),
        torch.from_numpy(dataset.y[idx]),
    )


def _round_to_multiple(value, multiple):
    return max(multiple, (value // multiple) * multiple)


class _TorchClassifier(BaseEstimator):
    """Shared fit/predict plumbing for the torch-backed baselines."""

    def __init__(self, epochs=15, lr=1e-3, batch_size=64, widths=(16, 32, 64),
                 mlp_hidden=35, seed=0):
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.widths = widths
        self.mlp_hidden = mlp_hidden
        self.seed = seed

    def _training_data(self, train_dataset, spec, deployment=None):
        return train_dataset, spec

    def _setup(self, dataset, spec):
        torch.manual_seed(self.seed)
        self.network_ = build_backbone(
            tuple(dataset.features.shape[1:]), spec.n_y, self.widths, self.mlp_hidden
        )
        self.n_y_ = spec.n_y

    def _steps_per_epoch(self, dataset, batch):
        return max(1, len(dataset) // batch)

    def _batch_loss(self, per_sample, s, y):
        return per_sample.mean()

    def fit(self, train_dataset, spec: SupportSpec, deployment=None):
        dataset, spec = self._training_data(train_dataset, spec, deployment)
        if len(np.unique(dataset.y)) < 2:
            raise ValidationError("training set must contain at least two classes")
        self._setup(dataset, spec)
        rng = new_rng(self.seed)
        batch = _round_to_multiple(self.batch_size, spec.n_y)
        opt = torch.optim.Adam(self.network_.parameters(), lr=self.lr)
        for _ in range(self.epochs):
            for _ in range(self._steps_per_epoch(dataset, batch)):
                x, s, y = _balanced_batch(dataset, spec, batch, rng)
                opt.zero_grad()
                logits = self.network_(x)
                per_sample = F.cross_entropy(logits, y, reduction="none")
                loss = self._batch_loss(per_sample, s, y)
                loss.backward()
                opt.step()
        self.network_.eval()
        return self

    def predict_proba(self, features) -> np.ndarray:
        features = torch.as_tensor(np.asarray(features), dtype=torch.float32)
        with torch.no_grad():
            return F.softmax(self.network_(features), dim=-1).numpy()

    def predict(self, features) -> np.ndarray:
        return self.predict_proba(features).argmax(axis=1)


class ErmClassifier(_TorchClassifier):
    """Cross-entropy classifier on balanced batches."""

    def __init__(self, epochs=15, lr=1e-3, batch_size=64, widths=(16, 32, 64),
                 mlp_hidden=35, seed=0, label_oracle=False):
        super().__init__(epochs, lr, batch_size, widths, mlp_hidden, seed)
        self.label_oracle = label_oracle

    def _training_data(self, train_dataset, spec, deployment=None):
        if not self.label_oracle:
            return train_dataset, spec
        if deployment is None:
            raise ValidationError("label-oracle variant needs the deployment set")
        labeled = deployment.as_labeled()
        return labeled, SupportSpec.from_data(labeled.s, labeled.y, spec.n_s, spec.n_y)


class DroClassifier(_TorchClassifier):
    """Chi-square DRO: mean squared hinged excess loss above eta.

    With ``eta=None`` the threshold is chosen from ``eta_grid`` by robust
    accuracy on a held-out validation split carved from the training set.
    """

    def __init__(self, eta=None, eta_grid=(0.01, 0.1, 0.3, 1.0), epochs=15, lr=1e-3,
                 batch_size=64, widths=(16, 32, 64), mlp_hidden=35, seed=0):
        super().__init__(epochs, lr, batch_size, widths, mlp_hidden, seed)
        self.eta = eta
        self.eta_grid = eta_grid

    def _batch_loss(self, per_sample, s, y):
        return F.relu(per_sample - self.eta_).pow(2).mean()

    def fit(self, train_dataset, spec, deployment=None):
        if self.eta is not None:
            if self.eta <= 0:
                raise ValidationError("eta must be positive")
            self.eta_ = float(self.eta)
            return super().fit(train_dataset, spec, deployment)
        from .metrics import robust_accuracy

        rng = new_rng(self.seed)
        order = rng.permutation(len(train_dataset))
        cut = max(1, int(0.8 * len(order)))
        fit_part = train_dataset.subset(np.sort(order[:cut]))
        val_part = train_dataset.subset(np.sort(order[cut:]))
        fit_spec = SupportSpec.from_data(fit_part.s, fit_part.y, spec.n_s, spec.n_y)
        best, best_eta = -1.0, self.eta_grid[0]
        for eta in self.eta_grid:
            probe = DroClassifier(
                eta=eta, epochs=self.epochs, lr=self.lr, batch_size=self.batch_size,
                widths=self.widths, mlp_hidden=self.mlp_hidden, seed=self.seed,
            ).fit(fit_part, fit_spec)
            score = robust_accuracy(probe.predict(val_part.features), val_part.y, val_part.s)
            if score > best:
                best, best_eta = score, eta
        self.eta_ = float(best_eta)
        return super().fit(train_dataset, spec, deployment)


class GdroClassifier(_TorchClassifier):
    """Group DRO with online exponentiated group weights."""

    def __init__(self, step_size=0.01, epochs=15, lr=1e-3, batch_size=64,
                 widths=(16, 32, 64), mlp_hidden=35, seed=0, label_oracle=False):
        super().__init__(epochs, lr, batch_size, widths, mlp_hidden, seed)
        self.step_size = step_size
        self.label_oracle = label_oracle

    def _training_data(self, train_dataset, spec, deployment=None):
        if not self.label_oracle:
            return train_dataset, spec
        if deployment is None:
            raise ValidationError("label-oracle variant needs the deployment set")
        labeled = deployment.as_labeled()
        return labeled, SupportSpec.from_data(labeled.s, labeled.y, spec.n_s, spec.n_y)

    def _setup(self, dataset, spec):
        observed = sorted({(s, y) for s, y in zip(dataset.s.tolist(), dataset.y.tolist())})
        if len(observed) < 2:
            raise ValidationError("group DRO needs at least two observed groups")
        self.groups_ = {source: i for i, source in enumerate(observed)}
        self.group_weights_ = torch.full((len(observed),), 1.0 / len(observed))
        super()._setup(dataset, spec)

    def _batch_loss(self, per_sample, s, y):
        group_ids = torch.tensor(
            [self.groups_[(int(si), int(yi))] for si, yi in zip(s, y)]
        )
        group_losses = torch.zeros(len(self.groups_))
        for g in group_ids.unique():
            group_losses[g] = per_sample[group_ids == g].mean()
        with torch.no_grad():
            self.group_weights_ = self.group_weights_ * torch.exp(
                self.step_size * group_losses
            )
            self.group_weights_ = self.group_weights_ / self.group_weights_.sum()
        return group_losses @ self.group_weights_


def generalized_cross_entropy(logits, y, q=0.7):
    """GCE loss (1 - p_y^q) / q, the bias-amplifying objective."""
    p_y = F.softmax(logits, dim=-1).gather(1, y.unsqueeze(1)).squeeze(1)
    return ((1.0 - p_y.clamp_min(1e-8).pow(q)) / q).mean()


def lff_weights(ce_biased: torch.Tensor, ce_debiased: torch.Tensor) -> torch.Tensor:
    """Relative-difficulty weights; bias-conflicting samples score above 0.5."""
    denom = ce_biased + ce_debiased
    return torch.where(denom > 0, ce_biased / denom, torch.full_like(denom, 0.5))


class LffClassifier(_TorchClassifier):
    """Learning-from-failure: a GCE-trained biased network reweights the
    cross-entropy of the debiased network."""

    def __init__(self, q=0.7, epochs=15, lr=1e-3, batch_size=64,
                 widths=(16, 32, 64), mlp_hidden=35, seed=0):
        super().__init__(epochs, lr, batch_size, widths, mlp_hidden, seed)
        self.q = q

    def fit(self, train_dataset, spec, deployment=None):
        if len(np.unique(train_dataset.y)) < 2:
            raise ValidationError("training set must contain at least two classes")
        self._setup(train_dataset, spec)
        torch.manual_seed(self.seed + 1)
        self.biased_network_ = build_backbone(
            tuple(train_dataset.features.shape[1:]), spec.n_y, self.widths, self.mlp_hidden
        )
        rng = new_rng(self.seed)
        batch = _round_to_multiple(self.batch_size, spec.n_y)
        opt = torch.optim.Adam(self.network_.parameters(), lr=self.lr)
        opt_b = torch.optim.Adam(self.biased_network_.parameters(), lr=self.lr)
        for _ in range(self.epochs):
            for _ in range(self._steps_per_epoch(train_dataset, batch)):
                x, s, y = _balanced_batch(train_dataset, spec, batch, rng)
                opt_b.zero_grad()
                generalized_cross_entropy(self.biased_network_(x), y, self.q).backward()
                opt_b.step()

                opt.zero_grad()
                with torch.no_grad():
                    ce_b = F.cross_entropy(self.biased_network_(x), y, reduction="none")
                ce_d = F.cross_entropy(self.network_(x), y, reduction="none")
                weights = lff_weights(ce_b, ce_d.detach())
                (weights * ce_d).mean().backward()
                opt.step()
        self.network_.eval()
        return self


def george_joint_argmax(mu_y, mu_s) -> int:
    """Index of the strongest entry of vec(mu_y outer mu_s); the flat index
    follows the y * n_s + s source convention."""
    mu_y = np.asarray(mu_y, dtype=np.float64)
    mu_s = np.asarray(mu_s, dtype=np.float64)
    return int(np.argmax(np.outer(mu_y, mu_s).reshape(-1)))


class GeorgeClassifier(BaseEstimator):
    """Adapted GEORGE: factorized cluster heads propagate class labels to
    the deployment set, then group DRO trains on the union."""

    def __init__(self, cluster_config=None, head_epochs=20, gdro_step_size=0.01,
                 epochs=15, lr=1e-3, batch_size=64, widths=(16, 32, 64),
                 mlp_hidden=35, seed=0):
        self.cluster_config = cluster_config
        self.head_epochs = head_epochs
        self.gdro_step_size = gdro_step_size
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.widths = widths
        self.mlp_hidden = mlp_hidden
        self.seed = seed

    def fit(self, train_dataset, spec: SupportSpec, deployment=None):
        if deployment is None:
            raise ValidationError("GEORGE needs the deployment features")
        config = self.cluster_config or ClusterConfig(seed=self.seed)
        union = torch.cat([train_dataset.features, deployment.features])
        encoder, _ = pretrain_encoder(union, config)
        torch.manual_seed(self.seed + 2)
        mu_y = nn.Linear(config.embed_dim, spec.n_y)
        mu_s = nn.Linear(config.embed_dim, spec.n_s)
        params = list(encoder.parameters()) + list(mu_y.parameters()) + list(mu_s.parameters())
        opt = torch.optim.Adam(params, lr=config.lr)
        rng = new_rng(self.seed + 2)
        train_x, dep_x = train_dataset.features, deployment.features
        s_t = torch.from_numpy(train_dataset.s)
        y_t = torch.from_numpy(train_dataset.y)
        steps = max(1, (len(train_x) + len(dep_x)) // (2 * config.batch_size))
        for _ in range(self.head_epochs):
            for _ in range(steps):
                tr_idx = torch.from_numpy(rng.integers(len(train_x), size=config.batch_size))
                dep_idx = torch.from_numpy(rng.integers(len(dep_x), size=config.batch_size))
                opt.zero_grad()
                emb_tr = encoder(train_x[tr_idx])
                sup = F.cross_entropy(mu_y(emb_tr), y_t[tr_idx]) + F.cross_entropy(
                    mu_s(emb_tr), s_t[tr_idx]
                )
                emb_dep = encoder(dep_x[dep_idx])
                joint = (
                    F.softmax(mu_y(emb_dep), dim=-1).unsqueeze(2)
                    * F.softmax(mu_s(emb_dep), dim=-1).unsqueeze(1)
                ).flatten(1)
                targets = rank_pairwise_matrix(emb_dep, config.rank_depth)
                similarity = (joint @ joint.t()).clamp(1e-6, 1 - 1e-6)
                pair = F.binary_cross_entropy(similarity, targets)
                (sup + pair).backward()
                opt.step()

        with torch.no_grad():
            emb_dep = encoder(dep_x)
            probs_y = F.softmax(mu_y(emb_dep), dim=-1).numpy()
            probs_s = F.softmax(mu_s(emb_dep), dim=-1).numpy()
        y_dep = probs_y.argmax(axis=1)
        omega_dep = np.array(
            [george_joint_argmax(probs_y[i], probs_s[i]) for i in range(len(probs_y))]
        )
        self.deployment_predictions_ = y_dep
        self.deployment_clusters_ = omega_dep

        # Union of labeled training data and pseudo-labeled deployment data,
        # with group ids in the shared source indexing.
        union_x = torch.cat([train_x, dep_x])
        union_y = np.concatenate([train_dataset.y, y_dep])
        union_g = np.concatenate([train_dataset.y * spec.n_s + train_dataset.s, omega_dep])
        torch.manual_seed(self.seed + 3)
        self.network_ = build_backbone(tuple(union_x.shape[1:]), spec.n_y, self.widths, self.mlp_hidden)
        groups = sorted(set(union_g.tolist()))
        weight = torch.full((len(groups),), 1.0 / len(groups))
        gid = {g: i for i, g in enumerate(groups)}
        opt = torch.optim.Adam(self.network_.parameters(), lr=self.lr)
        union_y_t = torch.from_numpy(union_y)
        pools = {g: np.flatnonzero(union_g == g) for g in groups}
        per_group = max(2, self.batch_size // len(groups))
        steps = max(1, len(union_x) // (per_group * len(groups)))
        for _ in range(self.epochs):
            for _ in range(steps):
                idx = np.concatenate(
                    [rng.choice(pools[g], size=per_group, replace=len(pools[g]) < per_group)
                     for g in groups]
                )
                batch_idx = torch.from_numpy(idx)
                opt.zero_grad()
                per_sample = F.cross_entropy(
                    self.network_(union_x[batch_idx]), union_y_t[batch_idx], reduction="none"
                )
                g_ids = torch.tensor([gid[g] for g in union_g[idx]])
                group_losses = torch.zeros(len(groups))
                for g in g_ids.unique():
                    group_losses[g] = per_sample[g_ids == g].mean()
                with torch.no_grad():
                    weight = weight * torch.exp(self.gdro_step_size * group_losses)
                    weight = weight / weight.sum()
                (group_losses @ weight).backward()
                opt.step()
        self.network_.eval()
        return self

    def predict_proba(self, features) -> np.ndarray:
        features = torch.as_tensor(np.asarray(features), dtype=torch.float32)
        with torch.no_grad():
            return F.softmax(self.network_(features), dim=-1).numpy()

    def predict(self, features) -> np.ndarray:
        return self.predict_proba(features).argmax(axis=1)


def make_baseline(kind, **kwargs) -> BaseEstimator:
    kind = BaselineKind(kind)
    if kind is BaselineKind.ERM:
        return ErmClassifier(**kwargs)
    if kind is BaselineKind.ERM_LABEL_ORACLE:
        return ErmClassifier(label_oracle=True, **kwargs)
    if kind is BaselineKind.DRO:
        return DroClassifier(**kwargs)
    if kind is BaselineKind.GDRO:
        return GdroClassifier(**kwargs)
    if kind is BaselineKind.GDRO_LABEL_ORACLE:
        return GdroClassifier(label_oracle=True, **kwargs)
    if kind is BaselineKind.LFF:
        return LffClassifier(**kwargs)
    return GeorgeClassifier(**kwargs)
