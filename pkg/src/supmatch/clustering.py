"""Semi-supervised clustering of the deployment set.

An autoencoder-pretrained embedding feeds a K-way cluster head trained
with three signals: supervised cross-entropy on labeled training samples
(source (s, y) mapped to cluster index y * n_s + s), pairwise binary
cross-entropy on deployment pairs pseudo-labeled by rank statistics
(equality of the top-U embedding coordinates), and cosine consistency
between the embeddings of a sample and a lightly perturbed copy. The
resulting assignments stratify the deployment set into balanced bags
without associating clusters to particular labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .exceptions import TrainingError, ValidationError
from .model import ConvDecoder, ConvEncoder, MlpDecoder, MlpEncoder
from .validation import new_rng


@dataclass
class ClusterConfig:
    n_clusters: int = None  # default: n_s * n_y
    rank_depth: int = 5  # U: how many top coordinates must agree
    embed_dim: int = 32
    hidden: tuple = (32, 64)
    level_depth: int = 1
    pretrain_epochs: int = 20
    cluster_epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    perturb_scale: float = 0.05
    seed: int = 0


class ClusterModel(nn.Module):
    """Embedding encoder plus a K-way probability head."""

    def __init__(self, encoder: nn.Module, embed_dim: int, n_clusters: int, rank_depth: int):
        super().__init__()
        if rank_depth > embed_dim:
            raise ValidationError("rank depth cannot exceed the embedding dimension")
        self.encoder = encoder
        self.head = nn.Linear(embed_dim, n_clusters)
        self.n_clusters = n_clusters
        self.rank_depth = rank_depth

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def probabilities(self, x: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.head(self.embed(x)), dim=-1)


@dataclass
class ClusterAssignment:
    clusters: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        self.clusters = np.asarray(self.clusters, dtype=np.int64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)


def _build_autoencoder(feature_shape, config: ClusterConfig):
    if len(feature_shape) == 3:
        encoder = ConvEncoder(
            feature_shape[0], feature_shape[1], config.hidden, config.level_depth, config.embed_dim
        )
        decoder = ConvDecoder(
            feature_shape[0], encoder.out_shape, config.hidden, config.level_depth, config.embed_dim
        )
    else:
        encoder = MlpEncoder(feature_shape[0], list(config.hidden), config.embed_dim)
        decoder = MlpDecoder(feature_shape[0], list(config.hidden), config.embed_dim)
    return encoder, decoder


def pretrain_encoder(features: torch.Tensor, config: ClusterConfig, seed=None):
    """Reconstruction pretraining on the union of training and deployment
    features; returns (encoder, per-epoch mean losses)."""
    seed = config.seed if seed is None else seed
    torch.manual_seed(seed)
    rng = new_rng(seed)
    encoder, decoder = _build_autoencoder(tuple(features.shape[1:]), config)
    if config.pretrain_epochs == 0:
        return encoder, []
    opt = torch.optim.Adam(list(encoder.parameters()) + list(decoder.parameters()), lr=config.lr)
    epoch_losses = []
    n = len(features)
    for _ in range(config.pretrain_epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = features[torch.from_numpy(order[start : start + config.batch_size])]
            opt.zero_grad()
            recon = decoder(encoder(batch))
            loss = F.mse_loss(recon, batch)
            loss.backward()
            opt.step()
            losses.append(float(loss))
        mean_loss = float(np.mean(losses))
        if not math.isfinite(mean_loss):
            raise TrainingError("autoencoder pretraining diverged (non-finite loss)")
        epoch_losses.append(mean_loss)
    return encoder, epoch_losses


def rank_pairwise_label(e1, e2, rank_depth: int) -> bool:
    """True iff the top-U coordinates (by magnitude) of both embeddings
    form the same set."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ValidationError("embeddings must share a dimension")
    if rank_depth > e1.shape[-1]:
        raise ValidationError("rank depth exceeds embedding dimension")
    top1 = set(np.argsort(-np.abs(e1))[:rank_depth].tolist())
    top2 = set(np.argsort(-np.abs(e2))[:rank_depth].tolist())
    return top1 == top2


def rank_pairwise_matrix(embeddings: torch.Tensor, rank_depth: int) -> torch.Tensor:
    """Pairwise rank-statistics pseudo-labels for one batch (n, n)."""
    mags = embeddings.detach().abs()
    top = torch.topk(mags, rank_depth, dim=-1).indices
    masks = torch.zeros(embeddings.shape[0], embeddings.shape[1], dtype=torch.bool)
    masks.scatter_(1, top, True)
    same = (masks.unsqueeze(1) == masks.unsqueeze(0)).all(dim=-1)
    return same.float()


def _perturb(batch: torch.Tensor, scale: float, rng) -> torch.Tensor:
    if batch.ndim == 4:  # images: small random shift
        dx, dy = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
        return torch.roll(batch, shifts=(dy, dx), dims=(2, 3))
    noise = torch.from_numpy(rng.normal(0.0, scale, batch.shape).astype(np.float32))
    return batch + noise


def train_cluster_head(
    encoder: nn.Module,
    train_dataset,
    deployment_dataset,
    spec,
    config: ClusterConfig,
) -> ClusterModel:
    """Train the K-way head (jointly fine-tuning the embedding)."""
    n_clusters = config.n_clusters or spec.n_s * spec.n_y
    if n_clusters < spec.n_s * spec.n_y:
        raise ValidationError(
            f"n_clusters={n_clusters} below the {spec.n_s * spec.n_y} source combinations"
        )
    torch.manual_seed(config.seed + 1)
    rng = new_rng(config.seed + 1)
    model = ClusterModel(encoder, config.embed_dim, n_clusters, config.rank_depth)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)

    train_x = train_dataset.features
    train_sources = torch.from_numpy(train_dataset.y * spec.n_s + train_dataset.s)
    dep_x = deployment_dataset.features
    steps_per_epoch = max(1, (len(train_x) + len(dep_x)) // (2 * config.batch_size))
    for _ in range(config.cluster_epochs):
        for _ in range(steps_per_epoch):
            tr_idx = torch.from_numpy(rng.integers(len(train_x), size=config.batch_size))
            dep_idx = torch.from_numpy(rng.integers(len(dep_x), size=config.batch_size))
            tr_batch, dep_batch = train_x[tr_idx], dep_x[dep_idx]

            opt.zero_grad()
            sup = F.cross_entropy(model.head(model.embed(tr_batch)), train_sources[tr_idx])

            dep_embed = model.embed(dep_batch)
            targets = rank_pairwise_matrix(dep_embed, config.rank_depth)
            probs = F.softmax(model.head(dep_embed), dim=-1)
            similarity = (probs @ probs.t()).clamp(1e-6, 1 - 1e-6)
            pair = F.binary_cross_entropy(similarity, targets)

            perturbed = model.embed(_perturb(dep_batch, config.perturb_scale, rng))
            consistency = 1.0 - F.cosine_similarity(dep_embed, perturbed, dim=-1).mean()

            loss = sup + pair + consistency
            if not torch.isfinite(loss):
                raise TrainingError("cluster-head training diverged (non-finite loss)")
            loss.backward()
            opt.step()
    model.eval()
    return model


def assign_clusters(model: ClusterModel, deployment_dataset) -> ClusterAssignment:
    """Argmax cluster per deployment sample; ties break to the lowest index."""
    with torch.no_grad():
        probs = model.probabilities(deployment_dataset.features)
    clusters = probs.argmax(dim=-1).numpy()
    confidence = probs.max(dim=-1).values.numpy()
    return ClusterAssignment(clusters=clusters, confidence=confidence)


def clustering_accuracy(assignment: ClusterAssignment, hidden_sources) -> float:
    """Accuracy under the optimal one-to-one cluster-to-source matching."""
    hidden_sources = np.asarray(hidden_sources, dtype=np.int64)
    n_sources = int(hidden_sources.max()) + 1
    n_clusters = max(int(assignment.clusters.max()) + 1, n_sources)
    if assignment.clusters.shape != hidden_sources.shape:
        raise ValidationError("assignment and hidden sources must align")
    contingency = np.zeros((n_clusters, n_sources), dtype=np.int64)
    np.add.at(contingency, (assignment.clusters, hidden_sources), 1)
    rows, cols = linear_sum_assignment(contingency, maximize=True)
    return float(contingency[rows, cols].sum() / len(hidden_sources))


def fit_clustering(train_dataset, deployment_dataset, spec, config: ClusterConfig):
    """Pretrain, train the head, and assign: the full clustering stage.

    Returns (model, assignment).
    """
    union = torch.cat([train_dataset.features, deployment_dataset.features])
    encoder, _ = pretrain_encoder(union, config)
    model = train_cluster_head(encoder, train_dataset, deployment_dataset, spec, config)
    return model, assign_clusters(model, deployment_dataset)


def save_assignments(path, assignment: ClusterAssignment) -> None:
    """Persist per-sample assignments as JSON lines."""
    with Path(path).open("w") as fh:
        for i, (cluster, conf) in enumerate(zip(assignment.clusters, assignment.confidence)):
            fh.write(json.dumps({"index": i, "cluster": int(cluster), "confidence": float(conf)}) + "\n")


def load_assignments(path) -> ClusterAssignment:
    clusters, confidence = [], []
    with Path(path).open() as fh:
        for line in fh:
            record = json.loads(line)
            clusters.append(record["cluster"])
            confidence.append(record["confidence"])
    return ClusterAssignment(clusters=np.array(clusters), confidence=np.array(confidence))
