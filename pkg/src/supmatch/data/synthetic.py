"""Synthetic Gaussian-source datasets, the desk-scale substrate for the
clustering-error harness and for property tests."""

from __future__ import annotations

import numpy as np

from ..exceptions import ValidationError
from ..validation import new_rng
from .datasets import LabeledDataset, UnlabeledDataset


def default_source_means(n_s: int, n_y: int, dim: int, spacing: float = 4.0) -> np.ndarray:
    """Well-separated means on a grid, one per source (index y * n_s + s)."""
    means = np.zeros((n_s * n_y, dim))
    for y in range(n_y):
        for s in range(n_s):
            idx = y * n_s + s
            means[idx, 0] = spacing * s
            means[idx, min(1, dim - 1)] += spacing * y
    return means


def sample_gmm_sources(n_s, n_y, dim, means, cov_scale, n_per_source, rng):
    means = np.asarray(means, dtype=np.float64)
    if means.shape[0] < n_s * n_y:
        raise ValidationError(
            f"need at least {n_s * n_y} means, got {means.shape[0]}"
        )
    if cov_scale < 0:
        raise ValidationError("covariance scale must be non-negative")
    xs, ss, ys = [], [], []
    for y in range(n_y):
        for s in range(n_s):
            mu = means[y * n_s + s]
            noise = np.zeros((n_per_source, dim))
            if cov_scale > 0:
                noise = rng.standard_normal((n_per_source, dim))
            xs.append(mu + np.sqrt(cov_scale) * noise)
            ss.append(np.full(n_per_source, s, dtype=np.int64))
            ys.append(np.full(n_per_source, y, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ss), np.concatenate(ys)


def build_synthetic_gmm(
    n_s=2, n_y=2, dim=2, means=None, cov_scale=0.25, n_per_source=100, seed=0
):
    """(train, deployment, test) drawn from isotropic Gaussian sources.

    All three splits carry every source; support restrictions are applied
    downstream with a bias table when a biased variant is wanted.
    """
    rng = new_rng(seed)
    if means is None:
        means = default_source_means(n_s, n_y, dim)
    x_tr, s_tr, y_tr = sample_gmm_sources(n_s, n_y, dim, means, cov_scale, n_per_source, rng)
    x_dep, s_dep, y_dep = sample_gmm_sources(n_s, n_y, dim, means, cov_scale, n_per_source, rng)
    x_te, s_te, y_te = sample_gmm_sources(n_s, n_y, dim, means, cov_scale, n_per_source, rng)
    train = LabeledDataset(x_tr, s_tr, y_tr, n_s, n_y)
    deployment = UnlabeledDataset(x_dep, s_dep, y_dep, n_s, n_y)
    test = LabeledDataset(x_te, s_te, y_te, n_s, n_y)
    return train, deployment, test
