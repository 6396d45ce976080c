"""Dataset containers and per-source biasing utilities.

Features are float32 torch tensors (images: C x H x W in [0, 1]; tabular:
flat vectors); labels are dense zero-based integer arrays. Deployment data
keeps its labels hidden: training code can only reach them through the
explicit ``oracle_labels`` gate, which is audited so tests can assert that
no other path touched them.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np
import torch

from ..exceptions import HiddenLabelError, ValidationError
from ..validation import check_label_array, check_proportion, check_same_length, new_rng


def _as_feature_tensor(features) -> torch.Tensor:
    t = torch.as_tensor(features, dtype=torch.float32)
    if t.ndim == 4 and (t.min() < 0.0 or t.max() > 1.0):
        raise ValidationError("image features must lie in [0, 1]")
    return t


class LabeledDataset:
    """Immutable (x, s, y) triples with per-source index pools."""

    def __init__(self, features, s, y, n_s=None, n_y=None):
        self.features = _as_feature_tensor(features)
        s = np.asarray(s, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        check_same_length("features", self.features, "s", s)
        check_same_length("s", s, "y", y)
        self.n_s = int(n_s) if n_s is not None else (int(s.max()) + 1 if len(s) else 0)
        self.n_y = int(n_y) if n_y is not None else (int(y.max()) + 1 if len(y) else 0)
        self.s = check_label_array(s, max(self.n_s, 1), "s")
        self.y = check_label_array(y, max(self.n_y, 1), "y")
        self._pools = {}
        for si in range(self.n_s):
            for yi in range(self.n_y):
                self._pools[(si, yi)] = np.flatnonzero((self.s == si) & (self.y == yi))

    def __len__(self):
        return len(self.s)

    def indices_for_source(self, s: int, y: int) -> np.ndarray:
        return self._pools[(int(s), int(y))]

    def source_counts(self) -> dict:
        return {key: len(pool) for key, pool in self._pools.items()}

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.features[indices], self.s[indices], self.y[indices], self.n_s, self.n_y
        )


class UnlabeledDataset:
    """Deployment features with hidden labels and optional cluster ids.

    ``hidden_s`` / ``hidden_y`` raise unless accessed inside the
    ``oracle_labels`` context manager; every unlock is counted in
    ``oracle_reads`` so the single-permitted-path invariant is testable.
    """

    def __init__(self, features, hidden_s, hidden_y, n_s=None, n_y=None, cluster_ids=None):
        self.features = _as_feature_tensor(features)
        hs = np.asarray(hidden_s, dtype=np.int64)
        hy = np.asarray(hidden_y, dtype=np.int64)
        check_same_length("features", self.features, "hidden_s", hs)
        check_same_length("hidden_s", hs, "hidden_y", hy)
        self.n_s = int(n_s) if n_s is not None else (int(hs.max()) + 1 if len(hs) else 0)
        self.n_y = int(n_y) if n_y is not None else (int(hy.max()) + 1 if len(hy) else 0)
        self._hidden_s = check_label_array(hs, max(self.n_s, 1), "hidden_s")
        self._hidden_y = check_label_array(hy, max(self.n_y, 1), "hidden_y")
        self.cluster_ids = None
        if cluster_ids is not None:
            self.cluster_ids = np.asarray(cluster_ids, dtype=np.int64)
            check_same_length("features", self.features, "cluster_ids", self.cluster_ids)
        self._unlocked = False
        self.oracle_reads = 0

    def __len__(self):
        return len(self._hidden_s)

    @property
    def hidden_s(self) -> np.ndarray:
        if not self._unlocked:
            raise HiddenLabelError(
                "hidden subgroup labels may only be read inside oracle_labels()"
            )
        return self._hidden_s

    @property
    def hidden_y(self) -> np.ndarray:
        if not self._unlocked:
            raise HiddenLabelError(
                "hidden class labels may only be read inside oracle_labels()"
            )
        return self._hidden_y

    @contextlib.contextmanager
    def oracle_labels(self):
        """Unlock hidden labels for oracle balancing or evaluation."""
        self.oracle_reads += 1
        previous = self._unlocked
        self._unlocked = True
        try:
            yield self
        finally:
            self._unlocked = previous

    def with_cluster_ids(self, cluster_ids) -> "UnlabeledDataset":
        out = UnlabeledDataset(
            self.features, self._hidden_s, self._hidden_y, self.n_s, self.n_y, cluster_ids
        )
        return out

    def as_labeled(self) -> LabeledDataset:
        """Evaluation-only view exposing the hidden labels."""
        with self.oracle_labels():
            return LabeledDataset(self.features, self.hidden_s, self.hidden_y, self.n_s, self.n_y)


@dataclass(frozen=True)
class BiasTable:
    """Per-source proportion retained when subsampling a split."""

    proportions: dict = field(default_factory=dict)  # (s, y) -> fraction in [0, 1]

    def __post_init__(self):
        for (s, y), p in self.proportions.items():
            check_proportion(p, f"proportion for source (s={s}, y={y})")

    def proportion(self, s: int, y: int) -> float:
        key = (int(s), int(y))
        if key not in self.proportions:
            raise ValidationError(f"bias table has no entry for source (s={s}, y={y})")
        return self.proportions[key]

    def to_json_dict(self) -> dict:
        return {f"{s},{y}": p for (s, y), p in sorted(self.proportions.items())}


def apply_bias(dataset: LabeledDataset, table: BiasTable, seed) -> LabeledDataset:
    """Subsample each source without replacement, keeping round(p * n) samples."""
    rng = new_rng(seed)
    keep = []
    for (s, y), pool in sorted(dataset._pools.items()):
        p = table.proportion(s, y)
        n_keep = int(round(p * len(pool)))
        if n_keep > 0:
            keep.append(rng.choice(pool, size=n_keep, replace=False))
    if not keep:
        raise ValidationError("bias table removed every sample")
    indices = np.sort(np.concatenate(keep))
    return dataset.subset(indices)


def balance_test_set(dataset: LabeledDataset, seed) -> LabeledDataset:
    """Equalize all source counts at the minimum source count."""
    counts = dataset.source_counts()
    empty = [key for key, n in counts.items() if n == 0]
    if empty:
        raise ValidationError(f"cannot balance: empty sources {sorted(empty)}")
    floor = min(counts.values())
    rng = new_rng(seed)
    keep = [
        rng.choice(pool, size=floor, replace=False)
        for _, pool in sorted(dataset._pools.items())
    ]
    return dataset.subset(np.sort(np.concatenate(keep)))
