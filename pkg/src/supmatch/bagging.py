"""Bag construction for the set discriminator.

Training bags follow the hierarchical rules: every class appears equally
often, subgroups are equally represented within full-support classes, and
slots belonging to missing sources are filled by same-class substitution.
Deployment bags are balanced per cluster, per hidden source (oracle), or
not at all. Samplers are stateless given (dataset, spec, rng); sampling is
with replacement across bags and without replacement within a bag whenever
the pool allows.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import SamplingError, StateError, ValidationError
from .hierarchy import SupportSpec, has_full_support
from .validation import new_rng


class BagOrigin(str, enum.Enum):
    TRAINING = "training"
    DEPLOYMENT = "deployment"


class BalancingScheme(str, enum.Enum):
    CLUSTER_BALANCED = "cluster_balanced"
    ORACLE_BALANCED = "oracle_balanced"
    UNBALANCED = "unbalanced"


@dataclass(frozen=True)
class Bag:
    indices: np.ndarray
    origin: BagOrigin

    def __len__(self):
        return len(self.indices)


def _split_evenly(total: int, n_groups: int, rng) -> np.ndarray:
    """Per-group counts summing to total; remainders round-robin from a
    seeded starting offset."""
    base, rem = divmod(total, n_groups)
    counts = np.full(n_groups, base, dtype=np.int64)
    if rem:
        start = int(rng.integers(n_groups))
        counts[(start + np.arange(rem)) % n_groups] += 1
    return counts


def _draw_from_pool(pool: np.ndarray, count: int, rng, what: str) -> np.ndarray:
    if count == 0:
        return np.empty(0, dtype=np.int64)
    if len(pool) == 0:
        raise SamplingError(f"empty pool for {what}")
    replace = len(pool) < count
    return rng.choice(pool, size=count, replace=replace)


def sample_train_bag(spec: SupportSpec, dataset, bag_size: int, rng) -> Bag:
    """One hierarchically balanced training bag."""
    rng = new_rng(rng)
    if bag_size % spec.n_y:
        raise ValidationError(f"bag_size={bag_size} not divisible by n_y={spec.n_y}")
    per_class = bag_size // spec.n_y
    chosen = []
    for y in range(spec.n_y):
        if has_full_support(spec, y):
            counts = _split_evenly(per_class, spec.n_s, rng)
            for s, count in enumerate(counts):
                pool = dataset.indices_for_source(s, y)
                chosen.append(_draw_from_pool(pool, int(count), rng, f"source (s={s}, y={y})"))
        else:
            support = np.array(sorted(spec.train_support[y]))
            # Each slot realizes the substitution map: subgroup drawn
            # uniformly over the observed support, then a sample from it.
            slot_subgroups = support[rng.integers(len(support), size=per_class)]
            for s in support:
                count = int((slot_subgroups == s).sum())
                pool = dataset.indices_for_source(int(s), y)
                chosen.append(_draw_from_pool(pool, count, rng, f"source (s={s}, y={y})"))
    return Bag(np.concatenate(chosen), BagOrigin.TRAINING)


def sample_deployment_bag(dataset, scheme: BalancingScheme, bag_size: int, rng) -> Bag:
    """One deployment bag under the given balancing scheme."""
    rng = new_rng(rng)
    scheme = BalancingScheme(scheme)
    if scheme is BalancingScheme.UNBALANCED:
        pool = np.arange(len(dataset))
        return Bag(_draw_from_pool(pool, bag_size, rng, "deployment set"), BagOrigin.DEPLOYMENT)

    if scheme is BalancingScheme.CLUSTER_BALANCED:
        if dataset.cluster_ids is None:
            raise StateError("cluster_balanced requires cluster assignments; run clustering first")
        groups = dataset.cluster_ids
        n_groups = int(groups.max()) + 1
        label = "cluster"
    else:  # oracle: the single code path allowed to read hidden labels
        with dataset.oracle_labels():
            groups = dataset.hidden_y * dataset.n_s + dataset.hidden_s
        n_groups = dataset.n_s * dataset.n_y
        label = "hidden source"

    if bag_size % n_groups:
        raise ValidationError(
            f"bag_size={bag_size} not divisible by the {n_groups} groups balanced over"
        )
    per_group = bag_size // n_groups
    chosen = []
    for g in range(n_groups):
        pool = np.flatnonzero(groups == g)
        chosen.append(_draw_from_pool(pool, per_group, rng, f"{label} {g}"))
    return Bag(np.concatenate(chosen), BagOrigin.DEPLOYMENT)


def sample_batch_of_bags(
    count: int,
    spec: SupportSpec = None,
    train_dataset=None,
    deployment_dataset=None,
    scheme: BalancingScheme = BalancingScheme.ORACLE_BALANCED,
    bag_size: int = 8,
    rng=None,
):
    """Draw ``count`` independent (train bag, deployment bag) pairs.

    Either side may be omitted by passing None for its dataset; bags are
    paired one-to-one within a step.
    """
    if count < 1:
        raise ValidationError("count must be at least 1")
    rng = new_rng(rng)
    train_bags, dep_bags = [], []
    for _ in range(count):
        if train_dataset is not None:
            train_bags.append(sample_train_bag(spec, train_dataset, bag_size, rng))
        if deployment_dataset is not None:
            dep_bags.append(sample_deployment_bag(deployment_dataset, scheme, bag_size, rng))
    if train_dataset is None:
        return dep_bags
    if deployment_dataset is None:
        return train_bags
    return train_bags, dep_bags


def bag_source_counts(bag: Bag, s: np.ndarray, y: np.ndarray, n_s: int, n_y: int) -> np.ndarray:
    """(n_s, n_y) matrix of source counts inside a bag, for tests and logs."""
    counts = np.zeros((n_s, n_y), dtype=np.int64)
    for idx in bag.indices:
        counts[s[idx], y[idx]] += 1
    return counts
