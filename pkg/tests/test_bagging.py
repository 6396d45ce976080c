import numpy as np
import pytest

from supmatch.bagging import (
    BagOrigin,
    BalancingScheme,
    bag_source_counts,
    sample_batch_of_bags,
    sample_deployment_bag,
    sample_train_bag,
)
from supmatch.data import LabeledDataset, UnlabeledDataset
from supmatch.exceptions import SamplingError, StateError, ValidationError
from supmatch.hierarchy import SupportSpec


def labeled(counts, n_s=2, n_y=2, seed=0):
    rng = np.random.default_rng(seed)
    xs, ss, ys = [], [], []
    for (s, y), n in counts.items():
        xs.append(rng.normal(size=(n, 3)))
        ss.extend([s] * n)
        ys.extend([y] * n)
    return LabeledDataset(np.concatenate(xs), ss, ys, n_s, n_y)


def deployment(counts, n_s=2, n_y=2, seed=0, cluster_ids=None):
    ds = labeled(counts, n_s, n_y, seed)
    return UnlabeledDataset(ds.features, ds.s, ds.y, n_s, n_y, cluster_ids)


SB_SPEC = SupportSpec(n_s=2, n_y=2, train_support=(frozenset({0, 1}), frozenset({1})))
FULL_SPEC = SupportSpec.full(2, 2)


class TestTrainBags:
    def test_sb_bag_counts_follow_substitution_rules(self):
        ds = labeled({(0, 0): 20, (1, 0): 20, (1, 1): 20, (0, 1): 0})
        bag = sample_train_bag(SB_SPEC, ds, bag_size=8, rng=np.random.default_rng(0))
        counts = bag_source_counts(bag, ds.s, ds.y, 2, 2)
        assert counts[0, 0] == 2 and counts[1, 0] == 2  # class 0 split evenly
        assert counts[1, 1] == 4 and counts[0, 1] == 0  # class 1 filled from support
        assert bag.origin is BagOrigin.TRAINING

    def test_full_support_bag_is_perfect(self):
        ds = labeled({(0, 0): 20, (1, 0): 20, (0, 1): 20, (1, 1): 20})
        bag = sample_train_bag(FULL_SPEC, ds, bag_size=8, rng=np.random.default_rng(1))
        counts = bag_source_counts(bag, ds.s, ds.y, 2, 2)
        assert (counts == 2).all()

    def test_class_counts_always_equal(self):
        ds = labeled({(0, 0): 30, (1, 0): 5, (1, 1): 30, (0, 1): 0})
        for seed in range(10):
            bag = sample_train_bag(SB_SPEC, ds, bag_size=12, rng=np.random.default_rng(seed))
            counts = bag_source_counts(bag, ds.s, ds.y, 2, 2)
            assert counts[:, 0].sum() == counts[:, 1].sum() == 6

    def test_never_samples_outside_training_support(self):
        ds = labeled({(0, 0): 10, (1, 0): 10, (1, 1): 10, (0, 1): 3})
        # source (0, 1) exists in the data but is outside the declared support
        for seed in range(20):
            bag = sample_train_bag(SB_SPEC, ds, bag_size=8, rng=np.random.default_rng(seed))
            counts = bag_source_counts(bag, ds.s, ds.y, 2, 2)
            assert counts[0, 1] == 0

    def test_indivisible_bag_size_rejected(self):
        ds = labeled({(0, 0): 4, (1, 0): 4, (1, 1): 4, (0, 1): 0})
        with pytest.raises(ValidationError, match="divisible"):
            sample_train_bag(SB_SPEC, ds, bag_size=7, rng=np.random.default_rng(0))

    def test_small_pool_falls_back_to_replacement(self):
        ds = labeled({(0, 0): 1, (1, 0): 1, (1, 1): 1, (0, 1): 0})
        bag = sample_train_bag(SB_SPEC, ds, bag_size=8, rng=np.random.default_rng(0))
        assert len(bag) == 8

    def test_within_bag_sampling_avoids_duplicates_when_pool_allows(self):
        ds = labeled({(0, 0): 100, (1, 0): 100, (1, 1): 100, (0, 1): 0})
        bag = sample_train_bag(SB_SPEC, ds, bag_size=8, rng=np.random.default_rng(2))
        per_source = {}
        for idx in bag.indices:
            per_source.setdefault((ds.s[idx], ds.y[idx]), []).append(idx)
        for indices in per_source.values():
            assert len(set(indices)) == len(indices)


class TestDeploymentBags:
    def test_oracle_bag_exactly_source_balanced(self):
        dep = deployment({(0, 0): 20, (1, 0): 5, (0, 1): 30, (1, 1): 8})
        bag = sample_deployment_bag(dep, "oracle_balanced", 8, np.random.default_rng(0))
        with dep.oracle_labels():
            counts = bag_source_counts(bag, dep.hidden_s, dep.hidden_y, 2, 2)
        assert (counts == 2).all()
        assert bag.origin is BagOrigin.DEPLOYMENT

    def test_cluster_bag_exactly_cluster_balanced(self):
        ids = np.arange(40) % 4
        dep = deployment({(0, 0): 10, (1, 0): 10, (0, 1): 10, (1, 1): 10}, cluster_ids=ids)
        bag = sample_deployment_bag(dep, "cluster_balanced", 8, np.random.default_rng(0))
        cluster_counts = np.bincount(ids[bag.indices], minlength=4)
        assert (cluster_counts == 2).all()

    def test_cluster_scheme_requires_assignments(self):
        dep = deployment({(0, 0): 5, (1, 0): 5, (0, 1): 5, (1, 1): 5})
        with pytest.raises(StateError):
            sample_deployment_bag(dep, "cluster_balanced", 8, np.random.default_rng(0))

    def test_unbalanced_matches_deployment_weights(self):
        # weights (0.7, 0.4, 0.2, 1.0) over sources, normalized; 10k bags of 8
        counts = {(0, 0): 700, (1, 0): 400, (0, 1): 200, (1, 1): 1000}
        dep = deployment(counts)
        rng = np.random.default_rng(3)
        totals = np.zeros((2, 2))
        n_bags = 10_000 // 8
        for _ in range(n_bags):
            bag = sample_deployment_bag(dep, "unbalanced", 8, rng)
            with dep.oracle_labels():
                totals += bag_source_counts(bag, dep.hidden_s, dep.hidden_y, 2, 2)
        frequencies = totals / totals.sum()
        weights = np.array([[700, 200], [400, 1000]]) / 2300
        assert np.abs(frequencies - weights).max() < 0.02

    def test_perfect_clustering_equals_oracle_distribution(self):
        counts = {(0, 0): 50, (1, 0): 30, (0, 1): 40, (1, 1): 60}
        base = labeled(counts)
        source_ids = base.y * 2 + base.s
        dep = deployment(counts, cluster_ids=source_ids)
        rng_a, rng_b = np.random.default_rng(11), np.random.default_rng(11)
        bag_cluster = sample_deployment_bag(dep, "cluster_balanced", 8, rng_a)
        bag_oracle = sample_deployment_bag(dep, "oracle_balanced", 8, rng_b)
        with dep.oracle_labels():
            c1 = bag_source_counts(bag_cluster, dep.hidden_s, dep.hidden_y, 2, 2)
            c2 = bag_source_counts(bag_oracle, dep.hidden_s, dep.hidden_y, 2, 2)
        assert (c1 == c2).all()

    def test_oracle_is_only_scheme_reading_hidden_labels(self):
        ids = np.arange(20) % 4
        dep = deployment({(0, 0): 5, (1, 0): 5, (0, 1): 5, (1, 1): 5}, cluster_ids=ids)
        rng = np.random.default_rng(0)
        sample_deployment_bag(dep, "cluster_balanced", 8, rng)
        sample_deployment_bag(dep, "unbalanced", 8, rng)
        assert dep.oracle_reads == 0
        sample_deployment_bag(dep, "oracle_balanced", 8, rng)
        assert dep.oracle_reads == 1

    def test_indivisible_bag_size_rejected(self):
        dep = deployment({(0, 0): 5, (1, 0): 5, (0, 1): 5, (1, 1): 5})
        with pytest.raises(ValidationError, match="divisible"):
            sample_deployment_bag(dep, "oracle_balanced", 6, np.random.default_rng(0))


class TestBatchOfBags:
    def test_count_and_determinism(self):
        train = labeled({(0, 0): 20, (1, 0): 20, (1, 1): 20, (0, 1): 0})
        dep = deployment({(0, 0): 20, (1, 0): 20, (0, 1): 20, (1, 1): 20})
        a_tr, a_dep = sample_batch_of_bags(
            4, SB_SPEC, train, dep, BalancingScheme.ORACLE_BALANCED, 8, np.random.default_rng(5)
        )
        b_tr, b_dep = sample_batch_of_bags(
            4, SB_SPEC, train, dep, BalancingScheme.ORACLE_BALANCED, 8, np.random.default_rng(5)
        )
        assert len(a_tr) == len(a_dep) == 4
        for x, y in zip(a_tr + a_dep, b_tr + b_dep):
            assert np.array_equal(x.indices, y.indices)

    def test_zero_count_rejected(self):
        with pytest.raises(ValidationError):
            sample_batch_of_bags(0)
