import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from supmatch.data import LabeledDataset
from supmatch.exceptions import DomainError, SamplingError, ValidationError
from supmatch.hierarchy import SupportSpec, has_full_support, pi_set, sample_pi

PURPLE, GREEN = 0, 1


def two_by_two_sb():
    # classes {2, 4} -> {0, 1}; the (purple, 4) source is missing
    return SupportSpec(n_s=2, n_y=2, train_support=(frozenset({0, 1}), frozenset({1})))


def toy_dataset(spec, per_source=5):
    features, ss, ys = [], [], []
    for y in range(spec.n_y):
        for s in sorted(spec.train_support[y]):
            for _ in range(per_source):
                features.append(np.full(3, y * 10.0 + s))
                ss.append(s)
                ys.append(y)
    return LabeledDataset(np.array(features), ss, ys, spec.n_s, spec.n_y)


class TestHasFullSupport:
    def test_full_class(self):
        assert has_full_support(two_by_two_sb(), 0) is True

    def test_incomplete_class(self):
        assert has_full_support(two_by_two_sb(), 1) is False

    def test_single_subgroup_always_full(self):
        spec = SupportSpec(n_s=1, n_y=2, train_support=(frozenset({0}), frozenset({0})))
        assert all(has_full_support(spec, y) for y in range(2))

    def test_invalid_class_index(self):
        with pytest.raises(DomainError):
            has_full_support(two_by_two_sb(), 5)


class TestPiSet:
    def test_full_support_returns_singleton(self):
        assert pi_set(two_by_two_sb(), PURPLE, 0) == {PURPLE}
        assert pi_set(two_by_two_sb(), GREEN, 0) == {GREEN}

    def test_missing_source_maps_to_observed_support(self):
        assert pi_set(two_by_two_sb(), PURPLE, 1) == {GREEN}

    def test_observed_source_in_incomplete_class_also_maps_to_support(self):
        assert pi_set(two_by_two_sb(), GREEN, 1) == {GREEN}

    @given(
        n_s=st.integers(2, 4),
        n_y=st.integers(2, 3),
        data=st.data(),
    )
    @settings(max_examples=50, deadline=None)
    def test_dichotomy(self, n_s, n_y, data):
        support = tuple(
            frozenset(
                data.draw(
                    st.sets(st.integers(0, n_s - 1), min_size=1, max_size=n_s),
                    label=f"support[{y}]",
                )
            )
            for y in range(n_y)
        )
        spec = SupportSpec(n_s=n_s, n_y=n_y, train_support=support)
        for y in range(n_y):
            for s in range(n_s):
                result = pi_set(spec, s, y)
                if has_full_support(spec, y):
                    assert result == {s}
                else:
                    assert result == spec.train_support[y]


class TestSamplePi:
    def test_full_support_draws_match_requested_source(self):
        spec = two_by_two_sb()
        ds = toy_dataset(spec)
        rng = np.random.default_rng(0)
        for _ in range(50):
            idx = sample_pi(spec, ds, GREEN, 0, rng)
            assert ds.s[idx] == GREEN and ds.y[idx] == 0

    def test_class_is_never_substituted(self):
        spec = two_by_two_sb()
        ds = toy_dataset(spec)
        rng = np.random.default_rng(1)
        for _ in range(100):
            idx = sample_pi(spec, ds, PURPLE, 1, rng)
            assert ds.y[idx] == 1
            assert ds.s[idx] in spec.train_support[1]

    def test_singleton_support_always_green(self):
        spec = two_by_two_sb()
        ds = toy_dataset(spec)
        rng = np.random.default_rng(2)
        draws = [ds.s[sample_pi(spec, ds, PURPLE, 1, rng)] for _ in range(200)]
        assert set(draws) == {GREEN}

    def test_two_element_support_uniform(self):
        # Missing source (c=2, y); substitution uniform over {a=0, b=1}.
        # Oracle: the exact multinomial confidence band for n=10000 draws of
        # a fair coin is +-2% around 50% at far beyond the 4-sigma level.
        spec = SupportSpec(
            n_s=3, n_y=2,
            train_support=(frozenset({0, 1, 2}), frozenset({0, 1})),
        )
        ds = toy_dataset(spec, per_source=4)
        rng = np.random.default_rng(3)
        draws = np.array([ds.s[sample_pi(spec, ds, 2, 1, rng)] for _ in range(10_000)])
        frac_a = (draws == 0).mean()
        assert abs(frac_a - 0.5) < 0.02
        assert set(np.unique(draws)) == {0, 1}

    def test_deterministic_per_seed(self):
        spec = two_by_two_sb()
        ds = toy_dataset(spec)
        draws_a = [sample_pi(spec, ds, s, y, np.random.default_rng(42))
                   for s in range(2) for y in range(2)]
        draws_b = [sample_pi(spec, ds, s, y, np.random.default_rng(42))
                   for s in range(2) for y in range(2)]
        assert draws_a == draws_b

    def test_empty_pool_names_missing_source(self):
        spec = two_by_two_sb()
        empty = LabeledDataset(np.zeros((2, 3)), [0, 1], [0, 0], 2, 2)
        with pytest.raises(SamplingError, match=r"s=1, y=1"):
            sample_pi(spec, empty, GREEN, 1, np.random.default_rng(0))


class TestSupportSpecConstruction:
    def test_from_data_observes_support(self):
        s = [0, 1, 1, 0, 1]
        y = [0, 0, 1, 0, 1]
        spec = SupportSpec.from_data(s, y)
        assert spec.train_support[0] == {0, 1}
        assert spec.train_support[1] == {1}

    def test_declared_must_cover_observed(self):
        with pytest.raises(ValidationError, match="declared"):
            SupportSpec.from_data([0, 1], [0, 0], 2, 1, declared={0: [0]})

    def test_declared_unobserved_source_rejected_eagerly(self):
        with pytest.raises(SamplingError, match="no training samples"):
            SupportSpec.from_data([1, 1], [0, 0], 2, 1, declared={0: [0, 1]})

    def test_wholly_absent_class_rejected(self):
        with pytest.raises(ValidationError, match="empty training support"):
            SupportSpec(n_s=2, n_y=2, train_support=(frozenset({0}), frozenset()))

    def test_config_round_trip(self):
        spec = two_by_two_sb()
        assert SupportSpec.from_config_dict(spec.to_config_dict()) == spec

    def test_source_index_convention(self):
        spec = two_by_two_sb()
        assert spec.source_index(s=1, y=1) == 1 * 2 + 1
        assert spec.missing_sources() == [(0, 1)]
