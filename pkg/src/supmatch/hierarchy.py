"""Two-level label hierarchy and training-support bookkeeping.

The data carries a class label ``y`` (first level) and a subgroup label
``s`` (second level); a (subgroup, class) pair is called a *source*.
``SupportSpec`` records which subgroups each class co-occurs with in the
labeled training set, and drives all balanced sampling: a class whose
observed support covers every subgroup is sampled as-is, while a class
with gaps has its missing sources substituted by same-class sources drawn
uniformly over the observed support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, SamplingError, ValidationError
from .validation import check_label, check_label_array, new_rng


@dataclass(frozen=True)
class SupportSpec:
    """Label-space sizes and the per-class training support map.

    ``train_support[y]`` is the frozenset of subgroup indices observed for
    class ``y`` in the training set. Immutable after construction and safe
    to share across concurrent readers.
    """

    n_s: int
    n_y: int
    train_support: tuple

    def __post_init__(self):
        if self.n_s < 1 or self.n_y < 1:
            raise ValidationError("n_s and n_y must be at least 1")
        if len(self.train_support) != self.n_y:
            raise ValidationError(
                f"train_support has {len(self.train_support)} entries, expected n_y={self.n_y}"
            )
        frozen = []
        for y, subgroups in enumerate(self.train_support):
            subgroups = frozenset(int(s) for s in subgroups)
            if not subgroups:
                # A class with no observed subgroup at all is rejected here:
                # downstream substitution has nothing to draw from.
                raise ValidationError(f"class {y} has empty training support")
            if any(s < 0 or s >= self.n_s for s in subgroups):
                raise DomainError(f"train_support[{y}] contains invalid subgroup indices")
            frozen.append(subgroups)
        object.__setattr__(self, "train_support", tuple(frozen))

    # -- construction -------------------------------------------------

    @classmethod
    def from_data(cls, s, y, n_s=None, n_y=None, declared=None) -> "SupportSpec":
        """Build a spec from observed training labels.

        ``declared`` optionally maps class index -> iterable of subgroup
        indices; it must be a superset of the observed support for every
        class (and, because empty source pools are rejected eagerly, in
        practice must coincide with it).
        """
        s = np.asarray(s, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        if len(s) != len(y):
            raise ValidationError("s and y must have equal length")
        if len(y) == 0:
            raise ValidationError("cannot infer support from an empty dataset")
        n_s = int(n_s) if n_s is not None else int(s.max()) + 1
        n_y = int(n_y) if n_y is not None else int(y.max()) + 1
        check_label_array(s, n_s, "s")
        check_label_array(y, n_y, "y")

        observed = [frozenset(np.unique(s[y == cls]).tolist()) for cls in range(n_y)]
        if declared is not None:
            for cls in range(n_y):
                decl = frozenset(int(v) for v in declared.get(cls, ()))
                obs = observed[cls]
                if not obs <= decl:
                    raise ValidationError(
                        f"declared support for class {cls} is {sorted(decl)} but "
                        f"subgroups {sorted(obs - decl)} were observed in the data"
                    )
                if decl - obs:
                    # Declared-but-unobserved sources would have empty pools.
                    raise SamplingError(
                        f"declared support for class {cls} includes subgroups "
                        f"{sorted(decl - obs)} with no training samples"
                    )
            observed = [frozenset(int(v) for v in declared.get(cls, ())) for cls in range(n_y)]
        return cls(n_s=n_s, n_y=n_y, train_support=tuple(observed))

    @classmethod
    def full(cls, n_s: int, n_y: int) -> "SupportSpec":
        """Spec in which every class has complete subgroup support."""
        everything = frozenset(range(n_s))
        return cls(n_s=n_s, n_y=n_y, train_support=tuple(everything for _ in range(n_y)))

    # -- queries -------------------------------------------------------

    @property
    def n_sources(self) -> int:
        return self.n_s * self.n_y

    def source_index(self, s: int, y: int) -> int:
        """Dense index of source (s, y); the fixed mapping is y * n_s + s."""
        return check_label(y, self.n_y, "y") * self.n_s + check_label(s, self.n_s, "s")

    def source_pairs(self):
        """All (s, y) pairs in source_index order."""
        return [(s, y) for y in range(self.n_y) for s in range(self.n_s)]

    def missing_sources(self):
        return [
            (s, y)
            for y in range(self.n_y)
            for s in range(self.n_s)
            if s not in self.train_support[y]
        ]

    def to_config_dict(self) -> dict:
        return {
            "n_s": self.n_s,
            "n_y": self.n_y,
            "train_support": {y: sorted(self.train_support[y]) for y in range(self.n_y)},
        }

    @classmethod
    def from_config_dict(cls, block: dict) -> "SupportSpec":
        support = {int(k): v for k, v in block["train_support"].items()}
        return cls(
            n_s=int(block["n_s"]),
            n_y=int(block["n_y"]),
            train_support=tuple(support[y] for y in range(int(block["n_y"]))),
        )


def has_full_support(spec: SupportSpec, y: int) -> bool:
    """True iff class y co-occurs with every subgroup in the training set."""
    y = check_label(y, spec.n_y, "y")
    return len(spec.train_support[y]) == spec.n_s


def pi_set(spec: SupportSpec, s: int, y: int) -> frozenset:
    """Subgroup identifiers that stand in for (s, y) on the training side.

    Returns {s} when class y has full support, otherwise the whole observed
    support of y — the missing source is substituted by same-class sources.
    """
    s = check_label(s, spec.n_s, "s")
    if has_full_support(spec, y):
        return frozenset({s})
    return spec.train_support[y]


def sample_pi(spec: SupportSpec, dataset, s: int, y: int, rng) -> int:
    """Draw one training-set index realizing the substitution map for (s, y).

    For a full-support class the draw is uniform over source (s, y). For an
    incomplete class a subgroup is first drawn uniformly over the class's
    observed support, then an index uniformly from that source.
    """
    rng = new_rng(rng)
    s = check_label(s, spec.n_s, "s")
    y = check_label(y, spec.n_y, "y")
    if has_full_support(spec, y):
        chosen = s
    else:
        support = sorted(spec.train_support[y])
        chosen = support[rng.integers(len(support))]
    pool = dataset.indices_for_source(chosen, y)
    if len(pool) == 0:
        raise SamplingError(f"no training samples for source (s={chosen}, y={y})")
    return int(pool[rng.integers(len(pool))])
