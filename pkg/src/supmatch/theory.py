"""Empirical harnesses for the two theoretical guarantees.

The first enumerates finite discrete constructions and verifies that when
the matched-conditional premise holds, the encoding carries no subgroup
information within any incomplete-support class (the posterior over
subgroups is exactly uniform). The second measures how the error of the
clustering-based estimate of the support-matching objective (a sum of
total variation distances) shrinks with the number of unlabeled samples
used to fit the Gaussian mixture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import ValidationError
from .hierarchy import SupportSpec, has_full_support, pi_set
from .metrics import tv_distance_arrays
from .validation import new_rng

# -- uniform-posterior check ------------------------------------------------


@dataclass
class DiscreteConstruction:
    """Finite joint tables over (z, s, y) for the posterior check.

    ``train`` and ``deployment`` are (n_z, n_s, n_y) joint probability
    tables; ``true`` is the underlying data distribution both are assumed
    to reweight. ``spec`` fixes the training support.
    """

    train: np.ndarray
    deployment: np.ndarray
    true: np.ndarray
    spec: SupportSpec

    def __post_init__(self):
        for name in ("train", "deployment", "true"):
            table = np.asarray(getattr(self, name), dtype=np.float64)
            if table.ndim != 3:
                raise ValidationError(f"{name} table must be 3-D (z, s, y)")
            if (table < 0).any() or not np.isclose(table.sum(), 1.0):
                raise ValidationError(f"{name} table must be a probability table")
            setattr(self, name, table / table.sum())


@dataclass
class Proposition1Report:
    premise_satisfied: bool
    premise_deviation: float
    posterior_deviation: float = None
    checked_classes: list = field(default_factory=list)
    skipped_classes: list = field(default_factory=list)

    @property
    def applicable(self) -> bool:
        return self.premise_satisfied

    def passed(self, tol: float = 1e-9) -> bool:
        if not self.premise_satisfied:
            return False
        if self.posterior_deviation is None:  # every class fully supported
            return True
        return self.posterior_deviation <= tol


def _conditional_over_z(table, s_set, y) -> np.ndarray:
    mass = table[:, sorted(s_set), y].sum(axis=1)
    total = mass.sum()
    if total <= 0:
        raise ValidationError(f"no probability mass for s in {sorted(s_set)}, y={y}")
    return mass / total


def check_proposition1(construction: DiscreteConstruction, premise_tol=1e-12) -> Proposition1Report:
    """Exhaustively verify the uniform-posterior conclusion.

    For every (s', y') the training conditional over z restricted to the
    substitution set must match the deployment conditional; when that
    premise holds, the posterior P(s | z, y) under the true distribution
    must be exactly uniform for every class with incomplete support.
    """
    spec = construction.spec
    premise_dev = 0.0
    for y in range(spec.n_y):
        for s in range(spec.n_s):
            p_cond = _conditional_over_z(construction.train, pi_set(spec, s, y), y)
            q_cond = _conditional_over_z(construction.deployment, {s}, y)
            premise_dev = max(premise_dev, float(np.abs(p_cond - q_cond).max()))
    premise_ok = premise_dev <= premise_tol

    checked, skipped = [], []
    posterior_dev = None
    for y in range(spec.n_y):
        if has_full_support(spec, y):
            skipped.append(y)
            continue
        checked.append(y)
        joint_zy = construction.true[:, :, y]  # (n_z, n_s)
        mass = joint_zy.sum(axis=1)
        rows = mass > 0
        posterior = joint_zy[rows] / mass[rows, None]
        deviation = float(np.abs(posterior - 1.0 / spec.n_s).max())
        posterior_dev = deviation if posterior_dev is None else max(posterior_dev, deviation)
    return Proposition1Report(
        premise_satisfied=premise_ok,
        premise_deviation=premise_dev,
        posterior_deviation=posterior_dev,
        checked_classes=checked,
        skipped_classes=skipped,
    )


def make_matched_construction(n_z: int, spec: SupportSpec, seed=0) -> DiscreteConstruction:
    """Random construction satisfying the matching premise.

    Incomplete classes share one conditional over z across all subgroups;
    full-support classes equate train and deployment conditionals per
    subgroup. The true distribution has a uniform subgroup prior per class.
    """
    rng = new_rng(seed)
    cond = np.empty((n_z, spec.n_s, spec.n_y))
    for y in range(spec.n_y):
        if has_full_support(spec, y):
            for s in range(spec.n_s):
                raw = rng.random(n_z) + 0.1
                cond[:, s, y] = raw / raw.sum()
        else:
            raw = rng.random(n_z) + 0.1
            cond[:, :, y] = (raw / raw.sum())[:, None]

    class_weights = rng.random(spec.n_y) + 0.5
    class_weights /= class_weights.sum()
    true = cond * (class_weights / spec.n_s)
    deployment = cond * (class_weights / spec.n_s)  # any positive weights work
    train = np.zeros_like(cond)
    for y in range(spec.n_y):
        support = sorted(spec.train_support[y])
        weights = rng.random(len(support)) + 0.5
        weights /= weights.sum()
        for w, s in zip(weights, support):
            train[:, s, y] = cond[:, s, y] * w * class_weights[y]
    return DiscreteConstruction(
        train=train / train.sum(),
        deployment=deployment / deployment.sum(),
        true=true / true.sum(),
        spec=spec,
    )


def make_violated_construction(n_z: int, spec: SupportSpec, seed=0) -> DiscreteConstruction:
    """Matched construction with one incomplete-class conditional skewed so
    the premise (and hence the conclusion) deliberately fails."""
    base = make_matched_construction(n_z, spec, seed)
    rng = new_rng(seed + 1)
    target_y = next((y for y in range(spec.n_y) if not has_full_support(spec, y)), None)
    if target_y is None:
        raise ValidationError("spec has no incomplete class to violate")
    dep = base.deployment.copy()
    true = base.true.copy()
    skew = rng.permutation(n_z)
    dep[:, 0, target_y] = dep[skew, 0, target_y] * 2.0 + 1e-3
    true[:, 0, target_y] = true[skew, 0, target_y] * 2.0 + 1e-3
    return DiscreteConstruction(
        train=base.train, deployment=dep / dep.sum(), true=true / true.sum(), spec=base.spec
    )


# -- mixture-estimation error scaling ---------------------------------------


@dataclass
class GaussianSourceMixture:
    """Known mixture of one isotropic Gaussian per source."""

    means: np.ndarray  # (n_sources, dim) indexed y * n_s + s
    cov_scale: float
    spec: SupportSpec

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.shape[0] != self.spec.n_sources:
            raise ValidationError("need one mean per source")
        if self.cov_scale <= 0:
            raise ValidationError("covariance scale must be positive")

    def sample(self, n: int, rng) -> np.ndarray:
        comp = rng.integers(self.spec.n_sources, size=n)
        return self.means[comp] + np.sqrt(self.cov_scale) * rng.standard_normal(
            (n, self.means.shape[1])
        )


def _gaussian_pdf(points, mean, cov) -> np.ndarray:
    from scipy.stats import multivariate_normal

    return multivariate_normal(mean=mean, cov=cov, allow_singular=True).pdf(points)


def _grid_cells(means, cov_scale, bins):
    dim = means.shape[1]
    radius = 3.5 * np.sqrt(cov_scale)
    lo = means.min(axis=0) - radius
    hi = means.max(axis=0) + radius
    axes = [np.linspace(lo[d], hi[d], bins + 1) for d in range(dim)]
    centers = [0.5 * (a[1:] + a[:-1]) for a in axes]
    mesh = np.meshgrid(*centers, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _normalized_density(points, mean, cov) -> np.ndarray:
    density = _gaussian_pdf(points, mean, cov)
    total = density.sum()
    if total <= 0:
        raise ValidationError("density vanished on the histogram grid")
    return density / total


@dataclass
class Theorem2Report:
    sample_sizes: list
    errors: dict  # N -> list of per-seed errors
    median_errors: dict
    slope: float

    def to_rows(self):
        return [
            {"n_samples": n, "seed": i, "error": e}
            for n in self.sample_sizes
            for i, e in enumerate(self.errors[n])
        ]


def estimate_tv_sum(q: GaussianSourceMixture, fitted_means, fitted_covs, p_means, bins=64):
    """TV-sum of the support-matching objective on a shared histogram grid,
    using the fitted components in place of the unknown true ones."""
    spec = q.spec
    cells = _grid_cells(np.vstack([q.means, p_means]), q.cov_scale, bins)
    total = 0.0
    for y in range(spec.n_y):
        for s in range(spec.n_s):
            sub = sorted(pi_set(spec, s, y))
            p_density = np.mean(
                [_normalized_density(cells, p_means[y * spec.n_s + ss], q.cov_scale) for ss in sub],
                axis=0,
            )
            k = y * spec.n_s + s
            q_density = _normalized_density(cells, fitted_means[k], fitted_covs[k])
            total += tv_distance_arrays(p_density, q_density)
    return total


def check_theorem2(
    mixture: GaussianSourceMixture,
    sample_sizes=(100, 1000, 10000, 100000),
    n_seeds=10,
    bins=64,
    p_shift=0.5,
    max_restarts=5,
) -> Theorem2Report:
    """Fit mixtures at each sample size and record the estimation error.

    The estimate substitutes EM-fitted components (k-means initialized,
    matched to true sources by the assignment optimum on means) for the
    true ones; the oracle uses the true components. Reports the log-log
    slope of the median error against the sample size.
    """
    from sklearn.mixture import GaussianMixture

    spec = mixture.spec
    dim = mixture.means.shape[1]
    p_means = mixture.means + p_shift  # any fixed reference distribution
    oracle = estimate_tv_sum(
        mixture, mixture.means, [np.eye(dim) * mixture.cov_scale] * spec.n_sources, p_means, bins
    )

    errors = {n: [] for n in sample_sizes}
    for n in sample_sizes:
        for seed in range(n_seeds):
            rng = new_rng((n, seed))
            samples = mixture.sample(n, rng)
            fitted = None
            for attempt in range(max_restarts):
                gm = GaussianMixture(
                    n_components=spec.n_sources,
                    covariance_type="full",
                    init_params="kmeans",
                    n_init=1,
                    random_state=seed * max_restarts + attempt,
                    reg_covar=1e-6,
                )
                gm.fit(samples)
                if np.isfinite(gm.means_).all() and gm.weights_.min() > 1e-8:
                    fitted = gm
                    break
            if fitted is None:
                raise ValidationError(f"EM degenerate after {max_restarts} restarts (N={n})")
            cost = np.linalg.norm(
                mixture.means[:, None, :] - fitted.means_[None, :, :], axis=-1
            )
            rows, cols = linear_sum_assignment(cost)
            matched_means = fitted.means_[cols]
            matched_covs = fitted.covariances_[cols]
            estimate = estimate_tv_sum(mixture, matched_means, matched_covs, p_means, bins)
            errors[n].append(abs(estimate - oracle))

    medians = {n: float(np.median(errors[n])) for n in sample_sizes}
    slope = float(
        np.polyfit(np.log10(list(sample_sizes)), np.log10([medians[n] for n in sample_sizes]), 1)[0]
    )
    return Theorem2Report(
        sample_sizes=list(sample_sizes), errors=errors, median_errors=medians, slope=slope
    )
