"""Evaluation metrics: robust accuracy, folded rate ratios, discrete HGR
maximal correlation, total variation distance, and the per-run report."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ValidationError
from .validation import check_same_length


def accuracy(predictions, y) -> float:
    predictions = np.asarray(predictions)
    y = np.asarray(y)
    check_same_length("predictions", predictions, "y", y)
    if len(y) == 0:
        raise ValidationError("cannot score an empty prediction set")
    return float((predictions == y).mean())


def per_subgroup_accuracy(predictions, y, s) -> np.ndarray:
    predictions, y, s = map(np.asarray, (predictions, y, s))
    out = []
    for group in range(int(s.max()) + 1):
        mask = s == group
        if not mask.any():
            raise ValidationError(f"subgroup {group} is empty")
        out.append((predictions[mask] == y[mask]).mean())
    return np.array(out)


def robust_accuracy(predictions, y, s) -> float:
    """Minimum accuracy over the subgroups."""
    return float(per_subgroup_accuracy(predictions, y, s).min())


def fold_ratio(a: float, b: float):
    """Ratio folded into (0, 1]: the larger value is the denominator.

    A zero denominator after folding is reported as 0.0 with a flag.
    """
    if a == 0.0 and b == 0.0:
        return 0.0, True
    if max(a, b) == 0.0:
        return 0.0, True
    return float(min(a, b) / max(a, b)), False


def _binary_rates(predictions, y, s, kind: str) -> np.ndarray:
    rates = []
    for group in range(int(s.max()) + 1):
        mask = s == group
        if kind == "pr":
            sel = mask
            hit = predictions[sel] == 1
        elif kind == "tpr":
            sel = mask & (y == 1)
            hit = predictions[sel] == 1
        elif kind == "tnr":
            sel = mask & (y == 0)
            hit = predictions[sel] == 0
        else:
            raise ValidationError(f"unknown rate kind {kind!r}")
        rates.append(hit.mean() if sel.any() else np.nan)
    return np.array(rates)


@dataclass(frozen=True)
class RateRatios:
    positive_rate_ratio: float
    tpr_ratio: float
    tnr_ratio: float
    flagged: tuple = ()


def rate_ratios(predictions, y, s) -> RateRatios:
    """Folded positive-rate / TPR / TNR ratios between the two subgroups."""
    predictions, y, s = map(lambda a: np.asarray(a, dtype=np.int64), (predictions, y, s))
    for name, arr in (("predictions", predictions), ("y", y), ("s", s)):
        if set(np.unique(arr)) - {0, 1}:
            raise ValidationError(f"rate_ratios requires binary labels, got non-binary {name}")
    values, flagged = {}, []
    for kind, name in (("pr", "positive_rate_ratio"), ("tpr", "tpr_ratio"), ("tnr", "tnr_ratio")):
        r = _binary_rates(predictions, y, s, kind)
        value, flag = fold_ratio(r[0], r[1])
        values[name] = value
        if flag:
            flagged.append(name)
    return RateRatios(flagged=tuple(flagged), **values)


def pairwise_extremes_from_rates(rates) -> tuple:
    """(min folded ratio, max absolute difference) over all subgroup pairs."""
    rates = np.asarray(rates, dtype=np.float64)
    if len(rates) < 2:
        raise ValidationError("need at least two subgroups")
    ratio_min, diff_max = 1.0, 0.0
    for i in range(len(rates)):
        for j in range(i + 1, len(rates)):
            value, _ = fold_ratio(rates[i], rates[j])
            ratio_min = min(ratio_min, value)
            diff_max = max(diff_max, abs(rates[i] - rates[j]))
    return float(ratio_min), float(diff_max)


def pairwise_extremes(predictions, y, s, kind: str = "tpr") -> tuple:
    """Pairwise min-ratio / max-difference of a per-subgroup rate."""
    predictions, y, s = map(lambda a: np.asarray(a, dtype=np.int64), (predictions, y, s))
    return pairwise_extremes_from_rates(_binary_rates(predictions, y, s, kind))


def hgr_discrete(a, b) -> float:
    """Maximal correlation of two discrete variables.

    Computed exactly as the second-largest singular value of
    Q[i, j] = P(i, j) / sqrt(P(i) P(j)); zero-probability categories are
    dropped with a warning.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    check_same_length("a", a, "b", b)
    joint = np.zeros((int(a.max()) + 1, int(b.max()) + 1))
    np.add.at(joint, (a, b), 1.0)
    joint /= joint.sum()
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)
    if (pa == 0).any() or (pb == 0).any():
        warnings.warn("dropping zero-probability categories in HGR computation")
        joint = joint[pa > 0][:, pb > 0]
        pa, pb = pa[pa > 0], pb[pb > 0]
    q = joint / np.sqrt(np.outer(pa, pb))
    singular = np.linalg.svd(q, compute_uv=False)
    if len(singular) < 2:
        return 0.0
    return float(np.clip(singular[1], 0.0, 1.0))


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Normalized histogram over a finite, ordered support."""

    support: tuple
    counts: tuple

    def __post_init__(self):
        if len(self.support) != len(self.counts):
            raise ValidationError("support and counts must have equal length")
        if any(c < 0 for c in self.counts):
            raise ValidationError("counts must be non-negative")
        if sum(self.counts) == 0:
            raise ValidationError("empty distribution")

    @property
    def probabilities(self) -> np.ndarray:
        counts = np.asarray(self.counts, dtype=np.float64)
        return counts / counts.sum()

    @classmethod
    def from_samples(cls, samples, support=None):
        samples = np.asarray(samples)
        if support is None:
            support = tuple(np.unique(samples).tolist())
        counts = tuple(int((samples == v).sum()) for v in support)
        return cls(support=tuple(support), counts=counts)


def tv_distance(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """Total variation distance, half the L1 gap between the histograms."""
    if p.support != q.support:
        raise ValidationError("distributions must share a support")
    return float(0.5 * np.abs(p.probabilities - q.probabilities).sum())


def tv_distance_arrays(p, q) -> float:
    """TV between two already-aligned probability arrays."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValidationError("probability arrays must share a shape")
    return float(0.5 * np.abs(p - q).sum())


@dataclass
class MetricsReport:
    """Per-run evaluation record; optional fields stay None when the task
    arity does not define them."""

    accuracy: float
    robust_accuracy: float
    positive_rate_ratio: float = None
    tpr_ratio: float = None
    tnr_ratio: float = None
    hgr: float = None
    clustering_accuracy: float = None
    pairwise_ratio_min: float = None
    pairwise_diff_max: float = None
    flagged_ratios: tuple = ()
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        payload = json.loads(text)
        payload["flagged_ratios"] = tuple(payload.get("flagged_ratios", ()))
        return cls(**payload)


def evaluate_predictions(predictions, y, s, clustering_accuracy=None, extra=None) -> MetricsReport:
    """Assemble the standard report for one set of test predictions."""
    predictions, y, s = map(lambda a: np.asarray(a, dtype=np.int64), (predictions, y, s))
    n_s = int(s.max()) + 1
    binary = n_s == 2 and int(y.max()) + 1 == 2
    ratios = rate_ratios(predictions, y, s) if binary else None
    pair_min = pair_max = None
    if n_s > 2:
        pair_min, pair_max = pairwise_extremes(predictions, y, s, kind="tpr")
    return MetricsReport(
        accuracy=accuracy(predictions, y),
        robust_accuracy=robust_accuracy(predictions, y, s),
        positive_rate_ratio=ratios.positive_rate_ratio if ratios else None,
        tpr_ratio=ratios.tpr_ratio if ratios else None,
        tnr_ratio=ratios.tnr_ratio if ratios else None,
        hgr=hgr_discrete(s, predictions),
        clustering_accuracy=clustering_accuracy,
        pairwise_ratio_min=pair_min,
        pairwise_diff_max=pair_max,
        flagged_ratios=ratios.flagged if ratios else (),
        extra=extra or {},
    )


def append_report_csv(path, method: str, seed: int, report: MetricsReport) -> None:
    """Append one row to the run-level CSV for cross-seed aggregation."""
    path = Path(path)
    payload = asdict(report)
    extra = payload.pop("extra")
    payload.pop("flagged_ratios")
    row = {"method": method, "seed": seed, **payload, **{f"extra_{k}": v for k, v in extra.items()}}
    exists = path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        if not exists:
            writer.writeheader()
        writer.writerow(row)
