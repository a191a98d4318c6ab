"""Attack evaluation: balanced accuracy, F1, ROC/AUC, and TPR at fixed
low FPR.

ROC sweeps thresholds over the unique scores from high to low; samples
with equal scores move as one block, so the trapezoid AUC equals the
normalized Mann-Whitney U statistic with half credit for ties.
TPR-at-FPR uses the conservative step convention with no interpolation,
because the low-FPR regime is exactly where interpolation flatters
attacks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import MiakitError, ParameterError


class MetricError(MiakitError):
    """Metric undefined for the given inputs (e.g. a single class)."""

    exit_code = 3


DEFAULT_FPR_TARGETS = (0.001, 0.01, 0.1)


def _check_binary(decisions, truth, name):
    decisions = np.asarray(decisions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if decisions.shape != truth.shape or decisions.ndim != 1 or decisions.size == 0:
        raise ParameterError(f"{name} expects aligned non-empty 1-D arrays")
    if not (np.any(truth == 1) and np.any(truth == 0)):
        raise MetricError(f"{name} needs both classes in the ground truth")
    return decisions, truth


def balanced_accuracy(decisions, truth) -> float:
    """(TPR + TNR) / 2 with member as the positive class."""
    decisions, truth = _check_binary(decisions, truth, "balanced_accuracy")
    tpr = float(decisions[truth == 1].mean())
    tnr = float(1.0 - decisions[truth == 0].mean())
    return 0.5 * (tpr + tnr)


def f1(decisions, truth) -> float:
    """F1 with member positive; 0 when precision or recall is undefined."""
    decisions, truth = _check_binary(decisions, truth, "f1")
    tp = int(np.sum((decisions == 1) & (truth == 1)))
    fp = int(np.sum((decisions == 1) & (truth == 0)))
    fn = int(np.sum((decisions == 0) & (truth == 1)))
    if tp + fp == 0 or tp + fn == 0 or tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered from threshold +inf down to -inf.

    Starts at (0, 0), ends at (1, 1), both coordinates non-decreasing.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def __post_init__(self):
        fpr = np.asarray(self.fpr, dtype=np.float64)
        tpr = np.asarray(self.tpr, dtype=np.float64)
        if fpr.shape != tpr.shape or fpr.ndim != 1 or fpr.size < 2:
            raise ParameterError("ROC needs aligned point arrays")
        if fpr[0] != 0.0 or tpr[0] != 0.0 or fpr[-1] != 1.0 or tpr[-1] != 1.0:
            raise ParameterError("ROC must run from (0,0) to (1,1)")
        if np.any(np.diff(fpr) < 0) or np.any(np.diff(tpr) < 0):
            raise ParameterError("ROC coordinates must be non-decreasing")
        object.__setattr__(self, "fpr", fpr)
        object.__setattr__(self, "tpr", tpr)


def roc(scores, truth) -> RocCurve:
    """ROC curve and trapezoid AUC from raw scores (higher = member)."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if scores.shape != truth.shape or scores.ndim != 1 or scores.size == 0:
        raise ParameterError("roc expects aligned non-empty 1-D arrays")
    if not np.all(np.isfinite(scores)):
        raise ParameterError("roc requires finite scores")
    if not (np.any(truth == 1) and np.any(truth == 0)):
        raise MetricError("roc needs both classes in the ground truth")
    n_pos = int((truth == 1).sum())
    n_neg = truth.size - n_pos
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_truth = truth[order]
    # last index of each tie block
    boundaries = np.nonzero(np.diff(sorted_scores))[0]
    boundaries = np.concatenate([boundaries, [scores.size - 1]])
    tp = np.cumsum(sorted_truth)[boundaries]
    fp = boundaries + 1 - tp
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, auc=auc)


def tpr_at_fpr(curve: RocCurve, fpr_target: float) -> float:
    """Largest TPR among operating points with FPR <= target."""
    if fpr_target < 0.0 or fpr_target > 1.0:
        raise ParameterError("FPR target must lie in [0, 1]")
    ok = curve.fpr <= fpr_target
    return float(curve.tpr[ok].max())


def write_roc_text(curve: RocCurve, path) -> None:
    """Two-column delimited export (FPR, TPR) for external plotting."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("fpr\ttpr\n")
        for x, y in zip(curve.fpr, curve.tpr):
            fh.write(f"{x:.9g}\t{y:.9g}\n")


@dataclass(frozen=True)
class AttackReport:
    """Per-attack metrics with provenance of config and seed."""

    attack: str
    balanced_accuracy: float
    f1: float
    auc: float
    tpr_at_fpr: dict
    config_hash: str
    seed: int
    n_eval: int
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("balanced_accuracy", "f1", "auc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name}={v} outside [0, 1]")
        for v in self.tpr_at_fpr.values():
            if not 0.0 <= v <= 1.0:
                raise ParameterError("TPR values must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "balanced_accuracy": self.balanced_accuracy,
            "f1": self.f1,
            "auc": self.auc,
            "tpr_at_fpr": {f"{k:g}": v for k, v in sorted(self.tpr_at_fpr.items())},
            "config_hash": self.config_hash,
            "seed": self.seed,
            "n_eval": self.n_eval,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def score_report(
    name: str,
    scores,
    truth,
    config_hash: str = "",
    seed: int = 0,
    decisions=None,
    fpr_targets=DEFAULT_FPR_TARGETS,
    extra: dict | None = None,
) -> tuple[AttackReport, RocCurve]:
    """Full report from raw scores; decisions default to score >= 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if decisions is None:
        decisions = (scores >= 0.5).astype(np.int64)
    curve = roc(scores, truth)
    report = AttackReport(
        attack=name,
        balanced_accuracy=balanced_accuracy(decisions, truth),
        f1=f1(decisions, truth),
        auc=curve.auc,
        tpr_at_fpr={t: tpr_at_fpr(curve, t) for t in fpr_targets},
        config_hash=config_hash,
        seed=seed,
        n_eval=int(truth.size),
        extra=extra or {},
    )
    return report, curve
