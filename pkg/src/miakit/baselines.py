"""The six comparison attacks and threshold calibration.

Four threshold attacks (top-1 confidence, prediction entropy, modified
prediction entropy, predicted loss), the label-only correctness attack,
and the single-shadow neural-network attack. Thresholds are calibrated
on the same labeled budget the contrastive attack gets, by maximizing
balanced accuracy over candidate cut points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .contrastive import DECISION_THRESHOLD, MembershipDecision
from .data import Dataset
from .errors import DataError, ParameterError
from .features import entropy
from .target import posteriors, train_target

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12

# Decision direction per statistic: members score high on confidence
# and low on entropy-like and loss statistics.
STAT_DIRECTIONS = {
    "top1": "ge",
    "entropy": "le",
    "modified_entropy": "le",
    "loss": "le",
}


def stat_top1(p) -> float:
    """Maximum posterior probability."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ParameterError("empty posterior")
    return float(p.max())


def stat_entropy(p) -> float:
    """Prediction entropy of the posterior."""
    return entropy(p)


def _clamped_log(x) -> np.ndarray:
    return np.log(np.maximum(x, LOG_CLAMP))


def stat_modified_entropy(p, y: int) -> float:
    """Modified prediction entropy
    -(1 - p_y) ln(p_y) - sum_{i != y} p_i ln(1 - p_i), logs clamped at
    1e-12. Decreasing in the true-class probability and increasing in
    every wrong-class probability."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ParameterError("empty posterior")
    if not 0 <= int(y) < p.size:
        raise ParameterError(f"true class {y} out of range for {p.size} classes")
    y = int(y)
    others = np.delete(p, y)
    val = -(1.0 - p[y]) * _clamped_log(p[y]) - float((others * _clamped_log(1.0 - others)).sum())
    return float(val)


def stat_loss(p, y: int) -> float:
    """Cross-entropy loss -ln(p_y) of the true class, clamped."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ParameterError("empty posterior")
    if not 0 <= int(y) < p.size:
        raise ParameterError(f"true class {y} out of range for {p.size} classes")
    return float(-_clamped_log(p[int(y)]))


def correctness_attack(p, y: int) -> MembershipDecision:
    """Member iff the predicted label is correct; argmax ties break to
    the lowest class index."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ParameterError("empty posterior")
    if not 0 <= int(y) < p.size:
        raise ParameterError(f"true class {y} out of range for {p.size} classes")
    member = int(np.argmax(p)) == int(y)
    return MembershipDecision(status=int(member), score=1.0 if member else 0.0)


@dataclass(frozen=True)
class ThresholdAttack:
    """A calibrated statistic-threshold decision rule."""

    kind: str
    threshold: float
    direction: str

    def __post_init__(self):
        if self.kind not in STAT_DIRECTIONS:
            raise ParameterError(f"unknown statistic {self.kind!r}")
        if self.direction != STAT_DIRECTIONS[self.kind]:
            raise ParameterError(
                f"{self.kind} must use direction {STAT_DIRECTIONS[self.kind]!r}"
            )

    def decide(self, scores) -> np.ndarray:
        scores = np.asarray(scores, dtype=np.float64)
        if self.direction == "ge":
            return (scores >= self.threshold).astype(np.int64)
        return (scores <= self.threshold).astype(np.int64)


def _balanced_accuracy(decisions, truth) -> float:
    decisions = np.asarray(decisions)
    truth = np.asarray(truth)
    pos = truth == 1
    return 0.5 * (decisions[pos].mean() + (1 - decisions[~pos]).mean())


def calibrate_threshold(scores, bits, direction: str) -> float:
    """Threshold maximizing balanced accuracy over the midpoints of
    adjacent sorted unique scores; ties resolve to the smallest value.

    With a single unique score the degenerate candidate is that score
    itself.
    """
    if direction not in ("ge", "le"):
        raise ParameterError("direction must be 'ge' or 'le'")
    scores = np.asarray(scores, dtype=np.float64)
    bits = np.asarray(bits, dtype=np.int64)
    if scores.shape != bits.shape or scores.ndim != 1:
        raise ParameterError("scores and bits must be aligned 1-D arrays")
    if not (np.any(bits == 0) and np.any(bits == 1)):
        raise DataError("calibration needs both classes")
    unique = np.unique(scores)
    if unique.size == 1:
        candidates = unique
    else:
        candidates = (unique[:-1] + unique[1:]) / 2.0
    best_tau = float(candidates[0])
    best_acc = -1.0
    for tau in candidates:
        decisions = (scores >= tau) if direction == "ge" else (scores <= tau)
        acc = _balanced_accuracy(decisions.astype(np.int64), bits)
        if acc > best_acc:
            best_acc, best_tau = acc, float(tau)
    return best_tau


def batch_statistics(kind: str, probs, labels=None) -> np.ndarray:
    """Vectorized per-row statistic for a posterior matrix."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if kind == "top1":
        return probs.max(axis=1)
    if kind == "entropy":
        logs = np.where(probs > 0.0, np.log(np.where(probs > 0.0, probs, 1.0)), 0.0)
        return -(probs * logs).sum(axis=1)
    if labels is None:
        raise ParameterError(f"statistic {kind!r} needs true class labels")
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(probs.shape[0])
    p_y = probs[rows, labels]
    if kind == "loss":
        return -_clamped_log(p_y)
    if kind == "modified_entropy":
        term_true = -(1.0 - p_y) * _clamped_log(p_y)
        all_terms = -(probs * _clamped_log(1.0 - probs)).sum(axis=1)
        own = -(p_y * _clamped_log(1.0 - p_y))
        return term_true + (all_terms - own)
    raise ParameterError(f"unknown statistic {kind!r}")


class NnAttackModel:
    """Single-shadow attack: a shadow classifier trained like the target
    on auxiliary data, and a binary network trained on the shadow's
    posteriors (sorted descending for class-order independence)."""

    def __init__(self, shadow: nn.Network, attack_net: nn.Network):
        self.shadow = shadow
        self.attack_net = attack_net

    def scores(self, probs) -> np.ndarray:
        probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        feats = np.sort(probs, axis=1)[:, ::-1]
        logits, _ = nn.forward(self.attack_net, feats, training=False)
        return nn.softmax(logits)[:, 1]


def nn_attack_train(
    aux_members: Dataset,
    aux_non_members: Dataset,
    shadow_spec: nn.NetworkSpec,
    shadow_epochs: int,
    shadow_lr: float,
    seed: int,
    attack_hidden: tuple[int, ...] = (32,),
    attack_epochs: int = 80,
    attack_lr: float = 0.1,
    target_train_features=None,
) -> NnAttackModel:
    """Train the shadow on the auxiliary members, then the binary attack
    network on the shadow's member and non-member posteriors.

    When the target's training features are supplied, any overlap
    between them and the auxiliary data is rejected.
    """
    if len(aux_members) == 0 or len(aux_non_members) == 0:
        raise DataError("auxiliary member and non-member sets must be non-empty")
    if target_train_features is not None:
        target_rows = {row.tobytes() for row in np.asarray(target_train_features)}
        for ds in (aux_members, aux_non_members):
            for row in ds.features:
                if row.tobytes() in target_rows:
                    raise DataError("auxiliary data overlaps the target training set")
    shadow, _ = train_target(
        aux_members,
        aux_non_members,
        shadow_spec,
        epochs=shadow_epochs,
        learning_rate=shadow_lr,
        seed=seed,
    )
    p_in = posteriors(shadow, aux_members.features)
    p_out = posteriors(shadow, aux_non_members.features)
    feats = np.sort(np.vstack([p_in, p_out]), axis=1)[:, ::-1]
    bits = np.concatenate(
        [np.ones(len(aux_members), np.int64), np.zeros(len(aux_non_members), np.int64)]
    )
    attack_ds = Dataset(feats, bits, 2)
    attack_spec = nn.NetworkSpec(
        layer_sizes=(feats.shape[1], *attack_hidden, 2),
        activation="relu",
        seed=np.random.SeedSequence([seed, 0xA7]).generate_state(1)[0],
    )
    attack_net, _ = train_target(
        attack_ds,
        attack_ds,
        attack_spec,
        epochs=attack_epochs,
        learning_rate=attack_lr,
        seed=seed + 1,
    )
    return NnAttackModel(shadow=shadow, attack_net=attack_net)


def nn_attack_infer(model: NnAttackModel, p) -> MembershipDecision:
    score = float(model.scores(np.asarray(p, dtype=np.float64)[None, :])[0])
    return MembershipDecision(status=int(score >= DECISION_THRESHOLD), score=score)
