"""Target-classifier training and shadow view generators.

The target is trained with softmax cross-entropy and plain SGD until it
overfits; its train/test gap is the signal every attack here exploits.
Shadows are dropout-activated views of the finished target: they share
its weights exactly and are never retrained.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import Dataset
from .errors import ParameterError, TrainingError

log = logging.getLogger(__name__)

VIEW_MODES = ("posterior_dropout", "network_dropout")


@dataclass(frozen=True)
class TargetProfile:
    """Overfitting profile of a trained classifier."""

    train_accuracy: float
    test_accuracy: float
    epochs: int
    final_train_loss: float

    def __post_init__(self):
        for name in ("train_accuracy", "test_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name}={v} outside [0, 1]")

    @property
    def gap(self) -> float:
        return self.train_accuracy - self.test_accuracy

    def to_dict(self) -> dict:
        return {
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "gap": self.gap,
            "epochs": self.epochs,
            "final_train_loss": self.final_train_loss,
        }


def accuracy(net: nn.Network, dataset: Dataset) -> float:
    """Top-1 accuracy with dropout off; argmax ties go to the lowest class."""
    if len(dataset) == 0:
        raise ParameterError("accuracy of an empty dataset")
    logits, _ = nn.forward(net, dataset.features, training=False)
    return float(np.mean(np.argmax(logits, axis=1) == dataset.labels))


def train_target(
    train: Dataset,
    test: Dataset,
    spec: nn.NetworkSpec,
    epochs: int,
    learning_rate: float,
    seed: int,
    batch_size: int = 32,
) -> tuple[nn.Network, TargetProfile]:
    """Mini-batch SGD training of the classifier, deterministic per seed.

    The profile's accuracies are computed with dropout off. Divergence
    (a non-finite batch loss) raises a training error naming the epoch.
    """
    if len(train) == 0:
        raise ParameterError("empty training set")
    if spec.layer_sizes[-1] != train.n_classes:
        raise ParameterError(
            f"network outputs {spec.layer_sizes[-1]} classes, dataset has {train.n_classes}"
        )
    if spec.layer_sizes[0] != train.dim:
        raise ParameterError(
            f"network expects {spec.layer_sizes[0]} features, dataset has {train.dim}"
        )
    net = nn.init_network(spec)
    rng = np.random.default_rng([seed, 0x7A26])
    has_dropout = any(r > 0 for r in spec.dropout_rates)
    final_loss = float("nan")
    n = len(train)
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x = train.features[idx]
            y = train.labels[idx]
            out, tape = nn.forward(net, x, training=True, rng=rng if has_dropout else None)
            _, losses, grads = nn.softmax_cross_entropy_batch(out, y)
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            epoch_loss += batch_loss * len(idx)
            g = nn.backward(net, tape, grads / len(idx))
            nn.sgd_step(net, g, learning_rate)
        final_loss = epoch_loss / n
    profile = TargetProfile(
        train_accuracy=accuracy(net, train),
        test_accuracy=accuracy(net, test) if len(test) else 0.0,
        epochs=epochs,
        final_train_loss=final_loss,
    )
    log.info(
        "target trained: train acc %.3f, test acc %.3f, gap %.3f",
        profile.train_accuracy,
        profile.test_accuracy,
        profile.gap,
    )
    return net, profile


def posteriors(net: nn.Network, features) -> np.ndarray:
    """Order-preserving posterior rows, dropout off. Each row sums to 1."""
    logits, _ = nn.forward(net, np.atleast_2d(np.asarray(features, dtype=np.float64)),
                           training=False)
    return nn.softmax(logits)


@dataclass(frozen=True)
class ShadowPair:
    """Two dropout-activated views of one target network.

    In ``posterior_dropout`` mode the view is dropout applied to the
    finished posterior, which is realizable with black-box access only.
    In ``network_dropout`` mode dropout rate d_k is activated after
    every hidden activation at inference, then softmax, so the view
    stays on the simplex. Target weights are never modified.
    """

    net: nn.Network | None
    d1: float
    d2: float
    view_mode: str = "posterior_dropout"

    def __post_init__(self):
        if self.view_mode not in VIEW_MODES:
            raise ParameterError(f"view_mode must be one of {VIEW_MODES}")
        for r in (self.d1, self.d2):
            if r < 0.0 or r >= 1.0:
                raise ParameterError(f"dropout rate {r} outside [0, 1)")
        if self.view_mode == "network_dropout" and self.net is None:
            raise ParameterError("network_dropout views need the target network")

    @property
    def rates(self) -> tuple[float, float]:
        return (self.d1, self.d2)

    def view_posterior(self, x, which: int, rng: np.random.Generator) -> np.ndarray:
        """Posterior-space view of one raw sample through shadow ``which``."""
        if which not in (0, 1):
            raise ParameterError("which must be 0 or 1")
        rate = self.rates[which]
        if self.view_mode == "network_dropout":
            n_hidden = self.net.spec.n_hidden
            logits, _ = nn.forward(
                self.net,
                np.asarray(x, dtype=np.float64),
                training=rate > 0.0,
                rng=rng,
                dropout_rates=(rate,) * n_hidden,
            )
            return nn.softmax(logits)
        p = posteriors(self.net, x)
        p = p[0] if np.asarray(x).ndim == 1 else p
        return nn.dropout_apply(p, rate, rng)


def build_shadows(
    target: nn.Network, d1: float, d2: float, view_mode: str = "posterior_dropout"
) -> ShadowPair:
    """Construct the two shadow view generators from a trained target."""
    return ShadowPair(net=target, d1=d1, d2=d2, view_mode=view_mode)
