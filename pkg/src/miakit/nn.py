"""Minimal deterministic feedforward-network engine.

Dense layers with relu/tanh hidden activations, inverted dropout, a
linear output layer, manual backpropagation, and plain SGD. Everything
is float64 numpy and fully reproducible: the same (spec, seed, data)
always yields bit-identical parameters.

Networks accept either a single input vector or a batch matrix with one
sample per row. ``backward`` returns the exact gradient of the scalar
loss implied by ``output_grad`` (summed over the batch when batched);
mean-vs-sum reduction is the caller's choice and is applied by scaling
``output_grad``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    FormatError,
    InputShapeError,
    NumericError,
    ParameterError,
    TapeError,
)

ACTIVATIONS = ("relu", "tanh")

CHECKPOINT_MAGIC = b"mlnet v1\n"


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: sizes, hidden activation, dropout, seed.

    ``layer_sizes`` lists the input dimension first and the output
    dimension last. ``dropout_rates`` holds one rate per hidden layer
    (a single float is broadcast); rates apply after the hidden
    activation, and the output layer is always linear.
    """

    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    dropout_rates: tuple[float, ...] = ()
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ParameterError("layer_sizes needs at least input and output dims")
        if any(s < 1 for s in sizes):
            raise ParameterError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation must be one of {ACTIVATIONS}")
        n_hidden = len(sizes) - 2
        rates = self.dropout_rates
        if isinstance(rates, (int, float)):
            rates = (float(rates),) * n_hidden
        rates = tuple(float(r) for r in rates)
        if not rates:
            rates = (0.0,) * n_hidden
        if len(rates) != n_hidden:
            raise ParameterError(
                f"expected {n_hidden} dropout rates (one per hidden layer), got {len(rates)}"
            )
        if any(r < 0.0 or r >= 1.0 for r in rates):
            raise ParameterError(f"dropout rates must lie in [0, 1), got {rates}")
        object.__setattr__(self, "dropout_rates", rates)
        if self.seed < 0 or self.seed >= 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "dropout_rates": list(self.dropout_rates),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            activation=d["activation"],
            dropout_rates=tuple(d["dropout_rates"]),
            seed=int(d["seed"]),
        )


class Network:
    """Dense network parameters plus a training-mode flag.

    Weight matrix ``l`` has shape (layer_sizes[l+1], layer_sizes[l]);
    biases are vectors. ``version`` increments on every parameter
    update so stale forward tapes can be detected.
    """

    def __init__(self, spec: NetworkSpec, weights, biases, training: bool = False):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.training = training
        self.version = 0
        self._check_shapes()

    def _check_shapes(self):
        sizes = self.spec.layer_sizes
        if len(self.weights) != self.spec.n_layers or len(self.biases) != self.spec.n_layers:
            raise ParameterError("parameter count does not match spec")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l + 1], sizes[l]):
                raise ParameterError(
                    f"layer {l} weight shape {w.shape} != {(sizes[l + 1], sizes[l])}"
                )
            if b.shape != (sizes[l + 1],):
                raise ParameterError(f"layer {l} bias shape {b.shape} != {(sizes[l + 1],)}")
        for arr in self.weights + self.biases:
            if not np.all(np.isfinite(arr)):
                raise NumericError("network parameters must be finite")

    def copy(self) -> "Network":
        net = Network(
            self.spec,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            training=self.training,
        )
        net.version = self.version
        return net

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_network(spec: NetworkSpec) -> Network:
    """Seeded Glorot-uniform initialization; biases start at zero."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    sizes = spec.layer_sizes
    for l in range(spec.n_layers):
        fan_in, fan_out = sizes[l], sizes[l + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(spec, weights, biases)


@dataclass
class Tape:
    """Cached forward activations, sufficient for exact gradients."""

    net_id: int
    net_version: int
    inputs: list          # input to each linear layer, shape (B, d_l)
    zs: list              # pre-activations per layer
    hidden: list          # post-activation, pre-dropout outputs per hidden layer
    masks: list           # scaled dropout mask per hidden layer, or None
    single: bool          # True when the forward input was a 1-D vector


@dataclass
class Gradients:
    """Parameter gradients, shape-congruent with the owning network.

    ``x`` additionally carries the gradient with respect to the network
    input so that stacked networks (encoder -> projection head) can be
    chained during backpropagation.
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    x: np.ndarray | None = None

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            weights=[w * factor for w in self.weights],
            biases=[b * factor for b in self.biases],
            x=None if self.x is None else self.x * factor,
        )

    def add(self, other: "Gradients") -> "Gradients":
        return Gradients(
            weights=[a + b for a, b in zip(self.weights, other.weights)],
            biases=[a + b for a, b in zip(self.biases, other.biases)],
        )


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # a is the activation output, pre-dropout
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def forward(
    net: Network,
    x,
    training: bool | None = None,
    rng: np.random.Generator | None = None,
    dropout_rates: tuple[float, ...] | None = None,
) -> tuple[np.ndarray, Tape]:
    """Run the network on a vector or batch of rows.

    With ``training`` off (the default unless ``net.training`` is set),
    dropout is the identity and the result is deterministic. With
    training on, each hidden layer's activation is dropped at its
    configured rate using inverted scaling, so evaluation never needs a
    rescale. ``dropout_rates`` overrides the spec rates for this call
    only; shadow-model views use this to activate dropout at inference.
    """
    if training is None:
        training = net.training
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.ndim != 2 or x2.shape[1] != net.spec.layer_sizes[0]:
        raise InputShapeError(
            f"input has {x2.shape[-1] if x2.ndim else 0} features, "
            f"network expects {net.spec.layer_sizes[0]}"
        )
    rates = net.spec.dropout_rates if dropout_rates is None else tuple(dropout_rates)
    if len(rates) != net.spec.n_hidden:
        raise ParameterError(
            f"expected {net.spec.n_hidden} dropout rates, got {len(rates)}"
        )
    if any(r < 0.0 or r >= 1.0 for r in rates):
        raise ParameterError(f"dropout rates must lie in [0, 1), got {rates}")
    if training and any(r > 0.0 for r in rates) and rng is None:
        raise ParameterError("training-mode forward with dropout requires an rng")

    a = x2
    inputs, zs, hidden, masks = [a], [], [], []
    for l in range(net.spec.n_layers):
        z = a @ net.weights[l].T + net.biases[l]
        zs.append(z)
        if l < net.spec.n_layers - 1:
            h = _activate(net.spec.activation, z)
            hidden.append(h)
            rate = rates[l]
            if training and rate > 0.0:
                mask = (rng.random(h.shape) >= rate) / (1.0 - rate)
                masks.append(mask)
                a = h * mask
            else:
                masks.append(None)
                a = h
            inputs.append(a)
    out = zs[-1]
    tape = Tape(
        net_id=id(net),
        net_version=net.version,
        inputs=inputs,
        zs=zs,
        hidden=hidden,
        masks=masks,
        single=single,
    )
    return (out[0] if single else out), tape


def backward(net: Network, tape: Tape, output_grad) -> Gradients:
    """Exact analytic gradients for the forward pass recorded in ``tape``.

    ``output_grad`` is dLoss/dOutput with the same shape as the forward
    output; for a batch, the returned gradients are summed over rows.
    The dropout masks recorded in the tape are honored exactly.
    """
    if tape is None or not isinstance(tape, Tape):
        raise TapeError("backward requires the tape from a matching forward call")
    if tape.net_id != id(net) or tape.net_version != net.version:
        raise TapeError("tape is stale: network parameters changed since forward")
    g = np.atleast_2d(np.asarray(output_grad, dtype=np.float64))
    expected = (tape.zs[-1].shape[0], net.spec.layer_sizes[-1])
    if g.shape != expected:
        raise InputShapeError(f"output_grad shape {g.shape} != {expected}")

    n_layers = net.spec.n_layers
    d_weights: list = [None] * n_layers
    d_biases: list = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        d_weights[l] = g.T @ tape.inputs[l]
        d_biases[l] = g.sum(axis=0)
        if l > 0:
            g = g @ net.weights[l]
            if tape.masks[l - 1] is not None:
                g = g * tape.masks[l - 1]
            g = g * _activate_grad(net.spec.activation, tape.zs[l - 1], tape.hidden[l - 1])
        else:
            g = g @ net.weights[0]
    x_grad = g[0] if tape.single else g
    return Gradients(weights=d_weights, biases=d_biases, x=x_grad)


def sgd_step(net: Network, grads: Gradients, learning_rate: float) -> Network:
    """In-place update: every parameter becomes theta - lr * g."""
    if learning_rate < 0:
        raise ParameterError("learning rate must be non-negative")
    if len(grads.weights) != len(net.weights):
        raise ParameterError("gradient layer count does not match network")
    for w, b, dw, db in zip(net.weights, net.biases, grads.weights, grads.biases):
        if dw.shape != w.shape or db.shape != b.shape:
            raise ParameterError("gradient shapes do not match network parameters")
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise NumericError("non-finite gradients")
    for w, b, dw, db in zip(net.weights, net.biases, grads.weights, grads.biases):
        w -= learning_rate * dw
        b -= learning_rate * db
    net.version += 1
    return net


class SgdOptimizer:
    """Plain SGD, with an optional momentum term that is off by default."""

    def __init__(self, learning_rate: float, momentum: float = 0.0):
        if momentum < 0.0 or momentum >= 1.0:
            raise ParameterError("momentum must lie in [0, 1)")
        self.learning_rate = learning_rate
        self.momentum = momentum
        self._velocity: Gradients | None = None

    def step(self, net: Network, grads: Gradients) -> Network:
        if self.momentum == 0.0:
            return sgd_step(net, grads, self.learning_rate)
        if self._velocity is None:
            self._velocity = Gradients(
                weights=[np.zeros_like(w) for w in net.weights],
                biases=[np.zeros_like(b) for b in net.biases],
            )
        v = self._velocity
        v.weights = [self.momentum * vw + dw for vw, dw in zip(v.weights, grads.weights)]
        v.biases = [self.momentum * vb + db for vb, db in zip(v.biases, grads.biases)]
        return sgd_step(net, Gradients(weights=v.weights, biases=v.biases), self.learning_rate)


def dropout_apply(v, rate: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Inverted dropout on a vector or matrix of rows.

    Each coordinate is zeroed independently with probability ``rate``
    and survivors are scaled by 1/(1-rate). ``rate=0`` returns a copy
    and consumes no randomness.
    """
    if rate < 0.0 or rate >= 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    v = np.asarray(v, dtype=np.float64)
    if rate == 0.0:
        return v.copy()
    if rng is None:
        raise ParameterError("dropout with rate > 0 requires an rng")
    mask = (rng.random(v.shape) >= rate) / (1.0 - rate)
    return v * mask


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] == 0:
        raise ParameterError("softmax of an empty vector")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label: int):
    """Softmax probabilities, cross-entropy loss, and the logit gradient.

    Returns ``(probs, loss, logit_grad)`` with loss = -ln probs[label]
    and logit_grad = probs - one_hot(label). Stable for logits of any
    finite magnitude.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ParameterError("softmax_cross_entropy expects a single logit vector")
    if z.size == 0:
        raise ParameterError("empty logits")
    if not 0 <= int(label) < z.size:
        raise ParameterError(f"label {label} out of range for {z.size} classes")
    label = int(label)
    shifted = z - z.max()
    log_norm = np.log(np.exp(shifted).sum())
    probs = np.exp(shifted - log_norm)
    loss = float(log_norm - shifted[label])
    grad = probs.copy()
    grad[label] -= 1.0
    return probs, loss, grad


def softmax_cross_entropy_batch(logits, labels):
    """Row-wise softmax cross-entropy for a logit matrix.

    Returns ``(probs, losses, logit_grads)`` where logit_grads holds the
    per-row gradient of that row's loss (no batch reduction applied).
    """
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise InputShapeError("logits must be (batch, classes) with one label per row")
    if np.any(labels < 0) or np.any(labels >= z.shape[1]):
        raise ParameterError("label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    losses = log_norm - shifted[rows, labels]
    probs = np.exp(shifted - log_norm[:, None])
    grads = probs.copy()
    grads[rows, labels] -= 1.0
    return probs, losses, grads


def params_digest(net: Network) -> str:
    """SHA-256 over the raw parameter bytes, in layer order. Used by the
    freeze-contract checks: equal digests mean bit-identical parameters."""
    h = hashlib.sha256()
    for w, b in zip(net.weights, net.biases):
        h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return h.hexdigest()


def save_network(net: Network, path) -> None:
    """Write the versioned checkpoint: magic line, JSON spec line, then
    little-endian float64 parameters as W then b per layer."""
    header = json.dumps(net.spec.to_dict(), sort_keys=True).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header)
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_network(path) -> Network:
    """Read a checkpoint written by :func:`save_network`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a network checkpoint (bad magic)")
        header = fh.readline()
        try:
            spec = NetworkSpec.from_dict(json.loads(header.decode()))
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{path}: malformed checkpoint header: {exc}") from exc
        blob = fh.read()
    params = np.frombuffer(blob, dtype="<f8")
    needed = sum(
        spec.layer_sizes[l + 1] * spec.layer_sizes[l] + spec.layer_sizes[l + 1]
        for l in range(spec.n_layers)
    )
    if params.size != needed:
        raise FormatError(
            f"{path}: checkpoint holds {params.size} parameters, spec needs {needed}"
        )
    weights, biases = [], []
    pos = 0
    for l in range(spec.n_layers):
        out_d, in_d = spec.layer_sizes[l + 1], spec.layer_sizes[l]
        weights.append(params[pos : pos + out_d * in_d].reshape(out_d, in_d).copy())
        pos += out_d * in_d
        biases.append(params[pos : pos + out_d].copy())
        pos += out_d
    return Network(spec, weights, biases)
