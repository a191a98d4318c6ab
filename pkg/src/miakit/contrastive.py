"""Contrastive membership-inference attack.

Stage one trains an encoder plus projection head on unlabeled view
pairs with the normalized temperature-scaled cross-entropy (NT-Xent)
loss; no membership bit is reachable from that code path. Stage two
freezes the encoder, discards the projection head from the inference
path, and fine-tunes a small classification head on the labeled subset.
Inference scores a posterior through feature extension, the frozen
encoder, and the head.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import (
    DataError,
    DomainError,
    FormatError,
    ParameterError,
    StateError,
    TrainingError,
)
from .features import build_feature, build_features
from .target import ShadowPair

log = logging.getLogger(__name__)

DECISION_THRESHOLD = 0.5

ATTACK_MAGIC = b"mia-attack v1\n"

# Fixed stream tags for seed derivation, so stages rerun independently.
_STREAM_VIEWS = 0x56
_STREAM_ENCODER = 0xE7
_STREAM_HEAD = 0x4D


@dataclass(frozen=True)
class ContrastiveConfig:
    """Hyperparameters of the unsupervised attack-encoder stage."""

    tau: float = 0.05
    batch_pairs: int = 64
    epochs: int = 40
    learning_rate: float = 0.01
    d1: float = 0.1
    d2: float = 0.1
    view_mode: str = "posterior_dropout"
    features_after_dropout: bool = False
    seed: int = 0
    encoder_hidden: tuple[int, ...] = (128,)
    embed_dim: int = 64
    projection_dim: int = 32
    head_hidden: tuple[int, ...] = ()
    grad_reduction: str = "mean"
    symmetric: bool = True
    fresh_views: bool = False
    normalize_features: bool = False

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ParameterError("temperature must be positive")
        if self.batch_pairs < 2:
            raise ParameterError("contrastive batches need at least 2 pairs")
        for r in (self.d1, self.d2):
            if r < 0.0 or r >= 1.0:
                raise ParameterError(f"view dropout rate {r} outside [0, 1)")
        if self.grad_reduction not in ("mean", "sum"):
            raise ParameterError("grad_reduction must be 'mean' or 'sum'")
        object.__setattr__(self, "encoder_hidden", tuple(self.encoder_hidden))
        object.__setattr__(self, "head_hidden", tuple(self.head_hidden))


@dataclass(frozen=True)
class MembershipDecision:
    """Inference outcome: member bit plus the member-class probability."""

    status: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ParameterError("score must lie in [0, 1]")
        if self.status != int(self.score >= DECISION_THRESHOLD):
            raise ParameterError("status must follow the decision threshold")


def cosine_sim(a, b) -> float:
    """Cosine similarity; symmetric and invariant to positive scaling."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ParameterError("cosine_sim expects two equal-length vectors")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


def _anchor_rows(n_total: int, symmetric: bool) -> np.ndarray:
    return np.arange(n_total) if symmetric else np.arange(0, n_total, 2)


def _similarity_terms(embeddings, tau):
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[0] % 2 != 0:
        raise ParameterError("expected 2N embeddings ordered as N (i, j) pairs")
    if tau <= 0.0:
        raise ParameterError("temperature must be positive")
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("zero embedding: cosine similarity undefined")
    u = z / norms[:, None]
    sims = u @ u.T
    scaled = sims / tau
    np.fill_diagonal(scaled, -np.inf)  # k = i never enters a denominator
    row_max = scaled.max(axis=1, keepdims=True)
    expos = np.exp(scaled - row_max)
    denom = expos.sum(axis=1)
    return z, u, norms, sims, scaled, row_max, expos, denom


def nt_xent(embeddings, tau: float, symmetric: bool = True):
    """NT-Xent loss over a batch of 2N pair-ordered embeddings.

    Row 2k and row 2k+1 are the two views of pair k; each anchor's
    positive is its partner and the other 2N-2 embeddings are its
    negatives. Returns ``(loss, per_anchor)`` where loss is the mean
    over all 2N anchors (or the N first-view anchors when
    ``symmetric=False``).
    """
    _, _, _, sims, _, row_max, _, denom = _similarity_terms(embeddings, tau)
    n_total = sims.shape[0]
    rows = np.arange(n_total)
    partner = rows ^ 1
    lse = row_max[:, 0] + np.log(denom)
    losses = lse - sims[rows, partner] / tau
    anchors = _anchor_rows(n_total, symmetric)
    per_anchor = losses[anchors]
    return float(per_anchor.mean()), per_anchor


def nt_xent_with_grad(embeddings, tau: float, symmetric: bool = True):
    """NT-Xent loss plus its exact gradient w.r.t. the embeddings."""
    z, u, norms, sims, _, row_max, expos, denom = _similarity_terms(embeddings, tau)
    n_total = z.shape[0]
    rows = np.arange(n_total)
    partner = rows ^ 1
    lse = row_max[:, 0] + np.log(denom)
    losses = lse - sims[rows, partner] / tau
    anchors = _anchor_rows(n_total, symmetric)
    per_anchor = losses[anchors]
    loss = float(per_anchor.mean())

    # dLoss/dS accumulated per anchor row; S is used symmetrically so
    # the gradient through u is (G + G^T) u.
    soft = expos / denom[:, None]
    g_s = np.zeros_like(sims)
    g_s[anchors] = soft[anchors]
    g_s[anchors, partner[anchors]] -= 1.0
    g_s /= tau * len(anchors)
    g_u = (g_s + g_s.T) @ u
    g_z = (g_u - (g_u * u).sum(axis=1, keepdims=True) * u) / norms[:, None]
    return loss, per_anchor, g_z


def view_pair_from_posterior(
    p,
    d1: float,
    d2: float,
    rng_i: np.random.Generator,
    rng_j: np.random.Generator,
    features_after_dropout: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Two dropout-augmented views of one posterior, in feature space.

    By default the extended feature vector is computed once from the
    clean posterior and dropout augments copies of it; recomputing max
    and entropy on a dropped vector would push them off their defined
    ranges. ``features_after_dropout`` exposes that alternative anyway.
    """
    if features_after_dropout:
        vi = build_feature(nn.dropout_apply(p, d1, rng_i))
        vj = build_feature(nn.dropout_apply(p, d2, rng_j))
        return vi, vj
    p_star = build_feature(p)
    return nn.dropout_apply(p_star, d1, rng_i), nn.dropout_apply(p_star, d2, rng_j)


def make_views(
    shadows: ShadowPair,
    rng_i: np.random.Generator,
    rng_j: np.random.Generator,
    x=None,
    base_posterior=None,
    features_after_dropout: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """One sample's view pair under the configured view mode.

    ``network_dropout`` runs the raw sample ``x`` through the shadow
    networks and extends each resulting simplex posterior;
    ``posterior_dropout`` needs only ``base_posterior`` and therefore
    also works for externally dumped posteriors.
    """
    if shadows.view_mode == "network_dropout":
        if x is None:
            raise ParameterError("network_dropout views need the raw sample")
        p_i = shadows.view_posterior(np.asarray(x, dtype=np.float64), 0, rng_i)
        p_j = shadows.view_posterior(np.asarray(x, dtype=np.float64), 1, rng_j)
        return build_feature(p_i), build_feature(p_j)
    if base_posterior is None:
        if x is None:
            raise ParameterError("posterior_dropout views need the posterior or sample")
        from .target import posteriors

        base_posterior = posteriors(shadows.net, x)[0]
    return view_pair_from_posterior(
        base_posterior, shadows.d1, shadows.d2, rng_i, rng_j, features_after_dropout
    )


def normalize_rows(rows) -> np.ndarray:
    """L2-normalize feature rows; the optional pre-encoder normalization."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DomainError("cannot normalize an all-zero feature vector")
    return rows / norms


def view_rng(seed: int, epoch: int, sample_index: int, which: int) -> np.random.Generator:
    """Per-(seed, epoch, sample, view) generator; parallel and serial
    view generation therefore agree bit-for-bit."""
    return np.random.default_rng([seed, _STREAM_VIEWS, epoch, sample_index, which])


def build_attack_data(
    shadows: ShadowPair,
    base_posteriors=None,
    raw_features=None,
    seed: int = 0,
    epoch: int = 0,
    features_after_dropout: bool = False,
    normalize: bool = False,
) -> np.ndarray:
    """View pairs for a whole target set: shape (n, 2, C+2).

    Views are deterministic per (seed, sample index, epoch). With
    ``normalize`` on, each extended feature vector is L2-normalized
    before the dropout augmentation.
    """
    if shadows.view_mode == "network_dropout":
        if raw_features is None:
            raise ParameterError("network_dropout attack data needs raw samples")
        n = len(raw_features)
    else:
        if base_posteriors is None:
            raise ParameterError("posterior_dropout attack data needs posteriors")
        base_posteriors = np.asarray(base_posteriors, dtype=np.float64)
        n = base_posteriors.shape[0]
    out = None
    for i in range(n):
        vi, vj = make_views(
            shadows,
            view_rng(seed, epoch, i, 0),
            view_rng(seed, epoch, i, 1),
            x=None if raw_features is None else raw_features[i],
            base_posterior=None if base_posteriors is None else base_posteriors[i],
            features_after_dropout=features_after_dropout,
        )
        if normalize:
            vi, vj = normalize_rows(vi)[0], normalize_rows(vj)[0]
        if out is None:
            out = np.empty((n, 2, vi.size))
        out[i, 0], out[i, 1] = vi, vj
    if out is None:
        raise DataError("empty target set: no attack data to build")
    if not np.all(np.isfinite(out)):
        raise DataError("non-finite view encountered while building attack data")
    return out


class AttackModel:
    """Encoder, training-only projection head, and classification head.

    After contrastive training the projection head survives only in
    checkpoints; inference runs feature -> encoder -> head. Once
    fine-tuning has happened the encoder is frozen and ``finetuned``
    gates inference.
    """

    def __init__(
        self,
        encoder: nn.Network | None,
        projection: nn.Network | None,
        head: nn.Network | None = None,
        finetuned: bool = False,
        normalize_features: bool = False,
    ):
        self.encoder = encoder
        self.projection = projection
        self.head = head
        self.finetuned = finetuned
        self.normalize_features = normalize_features
        self.encoder_losses: list[float] = []
        self.head_losses: list[float] = []

    @property
    def feature_dim(self) -> int:
        if self.encoder is not None:
            return self.encoder.spec.layer_sizes[0]
        if self.head is not None:
            return self.head.spec.layer_sizes[0]
        raise StateError("model has neither encoder nor head")

    @property
    def embed_dim(self) -> int:
        if self.encoder is None:
            return self.feature_dim
        return self.encoder.spec.layer_sizes[-1]

    def embed(self, feature_rows) -> np.ndarray:
        """Frozen-encoder embeddings (identity for the head-only model)."""
        rows = np.atleast_2d(np.asarray(feature_rows, dtype=np.float64))
        if self.normalize_features:
            rows = normalize_rows(rows)
        if self.encoder is None:
            return rows
        out, _ = nn.forward(self.encoder, rows, training=False)
        return out


def build_attack_model(feature_dim: int, cfg: ContrastiveConfig) -> AttackModel:
    """Fresh encoder and projection head, seeded from the config."""
    enc_spec = nn.NetworkSpec(
        layer_sizes=(feature_dim, *cfg.encoder_hidden, cfg.embed_dim),
        activation="relu",
        seed=np.random.SeedSequence([cfg.seed, _STREAM_ENCODER, 1]).generate_state(1)[0],
    )
    proj_spec = nn.NetworkSpec(
        layer_sizes=(cfg.embed_dim, cfg.projection_dim),
        activation="relu",
        seed=np.random.SeedSequence([cfg.seed, _STREAM_ENCODER, 2]).generate_state(1)[0],
    )
    return AttackModel(
        nn.init_network(enc_spec),
        nn.init_network(proj_spec),
        normalize_features=cfg.normalize_features,
    )


def train_encoder(pairs, cfg: ContrastiveConfig, pairs_for_epoch=None) -> AttackModel:
    """Unsupervised contrastive training of encoder plus projection head.

    ``pairs`` has shape (n, 2, D): the prepared attack dataset of view
    pairs. No membership information enters anywhere on this path.
    ``pairs_for_epoch`` optionally regenerates augmentations per epoch.
    Gradients use the batch-mean reduction unless the config selects
    ``sum``.
    """
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 3 or pairs.shape[1] != 2:
        raise ParameterError("pairs must have shape (n, 2, feature_dim)")
    n = pairs.shape[0]
    if n < cfg.batch_pairs:
        raise ParameterError(
            f"target set of {n} pairs is smaller than one batch ({cfg.batch_pairs})"
        )
    model = build_attack_model(pairs.shape[2], cfg)
    encoder, projection = model.encoder, model.projection
    rng = np.random.default_rng([cfg.seed, _STREAM_ENCODER, 0])
    for epoch in range(cfg.epochs):
        if pairs_for_epoch is not None and epoch > 0:
            pairs = np.asarray(pairs_for_epoch(epoch), dtype=np.float64)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_pairs):
            idx = order[start : start + cfg.batch_pairs]
            if len(idx) < 2:
                continue  # a lone pair has no negatives
            flat = pairs[idx].reshape(len(idx) * 2, -1)
            h, tape_e = nn.forward(encoder, flat, training=False)
            z, tape_p = nn.forward(projection, h, training=False)
            loss, _, g_z = nt_xent_with_grad(z, cfg.tau, cfg.symmetric)
            if not np.isfinite(loss):
                raise TrainingError(f"contrastive loss diverged at epoch {epoch}")
            if cfg.grad_reduction == "sum":
                g_z = g_z * len(_anchor_rows(len(idx) * 2, cfg.symmetric))
            g_proj = nn.backward(projection, tape_p, g_z)
            g_enc = nn.backward(encoder, tape_e, g_proj.x)
            nn.sgd_step(projection, g_proj, cfg.learning_rate)
            nn.sgd_step(encoder, g_enc, cfg.learning_rate)
            losses.append(loss)
        epoch_mean = float(np.mean(losses))
        model.encoder_losses.append(epoch_mean)
        log.info("contrastive epoch %d/%d: loss %.6f", epoch + 1, cfg.epochs, epoch_mean)
    return model


def finetune(
    model: AttackModel,
    posteriors_l,
    bits,
    epochs: int,
    learning_rate: float,
    seed: int,
    batch_size: int = 32,
    head_hidden: tuple[int, ...] = (),
) -> AttackModel:
    """Supervised fine-tuning of the classification head only.

    The encoder is frozen: labeled posteriors are embedded once through
    it and only the freshly added head sees gradient updates, trained
    with softmax cross-entropy on the membership bit. The projection
    head takes no part in this stage or in inference.
    """
    p = np.atleast_2d(np.asarray(posteriors_l, dtype=np.float64))
    bits = np.asarray(bits, dtype=np.int64)
    if p.shape[0] != bits.shape[0] or p.shape[0] == 0:
        raise DataError("need one membership bit per labeled posterior")
    if not (np.any(bits == 0) and np.any(bits == 1)):
        raise DataError("labeled subset must contain both members and non-members")
    emb = model.embed(build_features(p))
    head_spec = nn.NetworkSpec(
        layer_sizes=(emb.shape[1], *head_hidden, 2),
        activation="relu",
        seed=np.random.SeedSequence([seed, _STREAM_HEAD, 1]).generate_state(1)[0],
    )
    head = nn.init_network(head_spec)
    rng = np.random.default_rng([seed, _STREAM_HEAD, 0])
    n = emb.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            out, tape = nn.forward(head, emb[idx], training=False)
            _, batch_losses, grads = nn.softmax_cross_entropy_batch(out, bits[idx])
            loss = float(batch_losses.mean())
            if not np.isfinite(loss):
                raise TrainingError(f"fine-tuning loss diverged at epoch {epoch}")
            g = nn.backward(head, tape, grads / len(idx))
            nn.sgd_step(head, g, learning_rate)
            losses.append(loss)
        model.head_losses.append(float(np.mean(losses)))
    model.head = head
    model.finetuned = True
    return model


def membership_scores(model: AttackModel, posteriors_rows) -> np.ndarray:
    """Member-class probabilities for a matrix of posterior rows."""
    if not model.finetuned or model.head is None:
        raise StateError("model must be fine-tuned before inference")
    p = np.atleast_2d(np.asarray(posteriors_rows, dtype=np.float64))
    emb = model.embed(build_features(p))
    logits, _ = nn.forward(model.head, emb, training=False)
    return nn.softmax(logits)[:, 1]


def infer_membership(model: AttackModel, p) -> MembershipDecision:
    """Membership decision for one posterior; dropout off everywhere."""
    score = float(membership_scores(model, np.asarray(p, dtype=np.float64)[None, :])[0])
    return MembershipDecision(status=int(score >= DECISION_THRESHOLD), score=score)


def save_attack_model(model: AttackModel, path) -> None:
    """Checkpoint with a part manifest followed by each part's parameters
    in the network-checkpoint layout (little-endian float64, W then b)."""
    parts = []
    for name in ("encoder", "projection", "head"):
        if getattr(model, name) is not None:
            parts.append(name)
    manifest = {
        "parts": parts,
        "specs": {name: getattr(model, name).spec.to_dict() for name in parts},
        "finetuned": bool(model.finetuned),
        "normalize_features": bool(model.normalize_features),
        "encoder_losses": [float(v) for v in model.encoder_losses],
        "head_losses": [float(v) for v in model.head_losses],
    }
    with open(path, "wb") as fh:
        fh.write(ATTACK_MAGIC)
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for name in parts:
            net = getattr(model, name)
            for w, b in zip(net.weights, net.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_attack_model(path) -> AttackModel:
    """Read a checkpoint written by :func:`save_attack_model`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(ATTACK_MAGIC))
        if magic != ATTACK_MAGIC:
            raise FormatError(f"{path}: not an attack-model checkpoint")
        try:
            manifest = json.loads(fh.readline().decode())
        except ValueError as exc:
            raise FormatError(f"{path}: malformed manifest: {exc}") from exc
        blob = np.frombuffer(fh.read(), dtype="<f8")
    nets = {}
    pos = 0
    for name in manifest["parts"]:
        spec = nn.NetworkSpec.from_dict(manifest["specs"][name])
        weights, biases = [], []
        for l in range(spec.n_layers):
            out_d, in_d = spec.layer_sizes[l + 1], spec.layer_sizes[l]
            if pos + out_d * in_d + out_d > blob.size:
                raise FormatError(f"{path}: truncated parameters for part {name!r}")
            weights.append(blob[pos : pos + out_d * in_d].reshape(out_d, in_d).copy())
            pos += out_d * in_d
            biases.append(blob[pos : pos + out_d].copy())
            pos += out_d
        nets[name] = nn.Network(spec, weights, biases)
    if pos != blob.size:
        raise FormatError(f"{path}: {blob.size - pos} trailing parameter values")
    model = AttackModel(
        encoder=nets.get("encoder"),
        projection=nets.get("projection"),
        head=nets.get("head"),
        finetuned=bool(manifest.get("finetuned", False)),
        normalize_features=bool(manifest.get("normalize_features", False)),
    )
    model.encoder_losses = [float(v) for v in manifest.get("encoder_losses", [])]
    model.head_losses = [float(v) for v in manifest.get("head_losses", [])]
    return model
