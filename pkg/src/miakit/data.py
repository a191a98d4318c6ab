"""Datasets with known membership ground truth.

Synthetic Gaussian-mixture classification data stands in for image
benchmarks at desk scale: the attack mechanism only needs an overfit
classifier's posterior gap, and separation plus train-set size control
that gap. Posterior dumps are the interop boundary for externally
trained models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ParameterError

POSTERIOR_DUMP_MAGIC = "mia-dump"
ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class Dataset:
    """Immutable labeled samples: (n, dim) features, (n,) class labels."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise DataError("features must be a 2-D array")
        if labels.shape != (feats.shape[0],):
            raise DataError("one label per sample required")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DataError("class labels must lie in [0, n_classes)")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


def gen_synthetic(n: int, n_classes: int, dim: int, separation: float, seed: int) -> Dataset:
    """Draw ``n`` samples from ``n_classes`` unit-variance Gaussian
    clusters whose means sit ``separation`` apart, class-balanced up to
    rounding and deterministic per seed.

    When ``n_classes <= dim`` the means are scaled standard basis
    vectors so every pairwise distance equals ``separation`` exactly;
    otherwise means are drawn isotropically with that root-mean-square
    pairwise distance.
    """
    if n_classes < 2:
        raise ParameterError("need at least 2 classes")
    if n < n_classes:
        raise ParameterError("need at least one sample per class")
    if dim < 1:
        raise ParameterError("feature dimension must be >= 1")
    if separation < 0:
        raise ParameterError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    if n_classes <= dim:
        means = np.zeros((n_classes, dim))
        scale = separation / np.sqrt(2.0)
        for c in range(n_classes):
            means[c, c] = scale
    else:
        sigma = separation / np.sqrt(2.0 * dim)
        means = rng.normal(0.0, sigma, size=(n_classes, dim))
    counts = np.full(n_classes, n // n_classes)
    counts[: n % n_classes] += 1
    labels = np.repeat(np.arange(n_classes), counts)
    feats = means[labels] + rng.normal(0.0, 1.0, size=(n, dim))
    order = rng.permutation(n)
    return Dataset(feats[order], labels[order], n_classes)


def parse_ratio(text: str) -> tuple[int, int]:
    """Parse a ``members:non-members`` ratio such as ``1:2``."""
    try:
        a, b = text.split(":")
        a, b = int(a), int(b)
    except ValueError as exc:
        raise ParameterError(f"bad ratio {text!r}, expected like '1:2'") from exc
    if a < 1 or b < 1:
        raise ParameterError("ratio parts must be positive")
    return a, b


@dataclass(frozen=True)
class MembershipSplit:
    """Index partition of a dataset into target-training members, held-out
    non-members, the balanced inference set D_t, and the small labeled
    subset D_l.

    D_t is drawn before D_l so that its composition does not depend on
    the labeled budget, and the two are disjoint so fine-tuning never
    sees evaluation samples.
    """

    dataset: Dataset
    member_idx: np.ndarray
    non_member_idx: np.ndarray
    target_idx: np.ndarray
    target_bits: np.ndarray
    labeled_idx: np.ndarray
    labeled_bits: np.ndarray
    member_ratio: tuple[int, int] = (1, 1)

    def __post_init__(self):
        for name in ("member_idx", "non_member_idx", "target_idx", "labeled_idx"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        for name in ("target_bits", "labeled_bits"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        members = set(self.member_idx.tolist())
        non_members = set(self.non_member_idx.tolist())
        if members & non_members:
            raise DataError("member and non-member sets overlap")
        pool = members | non_members
        for name, idx in (("target", self.target_idx), ("labeled", self.labeled_idx)):
            if not set(idx.tolist()) <= pool:
                raise DataError(f"{name} subset escapes the member/non-member pool")
        for name, idx, bits in (
            ("target", self.target_idx, self.target_bits),
            ("labeled", self.labeled_idx, self.labeled_bits),
        ):
            truth = np.fromiter((i in members for i in idx), dtype=np.int64, count=len(idx))
            if not np.array_equal(truth, np.asarray(bits, dtype=np.int64)):
                raise DataError(f"{name} membership bits are wrong")

    @property
    def train(self) -> Dataset:
        return self.dataset.subset(self.member_idx)

    @property
    def holdout(self) -> Dataset:
        return self.dataset.subset(self.non_member_idx)

    @property
    def target_set(self) -> Dataset:
        return self.dataset.subset(self.target_idx)

    @property
    def labeled_set(self) -> Dataset:
        return self.dataset.subset(self.labeled_idx)


def split_membership(
    dataset: Dataset,
    member_fraction: float,
    labeled_count: int,
    member_ratio: tuple[int, int] = (1, 1),
    seed: int = 0,
    target_count: int | None = None,
) -> MembershipSplit:
    """Partition ``dataset`` into members/non-members and draw D_t and D_l.

    ``member_ratio`` is the members:non-members ratio inside D_l and is
    honored exactly up to integer rounding. ``target_count`` sizes the
    balanced D_t (default: the largest balanced set that still leaves
    room for the labeled subset on both sides).
    """
    n = len(dataset)
    if not 0.0 < member_fraction < 1.0:
        raise ParameterError("member_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_members = int(round(n * member_fraction))
    if n_members < 1 or n_members >= n:
        raise ParameterError("member_fraction leaves an empty side")
    member_idx = np.sort(order[:n_members])
    non_member_idx = np.sort(order[n_members:])

    a, b = member_ratio
    want_members = int(round(labeled_count * a / (a + b)))
    want_non = labeled_count - want_members

    if target_count is None:
        half = min(n_members - want_members, (n - n_members) - want_non, n // 4)
        target_count = 2 * max(half, 0)
    if target_count % 2 != 0:
        raise ParameterError("target_count must be even (D_t is balanced)")
    t_half = target_count // 2
    if t_half > n_members or t_half > n - n_members:
        raise ParameterError(
            f"target_count {target_count} needs {t_half} samples on each side, "
            f"have {n_members} members / {n - n_members} non-members"
        )

    # D_t first, so varying the labeled budget never changes D_t.
    t_members = rng.choice(member_idx, size=t_half, replace=False)
    t_non = rng.choice(non_member_idx, size=t_half, replace=False)
    target_idx = np.concatenate([t_members, t_non])
    target_bits = np.concatenate([np.ones(t_half, np.int64), np.zeros(t_half, np.int64)])
    perm = rng.permutation(target_count)
    target_idx, target_bits = target_idx[perm], target_bits[perm]

    free_members = np.setdiff1d(member_idx, t_members)
    free_non = np.setdiff1d(non_member_idx, t_non)
    if want_members > len(free_members) or want_non > len(free_non):
        m = min(want_members, len(free_members))
        k = min(labeled_count - m, len(free_non))
        raise ParameterError(
            f"labeled ratio {a}:{b} at count {labeled_count} is unrealizable "
            f"({want_members} members / {want_non} non-members needed, "
            f"{len(free_members)} / {len(free_non)} available); "
            f"closest realizable is {m}:{k}"
        )
    l_members = rng.choice(free_members, size=want_members, replace=False)
    l_non = rng.choice(free_non, size=want_non, replace=False)
    labeled_idx = np.concatenate([l_members, l_non])
    labeled_bits = np.concatenate(
        [np.ones(want_members, np.int64), np.zeros(want_non, np.int64)]
    )
    perm = rng.permutation(labeled_count)
    return MembershipSplit(
        dataset=dataset,
        member_idx=member_idx,
        non_member_idx=non_member_idx,
        target_idx=target_idx,
        target_bits=target_bits,
        labeled_idx=labeled_idx[perm],
        labeled_bits=labeled_bits[perm],
        member_ratio=(a, b),
    )


@dataclass(frozen=True)
class PosteriorDump:
    """Target-model posteriors for a sample set, with class labels and
    optional membership bits. Every row must sit on the simplex."""

    probs: np.ndarray
    labels: np.ndarray
    bits: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if probs.ndim != 2:
            raise DataError("posterior dump needs a 2-D probability matrix")
        if labels.shape != (probs.shape[0],):
            raise DataError("one class label per posterior row required")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            bad = int(np.argwhere((probs < 0.0) | (probs > 1.0))[0, 0]) + 1
            raise DataError(f"row {bad}: probabilities outside [0, 1]")
        if probs.shape[0]:
            sums = probs.sum(axis=1)
            off = np.abs(sums - 1.0) > ROW_SUM_TOL
            if np.any(off):
                bad = int(np.argmax(off)) + 1
                raise DataError(f"row {bad}: probabilities sum to {sums[bad - 1]:.9g}, not 1")
        bits = self.bits
        if bits is not None:
            bits = np.asarray(bits, dtype=np.int64)
            if bits.shape != (probs.shape[0],):
                raise DataError("one membership bit per row required")
            if bits.size and not np.all((bits == 0) | (bits == 1)):
                raise DataError("membership bits must be 0 or 1")
        probs.setflags(write=False)
        labels.setflags(write=False)
        if bits is not None:
            bits.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "bits", bits)

    @property
    def n_samples(self) -> int:
        return self.probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


def write_posterior_dump(dump: PosteriorDump, path) -> None:
    """Write the delimited dump: header line
    ``mia-dump v1 classes=<C> labeled=<0|1>`` then one
    ``p_1,...,p_C,label[,member]`` row per sample, probabilities at 9
    significant digits."""
    labeled = dump.bits is not None
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(
            f"{POSTERIOR_DUMP_MAGIC} v1 classes={dump.n_classes} labeled={int(labeled)}\n"
        )
        for i in range(dump.n_samples):
            cells = [f"{v:.9g}" for v in dump.probs[i]]
            cells.append(str(int(dump.labels[i])))
            if labeled:
                cells.append(str(int(dump.bits[i])))
            fh.write(",".join(cells))
            fh.write("\n")


def load_posterior_dump(path) -> PosteriorDump:
    """Read a dump written by :func:`write_posterior_dump`.

    Malformed rows are rejected with their (1-based) row index; rows
    that violate the simplex invariant are never silently renormalized.
    """
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if (
            len(parts) != 4
            or parts[0] != POSTERIOR_DUMP_MAGIC
            or parts[1] != "v1"
            or not parts[2].startswith("classes=")
            or not parts[3].startswith("labeled=")
        ):
            raise FormatError(f"{path}: bad dump header {header!r}")
        try:
            n_classes = int(parts[2].removeprefix("classes="))
            labeled = int(parts[3].removeprefix("labeled="))
        except ValueError as exc:
            raise FormatError(f"{path}: bad header fields") from exc
        if n_classes < 1 or labeled not in (0, 1):
            raise FormatError(f"{path}: bad header values {header!r}")
        width = n_classes + 1 + labeled
        probs, labels, bits = [], [], []
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != width:
                raise FormatError(
                    f"{path}: row {i} has {len(cells)} fields, expected {width} "
                    f"(classes mismatch?)"
                )
            try:
                p = [float(c) for c in cells[:n_classes]]
                y = int(cells[n_classes])
                m = int(cells[n_classes + 1]) if labeled else None
            except ValueError as exc:
                raise FormatError(f"{path}: row {i} is not numeric") from exc
            if any(v < 0.0 or v > 1.0 for v in p):
                raise FormatError(f"{path}: row {i}: probability outside [0, 1]")
            if abs(sum(p) - 1.0) > ROW_SUM_TOL:
                raise FormatError(f"{path}: row {i}: probabilities sum to {sum(p):.9g}")
            if not 0 <= y < n_classes:
                raise FormatError(f"{path}: row {i}: class label {y} out of range")
            if labeled and m not in (0, 1):
                raise FormatError(f"{path}: row {i}: membership bit must be 0 or 1")
            probs.append(p)
            labels.append(y)
            if labeled:
                bits.append(m)
    return PosteriorDump(
        probs=np.asarray(probs, dtype=np.float64).reshape(-1, n_classes),
        labels=np.asarray(labels, dtype=np.int64),
        bits=np.asarray(bits, dtype=np.int64) if labeled else None,
    )
