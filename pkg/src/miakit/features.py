"""Attack input features derived from a posterior vector.

The attack consumes the posterior concatenated with its maximum and its
information entropy, giving a vector of length C+2. Natural logarithms
throughout, consistent with the training losses.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, FormatError

FEATURE_DUMP_MAGIC = "mia-features"


def entropy(p) -> float:
    """Information entropy -sum(p_i ln p_i), with 0 ln 0 = 0.

    Defined for non-negative vectors; on the probability simplex the
    range is [0, ln C].
    """
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise DomainError("entropy of an empty vector")
    if np.any(p < 0.0):
        raise DomainError("entropy requires non-negative entries")
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def build_feature(p) -> np.ndarray:
    """Posterior extended with its max and entropy, in that fixed order."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise DomainError("build_feature expects a single posterior vector")
    if np.any(p < 0.0):
        raise DomainError("posterior has negative entries")
    return np.concatenate([p, [float(p.max())], [entropy(p)]])


def build_features(rows) -> np.ndarray:
    """Row-wise :func:`build_feature` for a (n, C) posterior matrix."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise DomainError("build_features expects a matrix of posterior rows")
    if np.any(rows < 0.0):
        raise DomainError("posterior has negative entries")
    maxes = rows.max(axis=1, keepdims=True)
    logs = np.where(rows > 0.0, np.log(np.where(rows > 0.0, rows, 1.0)), 0.0)
    ents = -(rows * logs).sum(axis=1, keepdims=True)
    return np.hstack([rows, maxes, ents])


def write_feature_dump(rows, path) -> None:
    """Delimited attack-data dump: header ``mia-features v1 dim=<D>``
    then one comma-separated vector per line at 9 significant digits.

    View pairs are stored interleaved: rows 2k and 2k+1 are the two
    views of sample k.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise DomainError("feature dump expects a matrix")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{FEATURE_DUMP_MAGIC} v1 dim={rows.shape[1]}\n")
        for row in rows:
            fh.write(",".join(f"{v:.9g}" for v in row))
            fh.write("\n")


def load_feature_dump(path) -> np.ndarray:
    """Read a dump written by :func:`write_feature_dump`."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 3 or parts[0] != FEATURE_DUMP_MAGIC or parts[1] != "v1":
            raise FormatError(f"{path}: bad feature-dump header {header!r}")
        try:
            dim = int(parts[2].removeprefix("dim="))
        except ValueError as exc:
            raise FormatError(f"{path}: bad dim field in header") from exc
        rows = []
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            vals = line.split(",")
            if len(vals) != dim:
                raise FormatError(f"{path}: row {i} has {len(vals)} values, expected {dim}")
            try:
                rows.append([float(v) for v in vals])
            except ValueError as exc:
                raise FormatError(f"{path}: row {i} is not numeric") from exc
    return np.asarray(rows, dtype=np.float64).reshape(-1, dim)
