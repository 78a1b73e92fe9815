"""Matching probability matrices and simulated linkages.

A matching probability matrix ``Q`` holds ``q_ij = P(z_i = y_j)``. It is stored
either densely or, canonically, as a list of exchangeable-error blocks
``(size, gamma)``: inside a block of size ``m`` the diagonal is ``gamma`` and
every off-diagonal entry is ``(1 - gamma) / (m - 1)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

DEFAULT_TOL = 1e-9


class LinkageError(ValueError):
    """Invalid matching matrix or incompatible linkage request."""


@dataclass(frozen=True)
class MatchingMatrix:
    """Doubly stochastic matching probability matrix.

    Build with :func:`ele_matrix`, :func:`block_ele`, :func:`block_diagonal` or
    :meth:`from_dense`; the raw constructor does not validate.
    """

    sizes: np.ndarray | None = None
    gammas: np.ndarray | None = None
    dense: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_dense(cls, matrix, tol: float = DEFAULT_TOL) -> "MatchingMatrix":
        arr = np.array(matrix, dtype=float, copy=True)
        problems = validate(arr, tol)
        if problems:
            raise LinkageError("; ".join(problems))
        arr.setflags(write=False)
        return cls(dense=arr)

    @property
    def is_block(self) -> bool:
        return self.sizes is not None

    @property
    def n(self) -> int:
        if self.is_block:
            return int(self.sizes.sum())
        return int(self.dense.shape[0])

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.sizes)[:-1])).astype(np.int64)

    @property
    def off_diagonal(self) -> np.ndarray:
        m = self.sizes
        with np.errstate(divide="ignore", invalid="ignore"):
            off = np.where(m > 1, (1.0 - self.gammas) / np.maximum(m - 1, 1), 0.0)
        return off

    def record_gamma(self) -> np.ndarray:
        """Per-record probability of a correct link (the diagonal of Q)."""
        if self.is_block:
            return np.repeat(self.gammas, self.sizes)
        return np.diag(self.dense).copy()

    def to_dense(self) -> np.ndarray:
        if not self.is_block:
            return np.array(self.dense)
        out = np.zeros((self.n, self.n))
        for s, m, g, o in zip(self.starts, self.sizes, self.gammas, self.off_diagonal):
            blk = np.full((m, m), o)
            np.fill_diagonal(blk, g)
            out[s : s + m, s : s + m] = blk
        return out

    def apply(self, V: np.ndarray, *, transpose: bool = False) -> np.ndarray:
        """``Q @ V`` (or ``Q.T @ V``) without densifying block storage."""
        V = np.asarray(V, dtype=float)
        vec = V.ndim == 1
        V2 = V[:, None] if vec else V
        if V2.shape[0] != self.n:
            raise LinkageError(f"dimension mismatch: Q is {self.n}x{self.n}, input has {V2.shape[0]} rows")
        if self.is_block:
            # exchangeable blocks are symmetric
            out = _kernels.block_apply(
                np.ascontiguousarray(V2), self.starts, self.sizes.astype(np.int64), self.gammas, self.off_diagonal
            )
        else:
            out = (self.dense.T if transpose else self.dense) @ V2
        return out[:, 0] if vec else out

    def apply_squared(self, V: np.ndarray) -> np.ndarray:
        """``(Q * Q) @ V`` with ``*`` elementwise."""
        V = np.asarray(V, dtype=float)
        vec = V.ndim == 1
        V2 = V[:, None] if vec else V
        if self.is_block:
            out = _kernels.block_apply(
                np.ascontiguousarray(V2),
                self.starts,
                self.sizes.astype(np.int64),
                self.gammas**2,
                self.off_diagonal**2,
            )
        else:
            out = (self.dense * self.dense) @ V2
        return out[:, 0] if vec else out

    def to_json(self) -> dict:
        if not self.is_block:
            raise LinkageError("only block-ELE matrices have a JSON form; write dense matrices as CSV")
        return {
            "type": "ele",
            "blocks": [{"size": int(m), "gamma": float(g)} for m, g in zip(self.sizes, self.gammas)],
        }


@dataclass(frozen=True)
class LinkedDataset:
    """Covariates ``X`` with the linked response ``z``.

    ``y`` is the true response in record order and is only known in
    simulations; when given, ``z`` must be a rearrangement of it.
    """

    X: np.ndarray
    z: np.ndarray
    y: np.ndarray | None = None
    has_intercept_column: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        z = np.asarray(self.z, dtype=float).ravel()
        n, d = X.shape
        if not n >= d >= 1:
            raise LinkageError(f"need n >= d >= 1, got n={n}, d={d}")
        if z.shape[0] != n:
            raise LinkageError(f"z has {z.shape[0]} entries, X has {n} rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "z", z)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if y.shape[0] != n or not np.array_equal(np.sort(y), np.sort(z)):
                raise LinkageError("z must be a permutation of y")
            object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def block_ele(blocks: Iterable[tuple[int, float]]) -> MatchingMatrix:
    """Block-diagonal ELE matrix from ``(size, gamma)`` pairs."""
    sizes, gammas = [], []
    for size, gamma in blocks:
        size = int(size)
        gamma = float(gamma)
        if size < 1:
            raise LinkageError(f"block size must be positive, got {size}")
        if not 0.0 <= gamma <= 1.0 or not np.isfinite(gamma):
            raise LinkageError(f"gamma must lie in [0, 1], got {gamma}")
        if size == 1 and gamma != 1.0:
            raise LinkageError(f"a block of size 1 must have gamma = 1, got {gamma}")
        sizes.append(size)
        gammas.append(gamma)
    if not sizes:
        raise LinkageError("at least one block is required")
    s = np.asarray(sizes, dtype=np.int64)
    g = np.asarray(gammas, dtype=float)
    s.setflags(write=False)
    g.setflags(write=False)
    return MatchingMatrix(sizes=s, gammas=g)


def ele_matrix(gamma: float, n: int) -> MatchingMatrix:
    return block_ele([(n, gamma)])


def identity(n: int) -> MatchingMatrix:
    return block_ele([(1, 1.0)] * n) if n <= 1 else block_ele([(n, 1.0)])


def block_diagonal(blocks: Sequence[MatchingMatrix]) -> MatchingMatrix:
    """Assemble blocks along the diagonal.

    Stays in block-ELE form when every input is; otherwise the result is dense.
    """
    if not blocks:
        raise LinkageError("empty block list")
    if all(b.is_block for b in blocks):
        pairs = [(m, g) for b in blocks for m, g in zip(b.sizes, b.gammas)]
        return block_ele(pairs)
    n = sum(b.n for b in blocks)
    out = np.zeros((n, n))
    s = 0
    for b in blocks:
        out[s : s + b.n, s : s + b.n] = b.to_dense()
        s += b.n
    return MatchingMatrix.from_dense(out)


def transform_design(Q: MatchingMatrix, X: np.ndarray) -> np.ndarray:
    """Bias-corrected design ``W = QX``; row ``i`` is ``sum_j q_ij x_j``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise LinkageError(f"X must be 2-D, got shape {X.shape}")
    if Q.n != X.shape[0]:
        raise LinkageError(f"dimension mismatch: Q is {Q.n}x{Q.n}, X has {X.shape[0]} rows")
    if Q.is_block and np.all(Q.gammas == 1.0):
        return X.copy()
    return Q.apply(X)


def validate(Q, tol: float = DEFAULT_TOL) -> list[str]:
    """List every way ``Q`` fails to be a doubly stochastic probability matrix."""
    if isinstance(Q, MatchingMatrix):
        if Q.is_block:
            problems = []
            for k, (m, g) in enumerate(zip(Q.sizes, Q.gammas)):
                if not -tol <= g <= 1 + tol:
                    problems.append(f"block {k}: gamma {g} outside [0, 1]")
                if m == 1 and abs(g - 1.0) > tol:
                    problems.append(f"block {k}: size-1 block with gamma {g}")
            return problems
        arr = Q.dense
    else:
        arr = np.asarray(Q, dtype=float)
    problems = []
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        return [f"matrix must be square, got shape {arr.shape}"]
    if not np.all(np.isfinite(arr)):
        problems.append("non-finite entries")
        return problems
    bad = np.argwhere((arr < -tol) | (arr > 1 + tol))
    if len(bad):
        i, j = bad[0]
        problems.append(f"{len(bad)} entries outside [0, 1], first at ({i}, {j}) = {arr[i, j]}")
    for axis, label in ((1, "row"), (0, "column")):
        sums = arr.sum(axis=axis)
        for k in np.flatnonzero(np.abs(sums - 1.0) > tol):
            problems.append(f"{label} {k} sums to {sums[k]!r}")
    return problems


def sample_linkage(Q: MatchingMatrix, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Draw source indices: ``out[i] = j`` means ``z_i = y_j``.

    ``permutation`` returns a within-block bijection whose per-record
    correct-link probability is exactly ``gamma``: the number of fixed points
    ``K`` in a block of size ``m`` is Binomial(m, gamma) with the impossible
    value ``m - 1`` split evenly between ``m`` and ``m - 2``; ``K`` uniformly
    chosen records keep their own link and the rest get a uniform derangement.
    Exchangeability makes every off-diagonal link equally likely.

    ``independent`` draws each source index from row ``i`` of ``Q``
    independently. It is not a permutation and is meant for checking moment
    formulas that treat links as independent.
    """
    if mode == "permutation":
        if not Q.is_block:
            raise LinkageError("permutation sampling needs block-ELE structure")
        return _sample_permutation(Q, rng)
    if mode == "independent":
        return _sample_independent(Q, rng)
    raise LinkageError(f"unknown sampling mode {mode!r}")


def _sample_permutation(Q: MatchingMatrix, rng: np.random.Generator) -> np.ndarray:
    sizes = Q.sizes
    starts = Q.starts
    n = Q.n
    k = rng.binomial(sizes, Q.gammas)
    near = (k == sizes - 1) & (sizes > 1)
    if near.any():
        coin = rng.random(near.sum()) < 0.5
        k[near] = np.where(coin, sizes[near], sizes[near] - 2)
    block_of = np.repeat(np.arange(len(sizes)), sizes)
    # choose which records stay fixed: the k smallest random keys in each block
    keys = rng.random(n)
    order = np.lexsort((keys, block_of))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n) - np.repeat(starts, sizes)
    fixed = rank < np.repeat(k, sizes)
    perm = np.arange(n)
    moving = np.flatnonzero(~fixed)
    if len(moving) == 0:
        return perm
    mblock = block_of[moving]
    pending = np.ones(len(moving), dtype=bool)
    targets = moving.copy()
    # rejection sampling of a uniform derangement, all blocks at once
    while pending.any():
        idx = np.flatnonzero(pending)
        sub_block = mblock[idx]
        sub_keys = rng.random(len(idx))
        shuffled = idx[np.lexsort((sub_keys, sub_block))]
        # idx is sorted by block already, so position p within idx maps to shuffled[p]
        targets[idx] = moving[shuffled]
        hit = targets[idx] == moving[idx]
        bad_blocks = np.unique(sub_block[hit])
        pending[:] = False
        if len(bad_blocks):
            pending[np.isin(mblock, bad_blocks)] = True
    perm[moving] = targets
    return perm


def _sample_independent(Q: MatchingMatrix, rng: np.random.Generator) -> np.ndarray:
    n = Q.n
    u = rng.random(n)
    if Q.is_block:
        sizes = np.repeat(Q.sizes, Q.sizes)
        start = np.repeat(Q.starts, Q.sizes)
        local = np.arange(n) - start
        stay = u < Q.record_gamma()
        offset = rng.integers(1, np.maximum(sizes, 2))
        other = start + (local + offset) % np.maximum(sizes, 1)
        return np.where(stay | (sizes == 1), np.arange(n), other)
    cdf = np.cumsum(Q.dense, axis=1)
    cdf[:, -1] = 1.0
    return np.minimum((cdf < u[:, None]).sum(axis=1), n - 1)


def apply_linkage(y: np.ndarray, source: np.ndarray) -> np.ndarray:
    return np.asarray(y)[source]


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def load_mpm(path: str | Path) -> MatchingMatrix:
    """Read a matching matrix from ``.json`` (block-ELE) or ``.csv`` (dense)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
        if doc.get("type") != "ele":
            raise LinkageError(f"unsupported MPM type {doc.get('type')!r}")
        return block_ele((b["size"], b["gamma"]) for b in doc["blocks"])
    with path.open(newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    try:
        [float(v) for v in rows[0]]
    except (ValueError, IndexError):
        rows = rows[1:]  # header row
    try:
        return MatchingMatrix.from_dense(np.asarray([[float(v) for v in row] for row in rows]))
    except ValueError as exc:
        raise LinkageError(f"{path}: {exc}") from None


def save_mpm(Q: MatchingMatrix, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(Q.to_json(), indent=2) + "\n")
        return
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"q{j + 1}" for j in range(Q.n)])
        for row in Q.to_dense():
            writer.writerow([repr(float(v)) for v in row])
