"""Small dense linear algebra and seeded random streams.

Everything here operates on plain ``numpy`` arrays. Matrices are 2-D float
arrays; the attack modules never need anything larger than a few thousand
rows, so no effort is spent on blocking or sparsity.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidProbability, RankDeficient, ShapeMismatch

# Repo-wide tolerances.
RANK_TOL = 1e-12
RECON_TOL = 1e-8
SIMPLEX_TOL = 1e-12


def qr_factorize(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Householder QR of a square, full-rank matrix.

    Raises RankDeficient when a diagonal entry of R is below
    ``RANK_TOL * max|W|``; callers re-draw the random part and retry.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ShapeMismatch(f"qr_factorize expects a square matrix, got {w.shape}")
    scale = np.max(np.abs(w)) if w.size else 0.0
    q, r = np.linalg.qr(w)
    if scale == 0.0 or np.min(np.abs(np.diag(r))) < RANK_TOL * scale:
        raise RankDeficient("matrix is numerically rank deficient")
    return q, r


def pseudo_inverse(a: np.ndarray) -> np.ndarray:
    """Moore-Penrose inverse of a full-row-rank matrix.

    Uses the Gram route ``A^T (A A^T)^-1`` evaluated through a QR factorization
    of ``A^T``: with ``A^T = QR`` the inverse is ``Q R^-T``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ShapeMismatch(f"pseudo_inverse expects a matrix, got ndim={a.ndim}")
    m, n = a.shape
    if m > n:
        raise RankDeficient(f"{m}x{n} matrix cannot have full row rank")
    q, r = np.linalg.qr(a.T)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.max() == 0.0 or diag.min() < RANK_TOL * diag.max():
        raise RankDeficient("matrix does not have full row rank")
    return np.linalg.solve(r, q.T).T


def softmax_columns(logits: np.ndarray) -> np.ndarray:
    """Column-wise softmax with a per-column max shift."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def norm(x, kind: str = "L2") -> float:
    """Entrywise vector norm; matrices are treated as flattened vectors."""
    x = np.abs(np.asarray(x, dtype=float)).ravel()
    if x.size == 0:
        return 0.0
    kind = kind.upper()
    if kind == "L1":
        return float(x.sum())
    if kind == "L2":
        return float(np.sqrt(np.dot(x, x)))
    if kind in ("LINF", "INF"):
        return float(x.max())
    raise ValueError(f"unknown norm kind {kind!r}")


class RngStream:
    """Reproducible random stream keyed by ``(master_seed, stream_id)``.

    Built on numpy's ``SeedSequence`` spawn keys, so deriving the stream for
    trial ``i`` is O(1) and independent of how many other streams exist or in
    which order they are consumed. ``child(j)`` extends the spawn key and is
    what per-point and per-pattern perturbation uses.
    """

    __slots__ = ("master_seed", "stream_id", "path", "_gen")

    def __init__(self, master_seed: int, stream_id: int = 0, path: tuple = ()):
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(int(p) for p in path)
        self._gen = None  # built on first draw; streams used only to spawn children stay cheap

    def child(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id, self.path + (index,))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, *self.path))
            self._gen = np.random.Generator(np.random.PCG64(seq))
        return self._gen

    def __repr__(self):
        return f"RngStream(seed={self.master_seed}, id={self.stream_id}, path={self.path})"

    def uniform01(self, size=None):
        return self.generator.random(size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def bernoulli(self, p, size=None):
        p_arr = np.asarray(p, dtype=float)
        if np.any(~np.isfinite(p_arr)) or np.any(p_arr < 0.0) or np.any(p_arr > 1.0):
            raise InvalidProbability(f"bernoulli probability outside [0, 1]: {p}")
        if size is None and p_arr.ndim > 0:
            size = p_arr.shape
        u = self.generator.random(size)
        out = (u < p_arr).astype(np.int8)
        return int(out) if np.ndim(out) == 0 else out

    def categorical(self, weights) -> int:
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(~np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
            raise InvalidProbability("categorical weights must be non-negative with positive sum")
        cdf = np.cumsum(w)
        u = self.generator.random() * cdf[-1]
        return int(min(np.searchsorted(cdf, u, side="right"), w.size - 1))

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = True):
        return self.generator.choice(n, size=size, replace=replace)


def rng_draw(stream: RngStream, dist: str, param=None):
    """Draw one value from a named distribution (see RngStream methods)."""
    if dist == "uniform01":
        return float(stream.uniform01())
    if dist == "standard_normal":
        return float(stream.standard_normal())
    if dist == "bernoulli":
        return stream.bernoulli(param)
    if dist == "categorical":
        return stream.categorical(param)
    raise ValueError(f"unknown distribution {dist!r}")
