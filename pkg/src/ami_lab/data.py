"""Synthetic data points, pattern statistics and CSV ingestion.

A data point is a ``(d_x, n_x)`` array whose columns are patterns. A
``Dataset`` stacks ``n`` pairwise-distinct points into one ``(n, d_x, n_x)``
array.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import (CannotDeduplicate, DegenerateSingleton, DimensionMismatch, EmptyDataset,
                     InvalidParams, ParseError, ShapeMismatch, SingletonAlphabet)
from .numerics import RngStream

log = logging.getLogger(__name__)

DEDUP_GRID = 1e-9
DEFAULT_DRAW_CAP = 1_000_000


def point_key(x) -> bytes:
    """Hashable key of a point on the 1e-9 grid; equal keys mean 'same point'."""
    x = np.asarray(x, dtype=float)
    return np.round(x / DEDUP_GRID).astype(np.int64).tobytes() + repr(x.shape).encode()


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 2:
            pts = pts[:, :, None]
        if pts.ndim != 3:
            raise ShapeMismatch(f"dataset array must be (n, d_x, n_x), got {pts.shape}")
        if pts.shape[0] < 1:
            raise EmptyDataset("dataset has no points")
        if not np.all(np.isfinite(pts)):
            raise InvalidParams("dataset entries must be finite")
        keys = [point_key(p) for p in pts]
        if len(set(keys)) != len(keys):
            raise CannotDeduplicate("dataset points are not pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_keys", frozenset(keys))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d_x(self) -> int:
        return self.points.shape[1]

    @property
    def n_x(self) -> int:
        return self.points.shape[2]

    def __len__(self):
        return self.n

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def __contains__(self, x) -> bool:
        return point_key(x) in self._keys

    def patterns(self) -> np.ndarray:
        """All patterns as rows, ``(n * n_x, d_x)``."""
        return np.transpose(self.points, (0, 2, 1)).reshape(-1, self.d_x)


# ---------------------------------------------------------------- sources


class PointSource:
    """Distribution over data points that datasets and fresh targets come from."""

    kind = "abstract"
    d_x: int
    n_x: int

    def sample(self, stream: RngStream) -> np.ndarray:
        raise NotImplementedError

    def sample_pattern(self, stream: RngStream) -> np.ndarray:
        return self.sample(stream)[:, 0]

    def capacity(self) -> float:
        return math.inf

    def generate(self, n: int, stream: RngStream, cap: int = DEFAULT_DRAW_CAP) -> Dataset:
        """Draw ``n`` distinct points sequentially from ``stream``, skipping repeats."""
        if n < 1:
            raise InvalidParams("dataset size must be >= 1")
        if n > self.capacity():
            raise CannotDeduplicate(f"{self.kind} source holds only {self.capacity():g} distinct points, {n} requested")
        pts, seen = [], set()
        draws = 0
        while len(pts) < n:
            if draws >= cap:
                raise CannotDeduplicate(f"no {n} distinct points after {cap} draws")
            x = self.sample(stream)
            draws += 1
            key = point_key(x)
            if key not in seen:
                seen.add(key)
                pts.append(x)
        return Dataset(np.stack(pts))

    def fresh(self, dataset: Dataset, stream: RngStream, cap: int = DEFAULT_DRAW_CAP) -> np.ndarray:
        """Rejection-sample a point not in ``dataset``."""
        for _ in range(cap):
            x = self.sample(stream)
            if x not in dataset:
                return x
        raise CannotDeduplicate(f"no point outside the dataset after {cap} draws")

    def describe(self) -> str:
        return self.kind


@dataclass
class OneHotSource(PointSource):
    """Points whose patterns are one-hot vectors chosen uniformly.

    With ``distinct_patterns`` the columns of a point are sampled without
    replacement, so every point is 1-separated.
    """

    d_x: int
    n_x: int = 1
    distinct_patterns: bool = True
    kind: str = field(default="onehot", init=False)

    def __post_init__(self):
        if self.d_x < 2:
            raise InvalidParams("one-hot data needs d_x >= 2")
        if self.distinct_patterns and self.n_x > self.d_x:
            raise InvalidParams("cannot place n_x > d_x distinct one-hot patterns in a point")

    def capacity(self) -> float:
        if self.distinct_patterns:
            return float(math.perm(self.d_x, self.n_x))
        return float(self.d_x) ** self.n_x

    def sample(self, stream: RngStream) -> np.ndarray:
        idx = stream.choice(self.d_x, self.n_x, replace=not self.distinct_patterns)
        x = np.zeros((self.d_x, self.n_x))
        x[idx, np.arange(self.n_x)] = 1.0
        return x

    def sample_pattern(self, stream: RngStream) -> np.ndarray:
        x = np.zeros(self.d_x)
        x[stream.integers(0, self.d_x)] = 1.0
        return x


@dataclass
class SphericalSource(PointSource):
    """Patterns uniform on the unit sphere of R^d_x."""

    d_x: int
    n_x: int = 1
    kind: str = field(default="spherical", init=False)

    def __post_init__(self):
        if self.d_x < 2:
            raise InvalidParams("spherical data needs d_x >= 2")

    def sample(self, stream: RngStream) -> np.ndarray:
        g = stream.standard_normal((self.d_x, self.n_x))
        return g / np.linalg.norm(g, axis=0, keepdims=True)

    def sample_pattern(self, stream: RngStream) -> np.ndarray:
        g = stream.standard_normal(self.d_x)
        return g / np.linalg.norm(g)


@dataclass
class PoolSource(PointSource):
    """Uniform draws from a fixed pool of points (e.g. embeddings from a file)."""

    pool: Dataset
    kind: str = field(default="file", init=False)

    @property
    def d_x(self) -> int:
        return self.pool.d_x

    @property
    def n_x(self) -> int:
        return self.pool.n_x

    def capacity(self) -> float:
        return float(self.pool.n)

    def sample(self, stream: RngStream) -> np.ndarray:
        return np.array(self.pool[stream.integers(0, self.pool.n)])

    def sample_pattern(self, stream: RngStream) -> np.ndarray:
        x = self.sample(stream)
        return x[:, stream.integers(0, x.shape[1])]

    def generate(self, n: int, stream: RngStream, cap: int = DEFAULT_DRAW_CAP) -> Dataset:
        if n > self.pool.n:
            raise CannotDeduplicate(f"pool holds {self.pool.n} points, {n} requested")
        idx = stream.choice(self.pool.n, n, replace=False)
        return Dataset(self.pool.points[idx])

    def fresh(self, dataset: Dataset, stream: RngStream, cap: int = DEFAULT_DRAW_CAP) -> np.ndarray:
        outside = [i for i, p in enumerate(self.pool) if p not in dataset]
        if not outside:
            raise CannotDeduplicate("every pool point is already in the dataset")
        return np.array(self.pool[outside[stream.integers(0, len(outside))]])


def gen_onehot(d_x: int, n_x: int, n: int, stream: RngStream, distinct_patterns: bool = True) -> Dataset:
    return OneHotSource(d_x, n_x, distinct_patterns).generate(n, stream)


def gen_spherical(d_x: int, n_x: int, n: int, stream: RngStream) -> Dataset:
    return SphericalSource(d_x, n_x).generate(n, stream)


# ---------------------------------------------------------------- statistics


def separation(x) -> tuple[np.ndarray, float]:
    """Per-pattern ``x_i.x_i - max_{j != i} x_i.x_j`` and their minimum."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2:
        raise DegenerateSingleton("separation needs at least two patterns")
    g = x.T @ x
    diag = np.diag(g).copy()
    np.fill_diagonal(g, -np.inf)
    per = diag - g.max(axis=1)
    return per, float(per.min())


def dataset_separation(points) -> float:
    return min(separation(p)[1] for p in points)


def max_to_mean(x) -> float:
    """Largest L2 distance from a pattern of ``x`` to the mean of its patterns."""
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=1, keepdims=True)
    return float(np.linalg.norm(x - mean, axis=0).max())


@dataclass(frozen=True)
class SeparationStats:
    delta: float
    m: float
    m_max: float
    r_eps: float = 0.0

    @property
    def m_eps(self) -> float:
        return math.hypot(self.m, self.r_eps)


def pattern_stats(points, r_eps: float = 0.0) -> SeparationStats:
    """Separation, max pattern norm and max distance-to-mean over ``points``.

    ``points`` is a Dataset or any iterable of ``(d_x, n_x)`` arrays. For
    single-pattern points the separation is reported as ``inf``.
    """
    pts = list(points)
    if not pts:
        raise EmptyDataset("no points to summarize")
    m = max(float(np.linalg.norm(p, axis=0).max()) for p in pts)
    m_max = max(max_to_mean(p) for p in pts)
    delta = dataset_separation(pts) if pts[0].shape[1] >= 2 else math.inf
    return SeparationStats(delta, m, m_max, r_eps)


@dataclass(frozen=True)
class GridAlphabet:
    """Product of ``dims`` uniform grids with ``levels`` values spaced ``step``."""

    step: float
    levels: int
    dims: int = 1


@dataclass(frozen=True)
class AlphabetStats:
    delta_x: float
    cardinality: float

    def power(self, copies: int) -> "AlphabetStats":
        with np.errstate(over="ignore"):
            return AlphabetStats(self.delta_x, float(np.power(self.cardinality, copies)))


def alphabet_stats(alphabet) -> AlphabetStats:
    """Half the minimum pairwise L1 distance and the size of an alphabet.

    Accepts an explicit ``(K, ...)`` array of elements (exhaustive search),
    a ``GridAlphabet`` (analytic) or an object with ``delta_x`` and
    ``cardinality`` attributes.
    """
    if isinstance(alphabet, GridAlphabet):
        if alphabet.levels < 2 and alphabet.dims >= 1:
            raise SingletonAlphabet("grid with a single level")
        with np.errstate(over="ignore"):
            card = float(np.power(float(alphabet.levels), alphabet.dims))
        return AlphabetStats(alphabet.step / 2, card)
    if hasattr(alphabet, "delta_x") and hasattr(alphabet, "cardinality"):
        if alphabet.cardinality < 2:
            raise SingletonAlphabet("alphabet has fewer than two elements")
        return AlphabetStats(float(alphabet.delta_x), float(alphabet.cardinality))
    elems = np.asarray(alphabet, dtype=float)
    elems = elems.reshape(elems.shape[0], -1) if elems.ndim > 1 else elems[:, None]
    uniq = {point_key(e): e for e in elems}
    elems = np.array(list(uniq.values()))
    if elems.shape[0] < 2:
        raise SingletonAlphabet("alphabet has fewer than two distinct elements")
    best = math.inf
    for i in range(elems.shape[0] - 1):
        d = np.abs(elems[i + 1:] - elems[i]).sum(axis=1).min()
        best = min(best, float(d))
    return AlphabetStats(best / 2, float(elems.shape[0]))


def empirical_min_distance(points) -> float:
    """Half the minimum pairwise L1 distance among a sample of points."""
    flat = [np.asarray(p, dtype=float).ravel() for p in points]
    if len(flat) < 2:
        raise SingletonAlphabet("need at least two points")
    return min(float(np.abs(a - b).sum()) for a, b in combinations(flat, 2)) / 2


# ---------------------------------------------------------------- patches


def random_patch_embedding(patch: int, channels: int, d_x: int, stream: RngStream) -> np.ndarray:
    """Seeded stand-in for a learned patch projection, scaled by 1/sqrt(fan-in)."""
    fan_in = patch * patch * channels
    return stream.standard_normal((fan_in, d_x)) / math.sqrt(fan_in)


def patch_embed(image, patch: int, w_embed, positions=None) -> np.ndarray:
    """Split an ``H x W x C`` image into patches and embed each as a column."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ShapeMismatch(f"image must be H x W x C, got {img.shape}")
    h, w, c = img.shape
    if patch < 1 or h % patch or w % patch:
        raise ShapeMismatch(f"image {h}x{w} not divisible into {patch}x{patch} patches")
    w_embed = np.asarray(w_embed, dtype=float)
    if w_embed.shape[0] != patch * patch * c:
        raise ShapeMismatch(f"W_embed has {w_embed.shape[0]} rows, expected {patch * patch * c}")
    gh, gw = h // patch, w // patch
    flat = img.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4).reshape(gh * gw, -1)
    emb = flat @ w_embed
    if positions is not None:
        positions = np.asarray(positions, dtype=float)
        if positions.shape != emb.shape:
            raise ShapeMismatch(f"positions shape {positions.shape} != {emb.shape}")
        emb = emb + positions
    return emb.T.copy()


# ---------------------------------------------------------------- CSV


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point_id", "pattern_id"] + [f"f{i}" for i in range(dataset.d_x)])
        for pid, x in enumerate(dataset):
            for j in range(dataset.n_x):
                w.writerow([pid, j] + [repr(float(v)) for v in x[:, j]])


def load_embeddings(path, dedupe: bool = True) -> Dataset:
    """Read the long-format CSV written by ``save_dataset``.

    Duplicate points are dropped (with a log message) when ``dedupe`` is set,
    since a dataset must hold distinct points.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or all(not r for r in rows):
        raise EmptyDataset(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[:2] != ["point_id", "pattern_id"]:
        raise ParseError("header must start with point_id,pattern_id,f0", line=1)
    d = len(header) - 2
    if header[2:] != [f"f{i}" for i in range(d)]:
        raise ParseError("feature columns must be named f0..f{d-1}", line=1)
    points: dict[int, dict[int, np.ndarray]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d + 2:
            raise DimensionMismatch(f"expected {d + 2} fields, got {len(row)}", line=lineno)
        try:
            pid, jid = int(row[0]), int(row[1])
            vals = np.array([float(c) for c in row[2:]])
        except ValueError as exc:
            raise ParseError(f"malformed value ({exc})", line=lineno) from None
        if not np.all(np.isfinite(vals)):
            raise ParseError("non-finite feature value", line=lineno)
        cols = points.setdefault(pid, {})
        if jid in cols:
            raise ParseError(f"duplicate pattern {jid} for point {pid}", line=lineno)
        cols[jid] = vals
    if not points:
        raise EmptyDataset(f"{path}: no data rows")
    n_x = len(next(iter(points.values())))
    arrs, seen = [], set()
    for pid in sorted(points):
        cols = points[pid]
        if sorted(cols) != list(range(n_x)):
            raise DimensionMismatch(f"point {pid} has patterns {sorted(cols)}, expected 0..{n_x - 1}")
        x = np.stack([cols[j] for j in range(n_x)], axis=1)
        key = point_key(x)
        if key in seen:
            if not dedupe:
                raise CannotDeduplicate(f"point {pid} duplicates an earlier point")
            log.info("dropping duplicate point %d from %s", pid, path)
            continue
        seen.add(key)
        arrs.append(x)
    return Dataset(np.stack(arrs))
