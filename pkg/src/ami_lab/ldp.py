"""Local differential privacy mechanisms applied to attack inputs.

Five perturbations are provided (GRR, permanent RAPPOR, dBitFlipPM, BitRand,
OME) plus two non-private baselines: ``identity`` for unprotected data and
``additive`` for bounded-norm continuous noise. All of them perturb one
pattern (a column of a data point) at a time.

Categorical mechanisms accept two alphabets:

``onehot``
    the whole pattern is one categorical value; the pattern must be (or is
    snapped to) one of the ``d_x`` one-hot vectors.
``grid``
    every feature is quantized into ``2**bits_per_feature`` levels and
    perturbed as an independent categorical value; outputs are mapped back
    to level midpoints.

BitRand and OME always operate on the fixed-point binary encoding.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidAlphabet, InvalidParams
from .numerics import RngStream

KINDS = ("identity", "grr", "rappor", "dbitflip", "bitrand", "ome", "additive")
_KIND_ALIASES = {
    "identity": "identity",
    "none": "identity",
    "grr": "grr",
    "rappor": "rappor",
    "dbitflippm": "dbitflip",
    "dbitflip": "dbitflip",
    "bitrand": "bitrand",
    "ome": "ome",
    "additive": "additive",
    "sphere": "additive",
}
DISPLAY_NAMES = {
    "identity": "Identity",
    "grr": "GRR",
    "rappor": "RAPPOR",
    "dbitflip": "dBitFlipPM",
    "bitrand": "BitRand",
    "ome": "OME",
    "additive": "Additive",
}


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


# ---------------------------------------------------------------- codec


@dataclass(frozen=True)
class BinaryCodec:
    """Uniform fixed-point quantizer with ``l`` bits per feature.

    Bit ``j`` of a feature (``i mod l == j`` in the flattened vector) carries
    weight ``2**j``, so the last bit of each group is the most significant.
    ``r`` is informational; encode/decode accept any feature count.
    """

    l: int = 4
    v_min: float = -1.0
    v_max: float = 1.0
    r: int | None = None

    def __post_init__(self):
        if self.l < 1:
            raise InvalidParams("bits per feature must be >= 1")
        if not self.v_min < self.v_max:
            raise InvalidParams("clip range requires v_min < v_max")

    @property
    def levels(self) -> int:
        return 1 << self.l

    @property
    def step(self) -> float:
        return (self.v_max - self.v_min) / self.levels

    def quantize(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.v_min, self.v_max)
        lvl = np.floor((x - self.v_min) / self.step).astype(np.int64)
        return np.clip(lvl, 0, self.levels - 1)

    def midpoint(self, levels) -> np.ndarray:
        return self.v_min + (np.asarray(levels, dtype=float) + 0.5) * self.step

    def encode(self, x) -> np.ndarray:
        lvl = self.quantize(x).ravel()
        shifts = np.arange(self.l)
        return ((lvl[:, None] >> shifts[None, :]) & 1).astype(np.int8).ravel()

    def decode(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64).ravel()
        if bits.size % self.l:
            raise InvalidParams(f"bit vector length {bits.size} not divisible by l={self.l}")
        weights = 1 << np.arange(self.l)
        lvl = bits.reshape(-1, self.l) @ weights
        return self.midpoint(lvl)


def codec_encode(x, codec: BinaryCodec) -> np.ndarray:
    return codec.encode(x)


def codec_decode(bits, codec: BinaryCodec) -> np.ndarray:
    return codec.decode(bits)


@dataclass(frozen=True)
class CategoricalAlphabet:
    """k levels with a real embedding per level (rows of ``embedding``)."""

    embedding: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=float)
        if emb.ndim != 2 or emb.shape[0] < 2:
            raise InvalidAlphabet("alphabet needs at least two levels")
        object.__setattr__(self, "embedding", emb)

    @classmethod
    def onehot(cls, k: int) -> "CategoricalAlphabet":
        if k < 2:
            raise InvalidAlphabet("one-hot alphabet needs k >= 2")
        return cls(np.eye(k))

    @property
    def k(self) -> int:
        return self.embedding.shape[0]

    def level_of(self, x) -> int:
        """Index of the nearest embedding in L2 (exact for alphabet members)."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.embedding.shape[1]:
            raise InvalidAlphabet(f"pattern of size {x.size} vs alphabet dim {self.embedding.shape[1]}")
        scores = 2.0 * self.embedding @ x - np.einsum("ij,ij->i", self.embedding, self.embedding)
        return int(np.argmax(scores))


# ---------------------------------------------------------------- mechanisms


def grr_keep_probability(epsilon: float, k: int) -> float:
    return 1.0 / (1.0 + (k - 1) * _exp(-epsilon))


def grr_perturb(level: int, k: int, epsilon: float, stream: RngStream) -> int:
    """Generalized randomized response over ``k`` levels."""
    if k < 2:
        raise InvalidAlphabet("GRR needs k >= 2")
    if not 0 <= level < k:
        raise InvalidAlphabet(f"level {level} outside alphabet of size {k}")
    if stream.uniform01() < grr_keep_probability(epsilon, k):
        return int(level)
    other = int(stream.integers(0, k - 1))
    return other if other < level else other + 1


def grr_perturb_batch(levels, k: int, epsilon: float, stream: RngStream) -> np.ndarray:
    """Vectorized GRR: every entry of ``levels`` is perturbed independently."""
    if k < 2:
        raise InvalidAlphabet("GRR needs k >= 2")
    levels = np.asarray(levels, dtype=np.int64)
    keep = stream.uniform01(levels.shape) < grr_keep_probability(epsilon, k)
    shift = stream.integers(1, k, size=levels.shape)
    return np.where(keep, levels, (levels + shift) % k)


def rappor_f_from_epsilon(epsilon: float, h: int = 1) -> float:
    """Solve ``epsilon = 2h ln((1 - f/2) / (f/2))`` for f."""
    return 2.0 / (_exp(epsilon / (2.0 * h)) + 1.0)


def rappor_perturb(bits, epsilon: float, stream: RngStream, f: float | None = None,
                   p: float | None = None, q: float | None = None) -> np.ndarray:
    """Permanent randomized response on a Bloom-filter bit vector.

    Each bit becomes 1 w.p. f/2, 0 w.p. f/2 and is kept otherwise. When both
    ``p`` and ``q`` are given the instantaneous step is applied on top.
    """
    bits = np.asarray(bits, dtype=np.int8)
    if f is None:
        f = rappor_f_from_epsilon(epsilon)
    if not 0.0 <= f <= 1.0:
        raise InvalidParams(f"RAPPOR f must lie in [0, 1], got {f}")
    u = stream.uniform01(bits.shape)
    out = np.where(u < f / 2, 1, np.where(u < f, 0, bits)).astype(np.int8)
    if p is not None and q is not None:
        u2 = stream.uniform01(bits.shape)
        out = (u2 < np.where(out == 1, q, p)).astype(np.int8)
    return out


def dbitflip_perturb(value: int, k: int, d: int, epsilon: float, stream: RngStream):
    """Report ``d`` random buckets of ``[k]`` with one biased bit each."""
    if not 1 <= d <= k:
        raise InvalidParams(f"dBitFlipPM needs 1 <= d <= k (d={d}, k={k})")
    buckets = np.sort(stream.choice(k, d, replace=False))
    e = _exp(epsilon / 2)
    p_hit = 1.0 / (1.0 + 1.0 / e)
    p_miss = 1.0 / (e + 1.0)
    p = np.where(buckets == value, p_hit, p_miss)
    bits = (stream.uniform01(d) < p).astype(np.int8)
    return buckets, bits


def dbitflip_scores(buckets, bits, k: int, d: int, epsilon: float) -> np.ndarray:
    """Single-report histogram debiasing; unreported buckets count as 0-bits."""
    full = np.zeros(k)
    full[np.asarray(buckets)] = np.asarray(bits, dtype=float)
    e = _exp(epsilon / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = (e + 1.0) / (e - 1.0) if math.isfinite(e) else 1.0
        c2 = 1.0 / (e - 1.0) if math.isfinite(e) else 0.0
    if not (math.isfinite(c1) and math.isfinite(c2)):
        return full  # epsilon == 0: only the ordering of bits is meaningful
    return (k / d) * full * c1 - c2


def dbitflip_decode(buckets, bits, k: int, d: int, epsilon: float, stream: RngStream) -> int:
    """Argmax of debiased scores; ties broken uniformly at random."""
    scores = dbitflip_scores(buckets, bits, k, d, epsilon)
    best = np.flatnonzero(scores == scores.max())
    return int(best[stream.integers(0, best.size)]) if best.size > 1 else int(best[0])


def _bit_positions(n: int, l: int) -> np.ndarray:
    return (np.arange(n) % l) / l


def bitrand_probabilities(n_bits: int, l: int, epsilon: float, alpha: float, invert: bool = False):
    """Per-bit ``(P[out=1 | bit=1], P[out=1 | bit=0])`` for BitRand."""
    frac = _bit_positions(n_bits, l)
    with np.errstate(over="ignore", invalid="ignore"):
        expo = np.where(frac == 0.0, 0.0, frac * epsilon)
        term = alpha * np.exp(expo)
        low = 1.0 / (1.0 + term)          # 1 / (1 + a e^{...})
        high = 1.0 / (1.0 + 1.0 / term)   # a e^{...} / (1 + a e^{...})
    if invert:
        return high, low
    return low, high


def bitrand_perturb(bits, epsilon: float, alpha: float, l: int, stream: RngStream,
                    invert: bool = False) -> np.ndarray:
    """BitRand with the bit-position term ``(i mod l) / l``.

    With ``invert=False`` the printed probabilities are used verbatim: an input
    1-bit is reported as 1 with probability ``1 / (1 + alpha e^{...})``, which
    shrinks as epsilon grows. ``invert=True`` swaps the two cases.
    """
    if alpha <= 0:
        raise InvalidParams("BitRand alpha must be > 0")
    bits = np.asarray(bits, dtype=np.int8).ravel()
    if bits.size % l:
        raise InvalidParams(f"bit vector length {bits.size} not divisible by l={l}")
    p1, p0 = bitrand_probabilities(bits.size, l, epsilon, alpha, invert)
    p = np.where(bits == 1, p1, p0)
    return (stream.uniform01(bits.size) < p).astype(np.int8)


def ome_probabilities(n_bits: int, epsilon: float, alpha: float):
    """Per-bit ``(P[out=1 | bit=1], P[out=1 | bit=0])`` for OME."""
    idx = np.arange(n_bits)
    p1 = np.where(idx % 2 == 0, alpha / (1.0 + alpha), 1.0 / (1.0 + alpha ** 3))
    p0 = np.full(n_bits, 1.0 / (1.0 + alpha * _exp(epsilon / n_bits)))
    return p1, p0


def ome_perturb(bits, epsilon: float, alpha: float, l: int, stream: RngStream) -> np.ndarray:
    if alpha <= 0:
        raise InvalidParams("OME alpha must be > 0")
    bits = np.asarray(bits, dtype=np.int8).ravel()
    if bits.size % l:
        raise InvalidParams(f"bit vector length {bits.size} not divisible by l={l}")
    p1, p0 = ome_probabilities(bits.size, epsilon, alpha)
    p = np.where(bits == 1, p1, p0)
    return (stream.uniform01(bits.size) < p).astype(np.int8)


# ---------------------------------------------------------------- config


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise InvalidParams(f"not a boolean: {value!r}")


def _parse_epsilon(value) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "none"):
        return math.inf
    return float(value)


@dataclass(frozen=True)
class MechanismConfig:
    """Immutable description of one perturbation mechanism."""

    kind: str = "identity"
    epsilon: float = math.inf
    alphabet: str = "grid"
    alpha: float = 1.0
    bits_per_feature: int = 4
    clip_min: float = -1.0
    clip_max: float = 1.0
    rappor_f: float | None = None
    rappor_p: float | None = None
    rappor_q: float | None = None
    dbit_d: int | None = None
    bitrand_invert: bool = False
    noise_radius: float = 0.0

    def __post_init__(self):
        kind = _KIND_ALIASES.get(str(self.kind).lower())
        if kind is None:
            raise InvalidParams(f"unknown mechanism {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.epsilon >= 0:
            raise InvalidParams("epsilon must be >= 0")
        if self.alphabet not in ("onehot", "grid"):
            raise InvalidParams(f"alphabet must be 'onehot' or 'grid', got {self.alphabet!r}")
        if self.alpha <= 0:
            raise InvalidParams("alpha must be > 0")
        if self.rappor_f is not None and not 0.0 <= self.rappor_f <= 1.0:
            raise InvalidParams("rappor_f must lie in [0, 1]")
        for name in ("rappor_p", "rappor_q"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise InvalidParams(f"{name} must lie in [0, 1]")
        if self.dbit_d is not None and self.dbit_d < 1:
            raise InvalidParams("dbit_d must be >= 1")
        if self.noise_radius < 0:
            raise InvalidParams("noise_radius must be >= 0")
        BinaryCodec(self.bits_per_feature, self.clip_min, self.clip_max)

    @property
    def name(self) -> str:
        return DISPLAY_NAMES[self.kind]

    @property
    def codec(self) -> BinaryCodec:
        return BinaryCodec(self.bits_per_feature, self.clip_min, self.clip_max)

    @property
    def uses_grid(self) -> bool:
        return self.kind in ("bitrand", "ome") or (
            self.kind in ("grr", "rappor", "dbitflip") and self.alphabet == "grid")

    @property
    def is_ldp(self) -> bool:
        return self.kind not in ("identity", "additive")

    def with_epsilon(self, epsilon: float) -> "MechanismConfig":
        return replace(self, epsilon=epsilon)

    # file keys: mechanism, epsilon, alpha, bits_per_feature, clip_min, clip_max,
    # rappor_f, dbit_d (+ alphabet, rappor_p, rappor_q, bitrand_invert, noise_radius)
    _FLOAT_KEYS = ("alpha", "clip_min", "clip_max", "rappor_f", "rappor_p", "rappor_q", "noise_radius")
    _INT_KEYS = ("bits_per_feature", "dbit_d")

    @classmethod
    def from_mapping(cls, m) -> "MechanismConfig":
        kw = {}
        if "mechanism" in m:
            kw["kind"] = str(m["mechanism"])
        if "epsilon" in m:
            kw["epsilon"] = _parse_epsilon(m["epsilon"])
        if "alphabet" in m:
            kw["alphabet"] = str(m["alphabet"]).lower()
        for key in cls._FLOAT_KEYS:
            if key in m and m[key] not in (None, ""):
                kw[key] = float(m[key])
        for key in cls._INT_KEYS:
            if key in m and m[key] not in (None, ""):
                kw[key] = int(m[key])
        if "bitrand_invert" in m:
            kw["bitrand_invert"] = _parse_bool(m["bitrand_invert"])
        return cls(**kw)

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["mechanism"] = self.name
        del d["kind"]
        return {k: v for k, v in d.items() if v is not None}


# ---------------------------------------------------------------- application


def _perturb_grid_categorical(x, cfg: MechanismConfig, stream: RngStream) -> np.ndarray:
    codec = cfg.codec
    lvl = codec.quantize(x)
    k = codec.levels
    if cfg.kind == "grr":
        out = grr_perturb_batch(lvl, k, cfg.epsilon, stream)
    elif cfg.kind == "rappor":
        onehot = np.zeros((lvl.size, k), dtype=np.int8)
        onehot[np.arange(lvl.size), lvl] = 1
        f = cfg.rappor_f if cfg.rappor_f is not None else rappor_f_from_epsilon(cfg.epsilon)
        bits = rappor_perturb(onehot, cfg.epsilon, stream, f, cfg.rappor_p, cfg.rappor_q)
        # uniform among reported 1-bits, uniform over all levels when none is set
        u = stream.uniform01(bits.shape)
        out = np.argmax(np.where(bits == 1, u + 1.0, u), axis=1)
    elif cfg.kind == "dbitflip":
        d = cfg.dbit_d if cfg.dbit_d is not None else k
        if d > k:
            raise InvalidParams(f"dBitFlipPM needs d <= k (d={d}, k={k})")
        order = np.argsort(stream.uniform01((lvl.size, k)), axis=1)[:, :d]
        e = _exp(cfg.epsilon / 2)
        p = np.where(order == lvl[:, None], 1.0 / (1.0 + 1.0 / e), 1.0 / (e + 1.0))
        rep = stream.uniform01(order.shape) < p
        full = np.zeros((lvl.size, k), dtype=np.int8)
        np.put_along_axis(full, order, rep.astype(np.int8), axis=1)
        # debiased scores are monotone in the bit, so argmax = any reported 1-bit
        u = stream.uniform01(full.shape)
        out = np.argmax(np.where(full == 1, u + 1.0, u), axis=1)
    else:  # pragma: no cover - guarded by caller
        raise InvalidParams(cfg.kind)
    return codec.midpoint(out)


def perturb_pattern(x, cfg: MechanismConfig, stream: RngStream) -> np.ndarray:
    """Perturb a single pattern (1-D vector)."""
    x = np.asarray(x, dtype=float).ravel()
    kind = cfg.kind
    if kind == "identity":
        return x.copy()
    if kind == "additive":
        if cfg.noise_radius == 0.0:
            return x.copy()
        g = stream.standard_normal(x.size)
        return x + cfg.noise_radius * g / np.linalg.norm(g)
    if kind in ("bitrand", "ome"):
        codec = cfg.codec
        bits = codec.encode(x)
        if kind == "bitrand":
            out = bitrand_perturb(bits, cfg.epsilon, cfg.alpha, codec.l, stream, cfg.bitrand_invert)
        else:
            out = ome_perturb(bits, cfg.epsilon, cfg.alpha, codec.l, stream)
        return codec.decode(out)
    if cfg.alphabet == "grid":
        return _perturb_grid_categorical(x, cfg, stream)

    # one-hot alphabet: the nearest one-hot vector is the argmax coordinate
    k = x.size
    if k < 2:
        raise InvalidAlphabet("one-hot alphabet needs k >= 2")
    level = int(np.argmax(x))
    out = np.zeros(k)
    if kind == "grr":
        out[grr_perturb(level, k, cfg.epsilon, stream)] = 1.0
        return out
    if kind == "rappor":
        f = cfg.rappor_f if cfg.rappor_f is not None else rappor_f_from_epsilon(cfg.epsilon)
        out[level] = 1.0
        return rappor_perturb(out, cfg.epsilon, stream, f, cfg.rappor_p, cfg.rappor_q).astype(float)
    if kind == "dbitflip":
        d = cfg.dbit_d if cfg.dbit_d is not None else k
        buckets, bits = dbitflip_perturb(level, k, d, cfg.epsilon, stream)
        out[dbitflip_decode(buckets, bits, k, d, cfg.epsilon, stream)] = 1.0
        return out
    raise InvalidParams(kind)  # pragma: no cover


def perturb_datapoint(x, cfg: MechanismConfig, stream: RngStream) -> np.ndarray:
    """Perturb every column independently; column ``j`` uses ``stream.child(j)``."""
    x = np.asarray(x, dtype=float)
    if cfg.kind == "identity":
        return x.copy()
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        out[:, j] = perturb_pattern(x[:, j], cfg, stream.child(j))
    return out


def project(x, cfg: MechanismConfig) -> np.ndarray:
    """Deterministic image of ``x`` in the mechanism's output alphabet.

    This is where the adversary places a target: one-hot mechanisms snap each
    column to its nearest one-hot vector, grid-based ones to the level
    midpoint, and the continuous baselines return ``x`` unchanged.
    """
    x = np.asarray(x, dtype=float)
    if cfg.kind in ("identity", "additive"):
        return x.copy()
    if cfg.uses_grid:
        return cfg.codec.midpoint(cfg.codec.quantize(x))
    cols = x if x.ndim == 2 else x[:, None]
    out = np.zeros_like(cols)
    out[np.argmax(cols, axis=0), np.arange(cols.shape[1])] = 1.0
    return out if x.ndim == 2 else out[:, 0]


@dataclass(frozen=True)
class OutputAlphabet:
    """Cardinality and half minimum L1 distance of a mechanism's outputs."""

    cardinality: float
    delta_x: float
    note: str = field(default="", compare=False)


def output_alphabet(cfg: MechanismConfig, d_x: int, n_x: int = 1) -> OutputAlphabet | None:
    """Output alphabet of a data point under ``cfg``; None for continuous outputs."""
    if cfg.kind in ("identity", "additive"):
        return None
    if cfg.uses_grid:
        per_pattern = float(cfg.codec.levels) ** d_x
        delta = cfg.codec.step / 2
    elif cfg.kind == "rappor":
        per_pattern = 2.0 ** d_x
        delta = 0.5
    else:
        per_pattern = float(d_x)
        delta = 1.0
    with np.errstate(over="ignore"):
        card = float(np.power(per_pattern, n_x))
    return OutputAlphabet(card, delta)
