"""Advantage bounds for both adversaries and the Monte Carlo estimators they need.

Closed forms return a ``BoundEstimate`` with ``mc_std_error == 0``. Estimators
return ``(probability, binomial standard error)`` and split their trials into
chunks of ``CHUNK`` driven by ``stream.child(chunk_index)``, so results do not
depend on how the chunks are scheduled.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import SeparationStats
from .errors import InvalidCardinality, InvalidParams
from .ldp import MechanismConfig, perturb_pattern, project
from .numerics import RngStream

log = logging.getLogger(__name__)

CHUNK = 4096
DEFAULT_MC_TRIALS = 100_000


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def binomial_se(p: float, trials: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / trials) if trials > 0 else math.nan


@dataclass(frozen=True)
class BoundEstimate:
    kind: str
    advantage: float
    mc_std_error: float = 0.0
    inputs: dict = field(default_factory=dict, compare=False)

    @property
    def success_rate(self) -> float:
        return min(max((1.0 + self.advantage) / 2.0, 0.0), 1.0)


# ---------------------------------------------------------------- FC bounds


def fc_upper_bound(epsilon: float) -> BoundEstimate:
    """Best possible advantage of any adversary against epsilon-LDP data."""
    if epsilon < 0:
        raise InvalidParams("epsilon must be >= 0")
    adv = 1.0 if math.isinf(epsilon) else math.tanh(epsilon / 2.0)  # (e^e - 1)/(e^e + 1)
    return BoundEstimate("fc_upper", adv, 0.0, {"epsilon": epsilon})


def fc_lower_bound(n: int, alphabet_cardinality: float, p_jump: float, p_jump_se: float = 0.0) -> BoundEstimate:
    """``1 - (n + |X| - 1) / (|X| - 1) * P`` for the FC adversary."""
    if not alphabet_cardinality >= 2:
        raise InvalidCardinality(f"alphabet cardinality must be >= 2, got {alphabet_cardinality}")
    if not 0.0 <= p_jump <= 1.0:
        raise InvalidParams(f"p_jump must lie in [0, 1], got {p_jump}")
    card = float(alphabet_cardinality)
    factor = 1.0 if math.isinf(card) else (n + card - 1.0) / (card - 1.0)
    return BoundEstimate("fc_lower", 1.0 - factor * p_jump, factor * p_jump_se,
                         {"n": n, "cardinality": card, "p_jump": p_jump})


def grr_p_jump(epsilon: float, k: int) -> float:
    """Probability that GRR moves a value off itself: ``(k-1)/(e^eps + k - 1)``."""
    return (k - 1.0) / (_exp(epsilon) + k - 1.0)


def fc_lower_bound_grr(epsilon: float, n: int, k: int) -> BoundEstimate:
    """Closed-form lower bound against GRR over ``k`` outputs."""
    if k < 2:
        raise InvalidCardinality("k must be >= 2")
    e = _exp(epsilon)
    adv = 1.0 if math.isinf(e) else (e - n) / (e + k - 1.0)
    return BoundEstimate("fc_lower_grr", adv, 0.0, {"epsilon": epsilon, "n": n, "k": k})


def estimate_p_jump(config: MechanismConfig, alphabet, delta_x: float, trials: int = DEFAULT_MC_TRIALS,
                    stream: RngStream | None = None) -> tuple[float, float]:
    """Frequency with which ``M(X)`` leaves the open L1 ball ``B(X, delta_x)``.

    ``alphabet`` is a point source (anything with ``sample(stream)``) or an
    explicit ``(K, d_x[, n_x])`` array sampled uniformly. Points are snapped to
    the mechanism's output alphabet before perturbation.
    """
    if trials < 1:
        raise InvalidParams("trials must be >= 1")
    stream = stream if stream is not None else RngStream(0)
    if config.kind == "identity":
        return 0.0, 0.0
    if hasattr(alphabet, "sample"):
        draw = alphabet.sample
    else:
        elems = np.asarray(alphabet, dtype=float)
        if elems.ndim == 2:
            elems = elems[:, :, None]

        def draw(s):
            return elems[s.integers(0, elems.shape[0])]

    jumps = 0
    for c, start in enumerate(range(0, trials, CHUNK)):
        # one draw stream and one noise stream per chunk, consumed in order
        draws, noise = stream.child(c).child(0), stream.child(c).child(1)
        for _ in range(min(CHUNK, trials - start)):
            x = project(draw(draws), config)
            if x.ndim == 1:
                x = x[:, None]
            dist = sum(np.abs(perturb_pattern(x[:, j], config, noise) - x[:, j]).sum()
                       for j in range(x.shape[1]))
            if dist >= delta_x:
                jumps += 1
    p = jumps / trials
    return p, binomial_se(p, trials)


# ---------------------------------------------------------------- attention bounds


def delta_bar(m_eps: float, n_x: int, beta_eff: float, delta_eps: float) -> float:
    """Retrieval-error scale ``2 M (n_x - 1) exp(2/n_x - beta * Delta)``."""
    if n_x <= 1:
        return 0.0
    return 2.0 * m_eps * (n_x - 1) * _exp(2.0 / n_x - beta_eff * delta_eps)


def separation_rhs(beta_eff: float, n_x: int, m_eps: float) -> float:
    """Smallest separation for which retrieval is exponentially accurate."""
    if n_x <= 1:
        return -math.inf
    return 2.0 / (beta_eff * n_x) + math.log(2.0 * (n_x - 1) * n_x * beta_eff * m_eps ** 2) / beta_eff


def check_separation_condition(delta_eps: float, beta_eff: float, n_x: int, m_eps: float) -> bool:
    """Whether ``delta_eps`` meets the retrieval condition; trivially true for one pattern."""
    if n_x <= 1:
        return True
    return delta_eps >= separation_rhs(beta_eff, n_x, m_eps)


def proj_threshold(beta_eff: float, n_x: int, m_eps: float) -> float:
    """Largest cross-pattern projection that keeps a query in the retrieval basin."""
    return 1.0 / (beta_eff * n_x * m_eps)


def box_halfwidth(delta_bar_value: float, beta_eff: float, m_max_eps: float, r_eps: float) -> float:
    return 3.0 * delta_bar_value + beta_eff * m_max_eps ** 2 * r_eps


def projections(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """``|<x, y>| / ||y||`` row-wise; zero rows of ``ys`` project to 0."""
    ny = np.linalg.norm(ys, axis=1)
    dots = np.abs(np.einsum("ij,ij->i", xs, ys))
    return np.divide(dots, ny, out=np.zeros_like(dots), where=ny > 0)


def estimate_p_proj(pattern_sampler, delta: float, trials: int = DEFAULT_MC_TRIALS,
                    stream: RngStream | None = None) -> tuple[float, float]:
    """Frequency of ``||Proj_y(x)|| <= delta`` over independent pattern pairs.

    ``pattern_sampler(stream, count)`` returns either a ``(count, d)`` array
    (two calls give x and y) or an ``(xs, ys)`` pair.
    """
    if trials < 1 or delta < 0:
        raise InvalidParams("need trials >= 1 and delta >= 0")
    stream = stream if stream is not None else RngStream(0)
    hits = 0
    for c, start in enumerate(range(0, trials, CHUNK)):
        m = min(CHUNK, trials - start)
        cs = stream.child(c)
        out = pattern_sampler(cs.child(0), m)
        if isinstance(out, tuple):
            xs, ys = out
        else:
            xs, ys = out, pattern_sampler(cs.child(1), m)
        hits += int(np.count_nonzero(projections(xs, ys) <= delta))
    p = hits / trials
    return p, binomial_se(p, trials)


def estimate_p_box(pattern_sampler, mean, delta: float, trials: int = DEFAULT_MC_TRIALS,
                   stream: RngStream | None = None) -> tuple[float, float]:
    """Frequency of a pattern falling in the L-infinity cube of half-width ``delta`` around ``mean``."""
    if trials < 1 or delta < 0:
        raise InvalidParams("need trials >= 1 and delta >= 0")
    stream = stream if stream is not None else RngStream(0)
    if math.isinf(delta):
        return 1.0, 0.0
    mean = np.asarray(mean, dtype=float)
    hits = 0
    for c, start in enumerate(range(0, trials, CHUNK)):
        m = min(CHUNK, trials - start)
        out = pattern_sampler(stream.child(c), m)
        xs = out[0] if isinstance(out, tuple) else out
        hits += int(np.count_nonzero(np.abs(xs - mean).max(axis=1) <= delta))
    p = hits / trials
    return p, binomial_se(p, trials)


def attn_lower_bound(stats, n: int, n_x: int, beta_eff: float, r_eps: float, p_proj: float, p_box,
                     p_proj_se: float = 0.0, p_box_se: float = 0.0) -> BoundEstimate:
    """``p_proj + p_proj^(2 n n_x) - p_box(half-width) - 1`` for the attention adversary.

    ``stats`` supplies ``delta`` (noisy separation), ``m`` (clean max norm) and
    ``m_max`` (noisy max distance to the point mean). ``p_box`` may be a number
    already evaluated at the half-width or a callable ``halfwidth -> (p, se)``.
    """
    m_eps = math.hypot(stats.m, r_eps)
    dbar = delta_bar(m_eps, n_x, beta_eff, stats.delta)
    halfwidth = box_halfwidth(dbar, beta_eff, stats.m_max, r_eps)
    if callable(p_box):
        p_box, p_box_se = p_box(halfwidth)
    feasible = check_separation_condition(stats.delta, beta_eff, n_x, m_eps)
    if not feasible:
        log.warning("separation condition fails (delta=%.4g, beta=%.4g); bound evaluated anyway",
                    stats.delta, beta_eff)
    power = 2 * n * n_x
    adv = p_proj + p_proj ** power - p_box - 1.0
    d_proj = 1.0 + power * p_proj ** (power - 1)
    se = math.hypot(d_proj * p_proj_se, p_box_se)
    inputs = {"n": n, "n_x": n_x, "beta_effective": beta_eff, "r_eps": r_eps, "p_proj": p_proj,
              "p_box": p_box, "delta_eps": stats.delta, "m_eps": m_eps, "m_max_eps": stats.m_max,
              "delta_bar": dbar, "box_halfwidth": halfwidth, "condition_holds": feasible}
    return BoundEstimate("attn_lower", adv, se, inputs)


# ---------------------------------------------------------------- bound simulation


@dataclass(frozen=True)
class SimulatedBound:
    data: str
    d_x: int
    r_eps: float
    estimate: BoundEstimate

    @property
    def advantage(self) -> float:
        return self.estimate.advantage

    @property
    def se(self) -> float:
        return self.estimate.mc_std_error


def _clean_patterns(data: str, d_x: int, count: int, stream: RngStream) -> np.ndarray:
    if data == "onehot":
        out = np.zeros((count, d_x))
        out[np.arange(count), stream.integers(0, d_x, size=count)] = 1.0
        return out
    if data == "spherical":
        g = stream.standard_normal((count, d_x))
        return g / np.linalg.norm(g, axis=1, keepdims=True)
    raise InvalidParams(f"unknown synthetic data {data!r}")


def _clean_points(data: str, d_x: int, n_x: int, count: int, stream: RngStream) -> np.ndarray:
    """``(count, n_x, d_x)`` clean points; one-hot points use distinct patterns."""
    if data == "onehot":
        if n_x > d_x:
            raise InvalidParams("n_x > d_x distinct one-hot patterns")
        idx = np.argsort(stream.uniform01((count, d_x)), axis=1)[:, :n_x]
        out = np.zeros((count, n_x, d_x))
        np.put_along_axis(out, idx[:, :, None], 1.0, axis=2)
        return out
    return _clean_patterns(data, d_x, count * n_x, stream).reshape(count, n_x, d_x)


def _unit_rows(shape, stream: RngStream) -> np.ndarray:
    g = stream.standard_normal(shape)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def simulate_attn_bound(data: str, d_x: int, n_x: int, r_grid, beta_eff: float = 10.0,
                        trials: int = 20_000, seed: int = 0, n: int = 1,
                        stats_batch: int = 256) -> list[SimulatedBound]:
    """Evaluate the attention lower bound over a grid of noise norms.

    Noise is uniform on the L2 sphere of radius ``R``. The same unit
    directions are reused for every ``R`` on the grid (common random
    numbers), so differences along the grid reflect ``R`` alone. ``Delta``
    and ``m_max`` are the min / max over ``stats_batch`` noisy points;
    ``p_box`` is centred at the noisy-pattern mean estimated from an
    independent batch.
    """
    if trials < 1:
        raise InvalidParams("trials must be >= 1")
    root = RngStream(seed, 0, (d_x, 0 if data == "onehot" else 1))
    # pairs of independent patterns with distinct clean values
    px = _clean_points(data, d_x, 2, trials, root.child(0))
    pu = _unit_rows((trials, 2, d_x), root.child(1))
    # single patterns for the cube test and an independent batch for its centre
    bx = _clean_patterns(data, d_x, trials, root.child(2))
    bu = _unit_rows((trials, d_x), root.child(3))
    cx = _clean_patterns(data, d_x, trials, root.child(4))
    cu = _unit_rows((trials, d_x), root.child(5))
    # points for the separation / distance-to-mean statistics
    sx = _clean_points(data, d_x, n_x, stats_batch, root.child(6))
    su = _unit_rows((stats_batch, n_x, d_x), root.child(7))
    m_clean = 1.0

    results = []
    for r in r_grid:
        r = float(r)
        pts = sx + r * su
        if n_x >= 2:
            gram = np.einsum("bid,bjd->bij", pts, pts)
            diag = np.einsum("bii->bi", gram).copy()
            idx = np.arange(n_x)
            gram[:, idx, idx] = -np.inf
            delta_eps = float((diag - gram.max(axis=2)).min())
        else:
            delta_eps = math.inf
        centre = pts.mean(axis=1, keepdims=True)
        m_max = float(np.linalg.norm(pts - centre, axis=2).max())
        stats = SeparationStats(delta_eps, m_clean, m_max, r)
        m_eps = math.hypot(m_clean, r)

        xs = px[:, 0] + r * pu[:, 0]
        ys = px[:, 1] + r * pu[:, 1]
        proj = projections(xs, ys)
        p_proj = float(np.mean(proj <= proj_threshold(beta_eff, n_x, m_eps)))
        mean = (cx + r * cu).mean(axis=0)
        box_dist = np.abs(bx + r * bu - mean).max(axis=1)

        def p_box(halfwidth, box_dist=box_dist):
            p = float(np.mean(box_dist <= halfwidth))
            return p, binomial_se(p, trials)

        est = attn_lower_bound(stats, n, n_x, beta_eff, r, p_proj, p_box,
                               p_proj_se=binomial_se(p_proj, trials))
        est.inputs.update({"data": data, "d_x": d_x, "trials": trials, "seed": seed,
                           "noise_model": "uniform-sphere", "delta_rule": "min"})
        results.append(SimulatedBound(data, d_x, r, est))
    return results
