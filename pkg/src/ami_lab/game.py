"""Monte Carlo harness for the active membership-inference game.

One trial: build a dataset ``D`` of ``n`` distinct points, flip a fair bit
``b``, take the target from ``D`` when ``b = 1`` or draw a fresh one outside
``D`` otherwise, craft the attack on it, perturb ``D`` with the mechanism,
let the client compute gradients on the perturbed data and record the
adversary's guess. Trial ``i`` draws all of its randomness from
``RngStream(master_seed, i)``, so results are independent of scheduling.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack_attn import AttnHyperparams, attn_client_gradients, attn_craft, attn_guess, attn_select_hyperparams
from .attack_fc import fc_client_gradients, fc_craft, fc_guess, fc_select_tau, flatten_point
from .data import (DEFAULT_DRAW_CAP, AlphabetStats, OneHotSource, PointSource, PoolSource, alphabet_stats,
                   empirical_min_distance, pattern_stats, point_key)
from .errors import CalibrationDegenerate, CannotDeduplicate, DegenerateSplit, InvalidParams
from .ldp import MechanismConfig, output_alphabet, perturb_datapoint, project
from .numerics import RngStream

log = logging.getLogger(__name__)

ATTACKS = ("fc", "attention")
# stream ids above this are reserved for adversary-side simulations
PREP_STREAM = 1 << 40
STATS_BATCH = 256


@dataclass(frozen=True)
class GameConfig:
    attack: str
    source: PointSource
    n: int
    mechanism: MechanismConfig = field(default_factory=MechanismConfig)
    trials: int = 1000
    master_seed: int = 0
    hyper_mode: str = "theorem"
    tau: float | None = None
    beta: float | None = None
    beta_effective: float | None = None
    gamma: float | None = None
    calibration_trials: int = 200

    def __post_init__(self):
        attack = str(self.attack).lower()
        if attack in ("attn", "self-attention"):
            attack = "attention"
        if attack not in ATTACKS:
            raise InvalidParams(f"attack must be one of {ATTACKS}, got {self.attack!r}")
        object.__setattr__(self, "attack", attack)
        if self.trials < 1 or self.n < 1:
            raise InvalidParams("trials and n must be >= 1")
        if self.hyper_mode not in ("theorem", "default"):
            raise InvalidParams(f"hyper_mode must be 'theorem' or 'default', got {self.hyper_mode!r}")


@dataclass(frozen=True)
class TrialRecord:
    b: int
    b_prime: int
    activated_count: int | None = None
    max_gap: float | None = None
    event_i: bool | None = None
    event_ii: bool | None = None


@dataclass(frozen=True)
class GameOutcome:
    records: tuple
    config: GameConfig | None = field(default=None, compare=False)
    attack_params: dict = field(default_factory=dict, compare=False)

    @property
    def n_pos(self) -> int:
        return sum(r.b for r in self.records)

    @property
    def n_neg(self) -> int:
        return len(self.records) - self.n_pos

    def _check(self):
        if self.n_pos == 0 or self.n_neg == 0:
            raise DegenerateSplit(f"need both b=1 and b=0 trials (got {self.n_pos} / {self.n_neg})")

    @property
    def tp_rate(self) -> float:
        self._check()
        return sum(1 for r in self.records if r.b == 1 and r.b_prime == 1) / self.n_pos

    @property
    def tn_rate(self) -> float:
        self._check()
        return sum(1 for r in self.records if r.b == 0 and r.b_prime == 0) / self.n_neg

    @property
    def success_rate(self) -> float:
        return (self.tp_rate + self.tn_rate) / 2.0

    @property
    def advantage(self) -> float:
        return self.tp_rate + self.tn_rate - 1.0

    @property
    def win_rate(self) -> float:
        return sum(1 for r in self.records if r.b == r.b_prime) / len(self.records)

    @property
    def se(self) -> float:
        """Standard error of the success rate from the two binomial conditionals."""
        tp, tn = self.tp_rate, self.tn_rate
        return 0.5 * math.sqrt(tp * (1 - tp) / self.n_pos + tn * (1 - tn) / self.n_neg)


# ---------------------------------------------------------------- adversary preparation


def fc_alphabet(config: GameConfig, stream: RngStream) -> AlphabetStats:
    """Alphabet statistics the FC adversary derives from public knowledge."""
    mech, src = config.mechanism, config.source
    out = output_alphabet(mech, src.d_x, src.n_x)
    if out is not None:
        return AlphabetStats(out.delta_x, out.cardinality)
    if mech.kind == "identity":
        if isinstance(src, OneHotSource):
            return AlphabetStats(1.0, src.capacity())
        if isinstance(src, PoolSource):
            return alphabet_stats(np.stack([flatten_point(p) for p in src.pool]))
    # continuous outputs: half the closest distance in a simulated protected sample
    sample = [perturb_datapoint(src.sample(stream.child(i)), mech, stream.child(i).child(1))
              for i in range(STATS_BATCH)]
    return AlphabetStats(empirical_min_distance(sample), math.inf)


def noise_radius(config: GameConfig, stream: RngStream, quantile: float = 0.999) -> float:
    """Per-pattern noise norm: exact for the additive baseline, a high quantile otherwise."""
    mech = config.mechanism
    if mech.kind == "identity":
        return 0.0
    if mech.kind == "additive":
        return mech.noise_radius
    norms = []
    for i in range(STATS_BATCH):
        x = project(config.source.sample(stream.child(i)), mech)
        y = perturb_datapoint(x, mech, stream.child(i).child(1))
        norms.extend(np.linalg.norm(y - x, axis=0))
    return float(np.quantile(norms, quantile))


def protected_stats(config: GameConfig, stream: RngStream):
    """Separation statistics of simulated protected points."""
    mech, src = config.mechanism, config.source
    clean, noisy = [], []
    for i in range(STATS_BATCH):
        x = src.sample(stream.child(i))
        clean.append(x)
        noisy.append(perturb_datapoint(project(x, mech), mech, stream.child(i).child(1)))
    r_eps = noise_radius(config, stream.child(STATS_BATCH))
    noisy_stats = pattern_stats(noisy)
    m_clean = pattern_stats(clean).m
    return type(noisy_stats)(noisy_stats.delta, m_clean, noisy_stats.m_max, r_eps)


def _attn_target(config: GameConfig, dataset, b: int, stream: RngStream, cap: int = DEFAULT_DRAW_CAP):
    """Pattern-level target: a pattern of a member point, or a fresh pattern in none of them."""
    if b == 1:
        x = dataset[stream.integers(0, dataset.n)]
        return np.array(x[:, stream.integers(0, x.shape[1])])
    present = {point_key(p) for p in dataset.patterns()}
    for i in range(cap):
        v = config.source.sample_pattern(stream.child(i))
        if point_key(v) not in present:
            return v
    raise CannotDeduplicate(f"no fresh pattern after {cap} draws")


def _max_gap_case(config: GameConfig, beta: float, b: int, stream: RngStream) -> float:
    d = config.source.generate(config.n, stream.child(0))
    v = project(_attn_target(config, d, b, stream.child(1)), config.mechanism)
    params = attn_craft(v, beta=beta, gamma=1.0, stream=stream.child(2))
    batch = [perturb_datapoint(x, config.mechanism, stream.child(3).child(i)) for i, x in enumerate(d)]
    return attn_client_gradients(params, batch).max_gap


def calibrate_gamma(config: GameConfig, calibration_trials: int, stream: RngStream, beta: float) -> float:
    """Threshold on ``max_gap`` separating simulated member / non-member cases.

    Returns the midpoint of the gap between the two samples when they are
    separated, otherwise the threshold with the fewest calibration errors.
    """
    pos = np.array([_max_gap_case(config, beta, 1, stream.child(2 * i)) for i in range(calibration_trials)])
    neg = np.array([_max_gap_case(config, beta, 0, stream.child(2 * i + 1)) for i in range(calibration_trials)])
    if np.array_equal(np.sort(pos), np.sort(neg)):
        raise CalibrationDegenerate("member and non-member gap samples are identical")
    if neg.max() < pos.min():
        return float((neg.max() + pos.min()) / 2.0)
    values = np.unique(np.concatenate([pos, neg]))
    cands = np.concatenate([[values[0] / 2.0], (values[:-1] + values[1:]) / 2.0])
    # guess 1 iff gap > threshold
    errors = [np.count_nonzero(pos <= t) + np.count_nonzero(neg > t) for t in cands]
    return float(cands[int(np.argmin(errors))])


@dataclass(frozen=True)
class PreparedAttack:
    tau: float | None = None
    alphabet: AlphabetStats | None = None
    hyper: AttnHyperparams | None = None


def prepare_attack(config: GameConfig) -> PreparedAttack:
    """Resolve tau or (beta, gamma) once per game from adversary-side simulation."""
    stream = RngStream(config.master_seed, PREP_STREAM)
    if config.attack == "fc":
        alpha = fc_alphabet(config, stream.child(0))
        tau = config.tau if config.tau is not None else fc_select_tau(alpha)
        return PreparedAttack(tau=tau, alphabet=alpha)
    src = config.source
    if config.hyper_mode == "theorem" and config.gamma is not None and \
            (config.beta is not None or config.beta_effective is not None):
        beta = config.beta if config.beta is not None else config.beta_effective * math.sqrt(src.d_x - 1)
        hyper = AttnHyperparams(beta, beta / math.sqrt(src.d_x - 1), config.gamma, "fixed")
        return PreparedAttack(hyper=hyper)
    stats = protected_stats(config, stream.child(1))

    def calibrate(beta):
        if config.gamma is not None:
            return config.gamma
        return calibrate_gamma(config, config.calibration_trials, stream.child(2), beta)

    hyper = attn_select_hyperparams(stats, src.n_x, stats.r_eps, config.hyper_mode, src.d_x,
                                    beta_effective=config.beta_effective, beta=config.beta,
                                    calibrate=calibrate)
    if config.gamma is not None and hyper.gamma != config.gamma:
        hyper = AttnHyperparams(hyper.beta, hyper.beta_effective, config.gamma, hyper.mode,
                                hyper.condition_holds, hyper.delta_bar)
    return PreparedAttack(hyper=hyper)


# ---------------------------------------------------------------- trials


def run_trial(config: GameConfig, trial_index: int, prepared: PreparedAttack | None = None) -> TrialRecord:
    prepared = prepared if prepared is not None else prepare_attack(config)
    s = RngStream(config.master_seed, trial_index)
    dataset = config.source.generate(config.n, s.child(0))
    b = int(s.child(1).bernoulli(0.5))
    mech = config.mechanism

    if config.attack == "fc":
        if b == 1:
            idx = int(s.child(2).integers(0, dataset.n))
            target = np.array(dataset[idx])
        else:
            idx = -1
            target = config.source.fresh(dataset, s.child(2))
        t_img = project(target, mech)
        params = fc_craft(t_img, prepared.tau)
        batch = [perturb_datapoint(x, mech, s.child(3).child(i)) for i, x in enumerate(dataset)]
        report = fc_client_gradients(params, batch)
        b_prime = fc_guess(report)
        t_flat = flatten_point(t_img)
        inside = [np.abs(flatten_point(y) - t_flat).sum() < prepared.tau for y in batch]
        event_i = b == 1 and not inside[idx]
        event_ii = any(hit for i, hit in enumerate(inside) if i != idx)
        return TrialRecord(b, b_prime, activated_count=report.activated_count,
                           event_i=bool(event_i), event_ii=bool(event_ii))

    hyper = prepared.hyper
    v = project(_attn_target(config, dataset, b, s.child(2)), mech)
    params = attn_craft(v, beta=hyper.beta, gamma=hyper.gamma, stream=s.child(4))
    batch = [perturb_datapoint(x, mech, s.child(3).child(i)) for i, x in enumerate(dataset)]
    report = attn_client_gradients(params, batch)
    return TrialRecord(b, attn_guess(report), max_gap=report.max_gap)


def _run_chunk(args):
    config, prepared, indices = args
    return [run_trial(config, i, prepared) for i in indices]


def run_game(config: GameConfig, threads: int = 1, prepared: PreparedAttack | None = None) -> GameOutcome:
    """Run every trial and aggregate; ``threads > 1`` uses worker processes."""
    prepared = prepared if prepared is not None else prepare_attack(config)
    indices = range(config.trials)
    if threads <= 1 or config.trials < 2:
        records = [run_trial(config, i, prepared) for i in indices]
    else:
        size = math.ceil(config.trials / (threads * 4))
        chunks = [(config, prepared, list(indices[i:i + size])) for i in range(0, config.trials, size)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = [r for part in pool.map(_run_chunk, chunks) for r in part]
    params = {}
    if prepared.tau is not None:
        params["tau"] = prepared.tau
    if prepared.hyper is not None:
        params.update(beta=prepared.hyper.beta, beta_effective=prepared.hyper.beta_effective,
                      gamma=prepared.hyper.gamma, hyper_mode=prepared.hyper.mode)
    return GameOutcome(tuple(records), config, params)
