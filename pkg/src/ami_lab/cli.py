"""Command-line experiment runner.

``ami-lab run CONFIG`` executes every job of a key=value experiment file and
writes one CSV row per (job, sweep point) plus the matching bound rows.
``ami-lab simulate-bound`` evaluates the attention lower bound on synthetic
data over a grid of noise norms.

Experiment files hold ``key = value`` lines. Lines before the first ``[job]``
header are defaults for every job; each ``[job]`` header starts a new job.
``#`` and ``;`` start comments. Comma-separated values define a sweep.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from itertools import product

from .bounds import (estimate_p_jump, fc_lower_bound, fc_lower_bound_grr, fc_upper_bound,
                     simulate_attn_bound)
from .data import OneHotSource, PoolSource, SphericalSource, load_embeddings
from .errors import AmiLabError, ConfigError, ParseError
from .game import GameConfig, prepare_attack, run_game
from .ldp import MechanismConfig
from .numerics import RngStream

log = logging.getLogger("ami_lab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

COLUMNS = ["row_type", "job", "status", "attack", "mechanism", "data", "epsilon", "n", "d_x", "n_x",
           "trials", "success_rate", "advantage", "se", "tp_rate", "tn_rate", "seed", "bound_kind",
           "std_error", "r_eps", "beta", "gamma", "tau", "message"]
SIM_COLUMNS = ["data", "d_x", "r_eps", "advantage", "se", "n_x", "beta", "trials", "seed", "p_proj",
               "p_box", "delta_eps", "noise_model", "delta_rule"]

GLOBAL_KEYS = {"seed", "out", "threads"}
JOB_KEYS = {
    "name", "kind", "attack", "data", "path", "d_x", "n_x", "n", "trials", "hyper_mode", "tau", "beta",
    "beta_effective", "gamma", "calibration_trials", "epsilon", "r_eps", "distinct_patterns",
    "bound_trials", "mechanism", "alpha", "bits_per_feature", "clip_min", "clip_max", "rappor_f",
    "rappor_p", "rappor_q", "dbit_d", "alphabet", "bitrand_invert", "noise_radius",
}
SWEEP_KEYS = ("epsilon", "r_eps", "beta", "beta_effective", "d_x")


# ---------------------------------------------------------------- config file


@dataclass
class JobSpec:
    name: str
    values: dict
    line: int = 0


@dataclass
class ExperimentSpec:
    jobs: list
    settings: dict = field(default_factory=dict)


def parse_experiment(text: str) -> ExperimentSpec:
    settings: dict = {}
    jobs: list = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line.lower() != "[job]":
                raise ParseError(f"unknown section {line!r} (only [job] is allowed)", line=lineno)
            current = {}
            jobs.append(JobSpec(f"job{len(jobs) + 1}", current, lineno))
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {line!r}", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.lower()
        allowed = JOB_KEYS if current is not None else JOB_KEYS | GLOBAL_KEYS
        if key not in allowed:
            raise ConfigError(f"unknown key (line {lineno})", field=key)
        target = current if current is not None else settings
        if key in target:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        target[key] = value
    if not jobs:
        raise ConfigError("experiment file defines no [job]")
    for job in jobs:
        if "name" in job.values:
            job.name = job.values["name"]
    return ExperimentSpec(jobs, settings)


def _split(value) -> list[str]:
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _num(key, value, kind=float):
    try:
        if kind is float and str(value).strip().lower() in ("inf", "infinity"):
            return math.inf
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid number {value!r}", field=key) from None


def _bool(key, value) -> bool:
    s = str(value).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"invalid boolean {value!r}", field=key)


def _source(values: dict, d_x: int, base_dir: str):
    data = values.get("data", "onehot").lower()
    n_x = _num("n_x", values.get("n_x", 1), int)
    if data == "onehot":
        return OneHotSource(d_x, n_x, _bool("distinct_patterns", values.get("distinct_patterns", "true")))
    if data == "spherical":
        return SphericalSource(d_x, n_x)
    if data == "file":
        if "path" not in values:
            raise ConfigError("file data needs a path", field="path")
        path = values["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        if not os.path.exists(path):
            raise ConfigError(f"file not found: {path}", field="path")
        return PoolSource(load_embeddings(path))
    raise ConfigError(f"unknown data source {data!r}", field="data")


def _mechanism(values: dict) -> MechanismConfig:
    try:
        return MechanismConfig.from_mapping(values)
    except (ValueError, TypeError) as exc:
        fld = "mechanism" if "mechanism" in str(exc).lower() or "unknown" in str(exc).lower() else None
        raise ConfigError(str(exc), field=fld) from None


@dataclass
class SweepPoint:
    job: JobSpec
    values: dict


def expand_job(job: JobSpec, defaults: dict, overrides: dict) -> list[SweepPoint]:
    merged = {**{k: v for k, v in defaults.items() if k in JOB_KEYS}, **job.values, **overrides}
    axes = [k for k in SWEEP_KEYS if k in merged]
    lists = [_split(merged[k]) for k in axes]
    for k, lst in zip(axes, lists):
        if not lst:
            raise ConfigError("empty sweep list", field=k)
    points = []
    for combo in product(*lists):
        vals = dict(merged)
        vals.update(zip(axes, combo))
        points.append(SweepPoint(job, vals))
    return points


def validate(spec: ExperimentSpec, overrides: dict, base_dir: str) -> list[SweepPoint]:
    """Expand sweeps and build every config up front so errors surface before any run."""
    points = []
    for job in spec.jobs:
        for pt in expand_job(job, spec.settings, overrides):
            kind = pt.values.get("kind", "game").lower()
            if kind == "simulate_bound":
                data = pt.values.get("data", "onehot").lower()
                if data not in ("onehot", "spherical"):
                    raise ConfigError(f"bound simulation supports onehot or spherical, got {data!r}", field="data")
                _num("d_x", pt.values.get("d_x", 10), int)
            elif kind == "game":
                _game_config(pt.values, 0, base_dir)
            else:
                raise ConfigError(f"unknown job kind {kind!r}", field="kind")
            points.append(pt)
    return points


def _game_config(values: dict, seed: int, base_dir: str) -> GameConfig:
    if "attack" not in values:
        raise ConfigError("missing", field="attack")
    d_x = _num("d_x", values.get("d_x", 16), int)
    mech = _mechanism({**values, "noise_radius": values.get("r_eps", values.get("noise_radius", 0.0))})
    opt = {}
    for key in ("tau", "beta", "beta_effective", "gamma"):
        if key in values:
            opt[key] = _num(key, values[key])
    try:
        return GameConfig(
            attack=values["attack"],
            source=_source(values, d_x, base_dir),
            n=_num("n", values.get("n", 16), int),
            mechanism=mech,
            trials=_num("trials", values.get("trials", 1000), int),
            master_seed=seed,
            hyper_mode=values.get("hyper_mode", "theorem").lower(),
            calibration_trials=_num("calibration_trials", values.get("calibration_trials", 200), int),
            **opt,
        )
    except ConfigError:
        raise
    except AmiLabError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- execution


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class RowWriter:
    def __init__(self, fh, columns):
        self.fh = fh
        self.columns = columns
        self.writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        self.writer.writeheader()

    def write(self, row: dict):
        self.writer.writerow({k: _fmt(row.get(k)) for k in self.columns})
        self.fh.flush()


def _bound_rows(cfg: GameConfig, epsilon: float, prepared, bound_trials: int, seed: int) -> list[dict]:
    mech = cfg.mechanism
    base = {"row_type": "bound", "status": "ok", "attack": cfg.attack, "mechanism": mech.name,
            "data": cfg.source.kind, "epsilon": epsilon, "n": cfg.n, "d_x": cfg.source.d_x,
            "n_x": cfg.source.n_x, "seed": seed}
    eps_for_upper = epsilon if mech.is_ldp else math.inf
    up = fc_upper_bound(eps_for_upper)
    rows = [{**base, "bound_kind": up.kind, "advantage": up.advantage, "success_rate": up.success_rate,
             "std_error": 0.0}]
    if cfg.attack != "fc":
        return rows
    if mech.kind == "grr" and mech.alphabet == "onehot" and cfg.source.n_x == 1:
        low = fc_lower_bound_grr(epsilon, cfg.n, cfg.source.d_x)
    else:
        alpha = prepared.alphabet
        p, se = estimate_p_jump(mech, cfg.source, prepared.tau, bound_trials, RngStream(seed, 1 << 41))
        card = alpha.cardinality if alpha.cardinality >= 2 else 2.0
        low = fc_lower_bound(cfg.n, card, p, se)
    rows.append({**base, "bound_kind": low.kind, "advantage": low.advantage,
                 "success_rate": low.success_rate, "std_error": low.mc_std_error,
                 "tau": prepared.tau})
    return rows


def run_point(pt: SweepPoint, seed: int, threads: int, base_dir: str) -> list[dict]:
    v = pt.values
    kind = v.get("kind", "game").lower()
    if kind == "simulate_bound":
        d_x = _num("d_x", v.get("d_x", 10), int)
        r = _num("r_eps", v.get("r_eps", 0.0))
        beta = _num("beta_effective", v.get("beta_effective", v.get("beta", 10.0)))
        res = simulate_attn_bound(v.get("data", "onehot").lower(), d_x, _num("n_x", v.get("n_x", 2), int),
                                  [r], beta, _num("trials", v.get("trials", 20000), int), seed)[0]
        return [{"row_type": "bound", "job": pt.job.name, "status": "ok", "data": res.data, "d_x": d_x,
                 "n_x": v.get("n_x", 2), "trials": v.get("trials", 20000), "seed": seed,
                 "bound_kind": "attn_lower", "advantage": res.advantage, "std_error": res.se,
                 "success_rate": res.estimate.success_rate, "r_eps": r, "beta": beta}]
    cfg = _game_config(v, seed, base_dir)
    prepared = prepare_attack(cfg)
    out = run_game(cfg, threads=threads, prepared=prepared)
    eps = cfg.mechanism.epsilon
    row = {"row_type": "empirical", "job": pt.job.name, "status": "ok", "attack": cfg.attack,
           "mechanism": cfg.mechanism.name, "data": cfg.source.kind, "epsilon": eps, "n": cfg.n,
           "d_x": cfg.source.d_x, "n_x": cfg.source.n_x, "trials": cfg.trials,
           "success_rate": out.success_rate, "advantage": out.advantage, "se": out.se,
           "tp_rate": out.tp_rate, "tn_rate": out.tn_rate, "seed": seed,
           "r_eps": cfg.mechanism.noise_radius if cfg.mechanism.kind == "additive" else None,
           "tau": prepared.tau}
    if prepared.hyper is not None:
        row.update(beta=prepared.hyper.beta, gamma=prepared.hyper.gamma)
    bounds = _bound_rows(cfg, eps, prepared, _num("bound_trials", v.get("bound_trials", 20000), int), seed)
    for b in bounds:
        b["job"] = pt.job.name
        b["trials"] = cfg.trials
    return [row] + bounds


def _resolve_seed(cli_seed, settings) -> int:
    if cli_seed is not None:
        return cli_seed
    if "seed" in settings:
        return _num("seed", settings["seed"], int)
    env = os.environ.get("AMI_LAB_SEED")
    if env:
        return _num("AMI_LAB_SEED", env, int)
    return 0


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def cmd_run(args) -> int:
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        log.error("cannot read %s: %s", args.config, exc)
        return EXIT_CONFIG
    base_dir = os.path.dirname(os.path.abspath(args.config))
    try:
        spec = parse_experiment(text)
        overrides = {}
        if args.epsilon is not None:
            overrides["epsilon"] = args.epsilon
        if args.trials is not None:
            overrides["trials"] = str(args.trials)
        seed = _resolve_seed(args.seed, spec.settings)
        threads = args.threads if args.threads is not None else _num("threads", spec.settings.get("threads", 1), int)
        points = validate(spec, overrides, base_dir)
    except (ConfigError, ParseError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    out_path = args.out if args.out is not None else spec.settings.get("out", "-")
    fh, close = _open_out(out_path)
    writer = RowWriter(fh, COLUMNS)
    code = EXIT_OK
    try:
        for i, pt in enumerate(points):
            log.info("point %d/%d (%s)", i + 1, len(points), pt.job.name)
            try:
                for row in run_point(pt, seed, threads, base_dir):
                    writer.write(row)
            except Exception as exc:  # report and stop; rows so far are already flushed
                log.error("job %s failed: %s", pt.job.name, exc)
                writer.write({"row_type": "empirical", "job": pt.job.name, "status": "error",
                              "seed": seed, "message": f"{type(exc).__name__}: {exc}"})
                code = EXIT_RUNTIME
                break
    finally:
        if close:
            fh.close()
    return code


def cmd_simulate_bound(args) -> int:
    try:
        seed = _resolve_seed(args.seed, {})
        datas = [d.lower() for d in _split(args.data)]
        for d in datas:
            if d not in ("onehot", "spherical"):
                raise ConfigError(f"unknown data {d!r}", field="data")
        dims = [_num("d_x", d, int) for d in _split(args.d_x)]
        grid = [_num("r_eps", r) for r in _split(args.r_eps)]
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    fh, close = _open_out(args.out)
    writer = RowWriter(fh, SIM_COLUMNS)
    try:
        for data in datas:
            for d_x in dims:
                log.info("simulating %s d_x=%d", data, d_x)
                for res in simulate_attn_bound(data, d_x, args.n_x, grid, args.beta, args.trials, seed):
                    inp = res.estimate.inputs
                    writer.write({"data": data, "d_x": d_x, "r_eps": res.r_eps, "advantage": res.advantage,
                                  "se": res.se, "n_x": args.n_x, "beta": args.beta, "trials": args.trials,
                                  "seed": seed, "p_proj": inp["p_proj"], "p_box": inp["p_box"],
                                  "delta_eps": inp["delta_eps"], "noise_model": inp["noise_model"],
                                  "delta_rule": inp["delta_rule"]})
    except AmiLabError as exc:
        log.error("simulation failed: %s", exc)
        return EXIT_RUNTIME
    finally:
        if close:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ami-lab", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the jobs of an experiment file")
    r.add_argument("config")
    r.add_argument("--epsilon", help="override the epsilon sweep (comma separated)")
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="CSV path, '-' for stdout")
    r.add_argument("--threads", type=int)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("simulate-bound", help="Monte Carlo attention bound over a noise grid")
    s.add_argument("--data", default="onehot,spherical")
    s.add_argument("--d-x", dest="d_x", default="10,100,1000")
    s.add_argument("--n-x", dest="n_x", type=int, default=2)
    s.add_argument("--r-eps", dest="r_eps", default="0,0.01,0.02,0.05,0.1,0.15,0.2,0.3,0.5,1,2")
    s.add_argument("--beta", type=float, default=10.0, help="effective inverse temperature")
    s.add_argument("--trials", type=int, default=5000)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_simulate_bound)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
