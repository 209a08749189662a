"""Command-line driver: ``drgame run``, ``drgame verify`` and ``drgame list-games``.

A run config is YAML::

    game: log_quadratic            # or {name: multimodal, ...factory options}
    divergence: kl
    rho: 0.1
    scenarios: {n: 1000, distribution: normal, seed: 0}
    learner: {mode: swarm, swarm_size: 1000, seed: 0, dt: 0.01, horizon: 5}
    baselines: [{method: gradient, step: 0.05, iters: 500}]
    eta: 1.0e-3
    certificate: {eta: 1.0e-4, probe_grid: 51}
    output: out

Scenario distributions are ``normal`` (standard, per component),
``uniform`` (``low``/``high``) or explicit ``atoms`` with optional ``weights``.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import oracle
from .bregman import SmoothObjective, ideal_scaling, integrate, sq_euclidean
from .divergence import FAMILIES, KL
from .errors import DomainError
from .game import GAMES, ScenarioSet, inner_dual, is_robust_equilibrium
from .learning import LearnerConfig, hitting_index, player_objective, run_baseline, run_learning

SCENARIO_DIMS = {"log_quadratic": 2, "multimodal": 1}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    game: str
    game_options: dict = field(default_factory=dict)
    divergence: str = "kl"
    rho: float = 0.1
    scenarios: dict = field(default_factory=lambda: {"n": 1000, "distribution": "normal", "seed": 0})
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    baselines: list = field(default_factory=list)
    eta: float = 1e-3
    certificate: dict = field(default_factory=lambda: {"eta": 1e-4, "probe_grid": 51})
    reference: Optional[list] = None
    output: str = "out"

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path = Path(".")) -> "ExperimentConfig":
        if not isinstance(raw, dict) or "game" not in raw:
            raise ConfigError("config must be a mapping with a 'game' entry")
        raw = dict(raw)
        game = raw.pop("game")
        options = {}
        if isinstance(game, dict):
            options = dict(game)
            game = options.pop("name", None)
        if game not in GAMES:
            raise ConfigError(f"unknown game {game!r}; known: {sorted(GAMES)}")
        div = raw.pop("divergence", "kl")
        if div not in FAMILIES:
            raise ConfigError(f"unknown divergence {div!r}; known: {sorted(FAMILIES)}")
        learner_raw = dict(raw.pop("learner", {}) or {})
        known = {f.name for f in fields(LearnerConfig)}
        extra = set(learner_raw) - known
        if extra:
            raise ConfigError(f"unknown learner fields {sorted(extra)}")
        if learner_raw.get("init_actions") is not None:
            learner_raw["init_actions"] = tuple(tuple(np.atleast_1d(a).tolist())
                                                for a in learner_raw["init_actions"])
        if learner_raw.get("init_mu") is not None:
            learner_raw["init_mu"] = tuple(learner_raw["init_mu"])
        try:
            learner = LearnerConfig(**learner_raw)
        except (DomainError, TypeError) as exc:
            raise ConfigError(f"learner: {exc}") from exc
        baselines = []
        for b in raw.pop("baselines", []) or []:
            b = {"method": b} if isinstance(b, str) else dict(b)
            if b.get("method") not in ("gradient", "nesterov"):
                raise ConfigError(f"unknown baseline {b.get('method')!r}")
            baselines.append({"method": b["method"], "step": float(b.get("step", 0.05)),
                              "iters": int(b.get("iters", 500))})
        scen = dict(raw.pop("scenarios", {}) or {})
        if "atoms" not in scen:
            scen.setdefault("n", 1000)
            scen.setdefault("distribution", "normal")
            if "seed" not in scen:
                raise ConfigError("scenarios.seed must be given explicitly")
            if int(scen["n"]) < 1:
                raise ConfigError("scenarios.n must be at least 1")
        cert = {"eta": 1e-4, "probe_grid": 51}
        cert.update(raw.pop("certificate", {}) or {})
        out = Path(raw.pop("output", "out"))
        if not out.is_absolute():
            out = base_dir / out
        cfg = cls(game=game, game_options=options, divergence=div, rho=float(raw.pop("rho", 0.1)),
                  scenarios=scen, learner=learner, baselines=baselines, eta=float(raw.pop("eta", 1e-3)),
                  certificate=cert, reference=raw.pop("reference", None), output=str(out))
        if raw:
            raise ConfigError(f"unknown config keys {sorted(raw)}")
        if not cfg.rho > 0:
            raise ConfigError("rho must be positive")
        return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return ExperimentConfig.from_dict(raw, path.parent)


def build_scenarios(spec: dict, dim: int) -> ScenarioSet:
    if "atoms" in spec:
        atoms = np.asarray(spec["atoms"], dtype=float).reshape(len(spec["atoms"]), -1)
        return ScenarioSet(atoms, spec.get("weights"))
    rng = np.random.default_rng(int(spec["seed"]))
    n = int(spec["n"])
    kind = spec.get("distribution", "normal")
    if kind == "normal":
        pts = rng.standard_normal((n, dim))
    elif kind == "uniform":
        pts = rng.uniform(float(spec.get("low", 0.0)), float(spec.get("high", 1.0)), (n, dim))
    else:
        raise ConfigError(f"unknown scenario distribution {kind!r}")
    return ScenarioSet.empirical(pts)


def scenario_label(spec: dict) -> str:
    if "atoms" in spec:
        return f"atoms(n={len(spec['atoms'])})"
    kind = spec.get("distribution", "normal")
    extra = f",low={spec.get('low', 0.0)},high={spec.get('high', 1.0)}" if kind == "uniform" else ""
    return f"{kind}(n={spec['n']},seed={spec['seed']}{extra})"


def build_game(cfg: ExperimentConfig):
    scen = build_scenarios(cfg.scenarios, SCENARIO_DIMS[cfg.game])
    return GAMES[cfg.game](rho=cfg.rho, scenarios=scen, divergence=cfg.divergence, **cfg.game_options)


def oracle_reference(game, resolution=200):
    """Grid minimizer of the summed expected losses over the joint action box."""
    dims = game.action_dims()
    lower = np.concatenate([d.lower for d in game.decision_sets])
    upper = np.concatenate([d.upper for d in game.decision_sets])
    cuts = np.cumsum([0] + dims)
    w = game.base_scenarios.weights

    def total(x):
        acts = tuple(x[cuts[i]:cuts[i + 1]] for i in range(len(dims)))
        return sum(float(w @ game.loss_values(j, acts)) for j in range(game.n_players))

    x, _ = oracle.grid_global_min(total, lower, upper, resolution=resolution)
    return tuple(x[cuts[i]:cuts[i + 1]] for i in range(len(dims)))


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def action_columns(max_dim):
    return ["action"] if max_dim == 1 else [f"action_{i}" for i in range(max_dim)]


def write_trajectory(path, result, dims):
    cols = action_columns(max(dims))
    header = ["t", "player"] + cols + ["lambda", "mu", "objective", "bound", "lyapunov"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        n_samples = len(result.trajectories[0])
        for k in range(n_samples):
            for j, tr in enumerate(result.trajectories):
                z = tr.z[k]
                acts = [_fmt(v) for v in z[:dims[j]]] + [""] * (len(cols) - dims[j])
                wr.writerow([_fmt(tr.t[k]), j] + acts + [_fmt(z[-2]), _fmt(z[-1]), _fmt(tr.objective[k]),
                                                          _fmt(tr.bound[k]), _fmt(tr.lyapunov[k])])


SUMMARY_TAIL = ["lambda", "mu", "objective", "reference_objective", "time_to_eta", "iterations_to_eta",
                "equilibrium", "equilibrium_gap", "grid_limited", "scenarios", "error"]


def cmd_run(cfg: ExperimentConfig, log=print) -> int:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    game = build_game(cfg)
    dims = game.action_dims()
    if cfg.reference is not None:
        reference = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in cfg.reference)
    elif game.reference_profile is not None:
        reference = game.reference_profile
    elif sum(dims) <= 3 and all(hasattr(d, "lower") for d in game.decision_sets):
        reference = oracle_reference(game)
    else:
        reference = None

    runs = [("bregman", run_learning(game, cfg.learner, reference=reference, on_divergence="stop"),
             cfg.learner.dt * cfg.learner.record_every)]
    for b in cfg.baselines:
        res = run_baseline(game, b["method"], b["step"], b["iters"], init_actions=cfg.learner.init_actions,
                           init_lambda=cfg.learner.init_lambda, reference=reference, on_divergence="stop")
        runs.append((b["method"], res, b["step"]))

    if reference is not None:
        targets = []
        for j in range(game.n_players):
            targets.append(inner_dual(game.loss_values(j, reference), game.base_scenarios.weights,
                                      game.divergence, game.rho, game.lambda_min).value)
    else:
        final = runs[0][1].trajectories
        targets = [tr.objective[-1] for tr in final]

    rows = []
    status = 0
    for method, res, unit in runs:
        write_trajectory(out / f"trajectory_{method}.csv", res, dims)
        idx = hitting_index(res.trajectories, targets, cfg.eta, diverged=res.error is not None)
        if idx is None:
            t_eta, it_eta = math.nan, None
        else:
            t_eta = res.trajectories[0].t[idx]
            it_eta = int(round(t_eta / (cfg.learner.dt if method == "bregman" else unit)))
        cert = None
        if res.error is None:
            cert = is_robust_equilibrium(game, res.final.actions, eta=float(cfg.certificate["eta"]),
                                         probe_grid=int(cfg.certificate["probe_grid"]))
        else:
            # a diverging baseline is a result; a diverging Bregman run is a failure
            if method == "bregman":
                status = 3
            log(f"{method}: {res.error}")
        for j, z in enumerate(res.final.decisions):
            obj = player_objective(game, j, res.final.actions).value(z.as_vector())
            acts = [_fmt(v) for v in z.action] + [""] * (max(dims) - dims[j])
            rows.append([method, j] + acts + [
                _fmt(z.lam), _fmt(z.mu), _fmt(obj), _fmt(targets[j]), _fmt(t_eta), _fmt(it_eta),
                "" if cert is None else _fmt(cert.is_equilibrium),
                "" if cert is None else _fmt(cert.gaps[j]),
                "" if cert is None else _fmt(cert.grid_limited),
                scenario_label(cfg.scenarios), res.error or ""])
        log(f"{method}: final actions {[z.action.tolist() for z in res.final.decisions]}, "
            f"time to eta {t_eta}")
    with open(out / "summary.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["method", "player"] + action_columns(max(dims)) + SUMMARY_TAIL)
        wr.writerows(rows)
    return status


# ---------------------------------------------------------------------------
# verification suites
# ---------------------------------------------------------------------------


def verify_duality(cases=50, seed=0, tol=1e-4, log=print) -> bool:
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok = True
    for i in range(cases):
        n = int(rng.integers(2, 7))
        losses = rng.normal(size=n)
        w = rng.dirichlet(np.ones(n))
        rho = float(rng.uniform(0.01, 1.0))
        dual = inner_dual(losses, w, KL, rho).value
        primal = oracle.primal_inner_sup(losses, w, KL, rho, method="sqp").value
        gap = abs(dual - primal) / max(abs(primal), 1e-12)
        worst = max(worst, gap)
        ok &= gap <= tol
        log(f"case {i}: atoms={n} rho={rho:.4f} dual={dual:.10g} primal={primal:.10g} rel_gap={gap:.3e}")
    log(f"duality: {'PASS' if ok else 'FAIL'} worst relative gap {worst:.3e} (tol {tol})")
    return ok


def verify_triality(cases=1000, seed=0, log=print) -> bool:
    rng = np.random.default_rng(seed)
    passed = 0
    min_margin = math.inf
    for _ in range(cases):
        rep = oracle.triality_check(rng.normal(size=(5, 5, 5)))
        passed += rep.passed
        min_margin = min(min_margin, min(rep.margins))
    ok = passed == cases
    log(f"triality: {'PASS' if ok else 'FAIL'} {passed}/{cases} smallest margin {min_margin:.3e}")
    return ok


def verify_bounds(horizon=5.0, dt=1e-2, log=print) -> bool:
    obj = SmoothObjective(lambda z: 0.5 * float(z @ z), lambda z: np.array(z, dtype=float),
                          lambda z: np.eye(z.size))
    tr = integrate(sq_euclidean(), ideal_scaling(), obj, [1.0], horizon=horizon, dt=dt, z_star=np.zeros(1))
    t, _, _, err, lyap, bound = tr.arrays()
    violations = int(np.sum(err > bound * (1 + 1e-3)))
    rises = int(np.sum(np.diff(lyap) > 1e-6 * dt))
    ok = violations == 0 and rises == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.nanmax(np.where(bound > 0, err / bound, 0.0))
    log(f"bounds: {'PASS' if ok else 'FAIL'} {violations} bound violations, {rises} Lyapunov increases "
        f"in {len(t)} samples; max error/bound {ratio:.4f}")
    return ok


SUITES = {"duality": verify_duality, "triality": verify_triality, "bounds": verify_bounds}


def cmd_verify(suite: str, log=print) -> int:
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    return 0 if SUITES[suite](log=log) else 1


def cmd_list_games(log=print) -> int:
    for name in sorted(GAMES):
        doc = (GAMES[name].__doc__ or "").strip().splitlines()[0]
        log(f"{name}: {doc}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="drgame", description="Distributionally robust game experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config and write CSV artifacts")
    p_run.add_argument("config")
    p_run.add_argument("--output", help="override the output directory")
    p_ver = sub.add_parser("verify", help="run an oracle verification suite")
    p_ver.add_argument("suite", choices=sorted(SUITES))
    sub.add_parser("list-games", help="list built-in games")
    args = parser.parse_args(argv)

    if args.command == "list-games":
        return cmd_list_games()
    if args.command == "verify":
        return cmd_verify(args.suite)
    try:
        cfg = load_config(args.config)
    except (OSError, yaml.YAMLError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.output:
        cfg.output = args.output
    try:
        return cmd_run(cfg)
    except OSError as exc:
        print(f"error: cannot write artifacts: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
