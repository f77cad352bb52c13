"""Experiment orchestration: build models and policies from a config, run
seeded trials, persist trajectories and fold them into a report.

Trial ``i`` of master seed ``m`` always uses stream key ``(m, (i,))``, and
results are gathered back in trial order, so the worker count has no effect
on any output byte.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .adaptive import near_stability_metric
from .config import ExperimentConfig, load_config, to_yaml
from .environments import DeterministicChain, QueueConfig, QueueNetwork, ReflectedWalk
from .errors import BudgetError, ContractError, UsageError
from .grid import GridParams, grid_params
from .policy import BoltzmannParams, eps_of_delta, kappa_bound, tau_of_alpha, tau_terms
from .simulation import PlannerPolicy, ServeLongestPolicy, UniformPolicy, closed_loop
from .sparse import SparseParams, sparse_params
from .stability import LyapunovSpec, hajek_constants, stability_verdict
from .streams import StreamKey
from .trajectory import read_csv, write_csv

REPORT_SCHEMA = 1


def build_model(cfg: ExperimentConfig):
    env = cfg.environment
    if env.kind in ("two_queue", "queue_network"):
        if env.kind == "two_queue" and len(env.arrival) != 2:
            raise UsageError("two_queue needs exactly two arrival and service rates")
        return QueueNetwork(QueueConfig(tuple(env.arrival), tuple(env.service), env.reward_scale),
                            gamma=env.gamma)
    if env.kind == "reflected_walk":
        return ReflectedWalk(env.p_up, gamma=env.gamma)
    return DeterministicChain(env.rewards, stride=env.stride, gamma=env.gamma,
                              action_count=env.actions)


def lyapunov_spec(cfg: ExperimentConfig) -> LyapunovSpec:
    return LyapunovSpec(**cfg.lyapunov.model_dump())


def resolve_tau(cfg: ExperimentConfig, model) -> tuple[float, str]:
    pol = cfg.policy
    if pol.tau is not None:
        return pol.tau, "config"
    return tau_of_alpha(pol.alpha, cfg.lyapunov.nu, model.gamma, model.r_max,
                        model.action_count, pol.delta_min), "alpha"


def derived_params(cfg: ExperimentConfig, model, delta: float | None):
    """Formula-derived oracle parameters at ``delta`` (``None`` if ``delta`` is unset or >= 1)."""
    if delta is None or not delta < 1.0:
        return None
    if cfg.oracle.kind == "vanilla":
        return sparse_params(delta, model.gamma, model.action_count)
    return grid_params(delta, model.gamma, cfg.oracle.zeta, model.dimension, model.v_max,
                       model.action_count, _nu_prime(cfg, model))


def _nu_prime(cfg, model):
    return model.state_increment_bound or cfg.lyapunov.nu_prime


def operational_params(cfg: ExperimentConfig, model, delta: float | None):
    """Derived values with any explicit overrides from the oracle section applied."""
    o = cfg.oracle
    derived = derived_params(cfg, model, delta)
    pick = {}
    for name in ("horizon", "width") + (("epsilon",) if o.kind == "grid" else ()):
        value = getattr(o, name)
        if value is None:
            if derived is None:
                raise UsageError(f"oracle.{name} is unset and no delta < 1 is available to derive it")
            value = getattr(derived, name)
        pick[name] = value
    if o.kind == "vanilla":
        return SparseParams(gamma=model.gamma, delta=delta, **pick), derived
    return GridParams(gamma=model.gamma, delta=delta, zeta=o.zeta, dimension=model.dimension,
                      nu_prime=_nu_prime(cfg, model), **pick), derived


def oracle_delta(cfg: ExperimentConfig, tau: float | None) -> float | None:
    if cfg.oracle.delta is not None:
        return cfg.oracle.delta
    if cfg.policy.couple_delta and tau is not None:
        return BoltzmannParams.coupled(tau).delta
    return None


def make_policy(cfg: ExperimentConfig, model, delta: float | None = None):
    """Fixed policy for plain runs; with ``delta`` given, the tuner's policy at that delta."""
    kind = cfg.policy.kind
    if kind == "uniform":
        return UniformPolicy()
    if kind == "serve_longest":
        return ServeLongestPolicy()
    if delta is None:
        tau, _ = resolve_tau(cfg, model)
        delta = oracle_delta(cfg, tau)
    else:
        tau = BoltzmannParams.from_delta(delta).tau
    params, _ = operational_params(cfg, model, delta)
    return PlannerPolicy(cfg.oracle.kind, params, tau, reuse_cache=cfg.oracle.reuse_cache)


def _initial_state(cfg, model):
    s0 = cfg.environment.initial_state
    return np.zeros(model.dimension) if s0 is None else np.asarray(s0, dtype=np.float64)


def run_trial(cfg: ExperimentConfig, trial: int) -> dict:
    """Run one trial; never raises for budget or contract failures."""
    model = build_model(cfg)
    spec = lyapunov_spec(cfg)
    key = StreamKey(cfg.run.seed, (trial,))
    header = dict(trial=trial, config_hash=cfg.config_hash())
    meta = {"policy": cfg.policy.kind, "oracle": cfg.oracle.kind,
            "adaptive": str(cfg.adaptive.enabled).lower()}
    if cfg.oracle.reuse_cache:
        meta["reuse_cache"] = "true"
    kw = dict(s0=_initial_state(cfg, model), horizon=cfg.run.horizon, key=key, spec=spec,
              budget_cap=cfg.run.budget_cap, meta=meta, **header)
    try:
        if cfg.adaptive.enabled:
            from .adaptive import TunerState

            tuner = TunerState(t0=cfg.adaptive.t0, floor=cfg.adaptive.floor)
            rec, _ = closed_loop(model, lambda d: make_policy(cfg, model, d), tuner=tuner, **kw)
        else:
            tau, _ = resolve_tau(cfg, model) if cfg.policy.kind == "planner" else (None, None)
            delta = oracle_delta(cfg, tau)
            rec = closed_loop(model, make_policy(cfg, model), delta=1.0 if delta is None else delta, **kw)
        return {"trial": trial, "record": rec, "error": None}
    except (BudgetError, ContractError) as err:
        return {"trial": trial, "record": err.partial, "error": str(err)}


def _run_trial_args(args):
    cfg_data, trial = args
    return run_trial(ExperimentConfig.model_validate(cfg_data), trial)


def run_trials(cfg: ExperimentConfig) -> list[dict]:
    trials = range(cfg.run.trials)
    if cfg.run.workers <= 1:
        return [run_trial(cfg, i) for i in trials]
    data = cfg.model_dump()
    with ProcessPoolExecutor(max_workers=cfg.run.workers) as pool:
        return list(pool.map(_run_trial_args, [(data, i) for i in trials], chunksize=1))


# ---------------------------------------------------------------- reports

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dumps(doc) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


def trial_summary(rec, cfg: ExperimentConfig) -> dict:
    drops = np.flatnonzero(np.diff(rec.deltas) < 0)
    out = {
        "trial": rec.trial, "status": rec.status, "rows": len(rec),
        "planner_samples": int(rec.samples.sum()), "environment_steps": len(rec) - 1,
        "halvings": int(len(drops)), "final_delta": float(rec.deltas[-1]),
        "halving_times": [int(t) for t in drops],
        "last_halving": int(drops[-1]) if len(drops) else None,
        "max_state_norm": float(rec.norms.max()),
    }
    t0 = cfg.adaptive.t0
    if len(rec) > max(t0, 2):
        out["near_stability_metric"] = near_stability_metric(rec, t0)
    return out


def build_report(cfg: ExperimentConfig, records) -> dict:
    """Fold trajectory records into the report; uses nothing but the records and the config."""
    records = sorted(records, key=lambda r: r.trial)
    spec = lyapunov_spec(cfg)
    a = cfg.analysis
    levels = np.arange(a.levels.start, a.levels.stop + 0.5 * a.levels.step, a.levels.step)
    full = [r for r in records if r.status == "ok"]
    warnings = []
    if not records:
        warnings.append("no trajectories found")
    if len(full) < len(records):
        warnings.append(f"{len(records) - len(full)} trajectories ended early and are excluded from the verdict")
    report = stability_verdict(full, spec, theta=a.theta, levels=levels,
                               late_fraction=a.late_fraction, n_checkpoints=a.checkpoints,
                               alpha_scale=a.alpha_scale, rho_variant=a.rho_variant)
    trials = [trial_summary(r, cfg) for r in records]
    statuses = sorted({r.status for r in records})
    doc = {
        "schema": REPORT_SCHEMA,
        "config_hash": cfg.config_hash(),
        "environment": records[0].env if records else cfg.environment.kind,
        "parameters": params_sheet(cfg),
        "trials": trials,
        "totals": {
            "trials": len(records),
            "completed": len(full),
            "statuses": {s: sum(r.status == s for r in records) for s in statuses},
            "planner_samples": sum(t["planner_samples"] for t in trials),
            "environment_steps": sum(t["environment_steps"] for t in trials),
        },
        "stability": report.to_dict(),
        "warnings": warnings,
    }
    if cfg.adaptive.enabled and trials:
        metrics = [t.get("near_stability_metric") for t in trials]
        metrics = [m for m in metrics if m is not None]
        doc["adaptive"] = {
            "t0": cfg.adaptive.t0, "floor": cfg.adaptive.floor,
            "max_halvings": max(t["halvings"] for t in trials),
            "max_near_stability_metric": max(metrics) if metrics else None,
        }
    return _jsonable(doc)


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, write: bool = True) -> dict:
    """Run every trial, write ``config.yaml``, trajectories and ``report.json``.

    Returns ``{"report", "records", "failures", "out"}``.
    """
    out = Path(out or cfg.run.out)
    results = run_trials(cfg)
    records = [r["record"] for r in results if r["record"] is not None]
    failures = [{"trial": r["trial"], "error": r["error"]} for r in results if r["error"]]
    report = build_report(cfg, records)
    if write:
        (out / "trajectories").mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(to_yaml(cfg))
        if cfg.run.write_trajectories:
            for rec in records:
                write_csv(rec, out / "trajectories" / f"trial_{rec.trial:04d}.csv")
        (out / "report.json").write_text(dumps(report))
    return {"report": report, "records": records, "failures": failures, "out": out}


def analyze(run_dir, theta: float | None = None, rho_variant: str | None = None):
    """Rebuild the report from a run directory's files alone.

    Returns ``(report, warnings)``.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    notes = []
    cfg_path = run_dir / "config.yaml"
    if cfg_path.exists():
        cfg = load_config(cfg_path)
    else:
        cfg = ExperimentConfig()
        notes.append("config.yaml missing; using defaults")
    cfg = cfg.with_overrides(analysis={"theta": theta, "rho_variant": rho_variant})
    files = sorted((run_dir / "trajectories").glob("trial_*.csv"))
    records = [read_csv(f) for f in files]
    report = build_report(cfg, records)
    return report, notes + report["warnings"]


# ---------------------------------------------------------------- params

def _projection(params, A):
    ac = A * params.width
    # sum of (A C)^h for h < H, in floating point since it can be astronomically large
    return float(ac) * sum(float(ac) ** h for h in range(params.horizon))


def params_sheet(cfg: ExperimentConfig) -> dict:
    """All formula-derived quantities for ``cfg``, plus sample-cost projections."""
    model = build_model(cfg)
    A = model.action_count
    sheet = {
        "environment": {"name": model.name, "dimension": model.dimension, "actions": A,
                        "r_max": model.r_max, "gamma": model.gamma, "v_max": model.v_max,
                        "nu_prime": _nu_prime(cfg, model)},
        "flags": [],
    }
    cap = cfg.run.budget_cap
    tau = None
    pol = cfg.policy
    if pol.kind == "planner":
        tau, source = resolve_tau(cfg, model)
        entry = {"tau": tau, "source": source}
        if pol.alpha is not None and pol.delta_min is not None:
            entry["tau_of_alpha"] = tau_of_alpha(pol.alpha, cfg.lyapunov.nu, model.gamma, model.r_max,
                                                 A, pol.delta_min)
            entry["tau_terms"] = tau_terms(pol.alpha, cfg.lyapunov.nu, model.gamma, model.r_max,
                                           A, pol.delta_min)
        sheet["policy"] = entry
    delta = oracle_delta(cfg, tau)
    if delta is not None:
        eps_q = eps_of_delta(delta, model.r_max, model.gamma)
        sheet["accuracy"] = {"delta": delta, "q_error_radius": eps_q}
        if tau is not None and pol.delta_min is not None:
            sheet["accuracy"]["kappa"] = kappa_bound(eps_q, tau, A, pol.delta_min)
        van = sparse_params(delta, model.gamma, A)
        sheet["vanilla"] = {"horizon": van.horizon, "width": van.width,
                            "projected_samples": _projection(van, A)}
        grd = grid_params(delta, model.gamma, cfg.oracle.zeta, model.dimension, model.v_max, A,
                          _nu_prime(cfg, model))
        N = grd.grid_bound()
        sheet["grid"] = {"horizon": grd.horizon, "width": grd.width, "epsilon": grd.epsilon,
                         "grid_bound": float(N), "sample_ceiling": float(A) * grd.width * float(N)}
        if sheet["vanilla"]["projected_samples"] > cap:
            sheet["flags"].append(
                f"vanilla projection {sheet['vanilla']['projected_samples']:.4g} exceeds budget cap {cap}")
        if sheet["grid"]["sample_ceiling"] > cap:
            sheet["flags"].append(
                f"grid ceiling {sheet['grid']['sample_ceiling']:.4g} exceeds budget cap {cap}")
    if pol.kind == "planner":
        try:
            params, _ = operational_params(cfg, model, delta)
        except UsageError as exc:
            sheet["flags"].append(str(exc))
        else:
            op = {"oracle": cfg.oracle.kind, "horizon": params.horizon, "width": params.width,
                  "projected_samples": _projection(params, A)}
            if isinstance(params, GridParams):
                op["epsilon"] = params.epsilon
                op["grid_bound"] = float(params.grid_bound())
                op["sample_ceiling"] = float(A) * params.width * op["grid_bound"]
            sheet["operational"] = op
            if cfg.oracle.kind == "vanilla" and op["projected_samples"] > cap:
                sheet["flags"].append(f"operational projection {op['projected_samples']:.4g} "
                                      f"exceeds budget cap {cap}")
    try:
        spec = lyapunov_spec(cfg)
        hc = hajek_constants(spec, cfg.analysis.alpha_scale * spec.alpha, cfg.analysis.rho_variant)
        sheet["hajek"] = {"c": hc.c, "eta": hc.eta, "rho": hc.rho, "alpha_eff": hc.alpha_eff,
                          "variant": hc.variant, "contraction_holds": hc.contraction_holds}
    except UsageError as exc:
        sheet["flags"].append(f"hajek constants unavailable: {exc}")
    return _jsonable(sheet)


def format_sheet(sheet: dict, color: bool = False) -> str:
    lines = []
    for section, body in sheet.items():
        if section == "flags":
            continue
        lines.append(f"[{section}]")
        for k, v in body.items():
            if isinstance(v, float):
                v = f"{v:.6g}"
            elif isinstance(v, list):
                v = ", ".join(f"{x:.6g}" if isinstance(x, float) else str(x) for x in v)
            lines.append(f"  {k} = {v}")
    for flag in sheet.get("flags", []):
        text = f"WARNING: {flag}"
        lines.append(f"\033[31m{text}\033[0m" if color else text)
    return "\n".join(lines)
