"""Experiment orchestration: configs, scenario instances, trial fan-out and artifacts."""
from __future__ import annotations

import copy
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bounds as bd
from .datamodel import Problem
from .engines import BatchConfig, EngineConfig, run_batch_trial, run_trial
from .errors import ConfigurationError, DataError
from .gls_oracle import gls_solve, table_report
from .graph import Topology, complete, generate
from .metrics import ensemble_average, series_to_csv, summarize
from .plots import line_chart, write_svg
from .scenarios import (FidSchema, MrfFieldSpec, ScalingSpec, fid_ingest, fid_node_variances,
                        fid_surrogate, mrf_build, scaling_build, toy_build, write_fid_csv)

SCENARIOS = ("mrf", "scaling", "toy", "problem", "fid")
ENGINE_KEYS = {"gamma", "fl_gamma", "delta", "beta", "horizon", "horizon_events", "snapshots",
               "snapshot_times", "distribution", "w0", "dt", "beta_mode"}


@dataclass
class RunConfig:
    """Scenario block, engine block, trial count, seed and optional sweep/reference."""

    scenario: dict
    engine: dict = field(default_factory=dict)
    trials: int = 10
    seed: int = 0
    engines: list = field(default_factory=lambda: ["sgn"])
    sweep: tuple | None = None
    reference: dict | None = None

    def __post_init__(self):
        kind = self.scenario.get("scenario")
        if kind not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {kind!r}; expected one of {SCENARIOS}")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        unknown = set(self.engine) - ENGINE_KEYS
        if unknown:
            raise ConfigurationError(f"unknown engine key(s): {sorted(unknown)}")
        bad = [e for e in self.engines if e not in ("sgn", "fl", "sde", "sde-fl")]
        if bad:
            raise ConfigurationError(f"unknown engine(s) {bad}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = copy.deepcopy(d)
        engine = d.pop("engine", {})
        trials = int(d.pop("trials", 10))
        seed = int(d.pop("seed", 0))
        engines = d.pop("engines", ["sgn"])
        sweep = d.pop("sweep", None)
        if sweep is not None:
            sweep = (sweep["key"], list(sweep["values"]))
        reference = d.pop("reference", None)
        return cls(d, engine, trials, seed, engines, sweep, reference)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = dict(self.scenario)
        d.update(engine=self.engine, trials=self.trials, seed=self.seed, engines=self.engines)
        if self.sweep:
            d["sweep"] = {"key": self.sweep[0], "values": self.sweep[1]}
        if self.reference:
            d["reference"] = self.reference
        return d

    def with_value(self, key, value) -> "RunConfig":
        """Copy with one parameter replaced; ``engine.x`` targets the engine block."""
        new = copy.deepcopy(self)
        if key.startswith("engine."):
            new.engine[key.split(".", 1)[1]] = value
        elif key in ENGINE_KEYS and key not in new.scenario:
            new.engine[key] = value
        else:
            new.scenario[key.removeprefix("scenario.")] = value
        new.sweep = None
        return new

    def with_overrides(self, overrides: dict) -> "RunConfig":
        new = self
        for k, v in overrides.items():
            new = new.with_value(k, v)
        return new


def parse_sweep(text) -> tuple:
    """``"k=v1,v2"`` to ``(k, [v1, v2])`` with numeric values parsed as numbers."""
    if "=" not in text:
        raise ConfigurationError(f"sweep must look like key=v1,v2 (got {text!r})")
    key, vals = text.split("=", 1)
    out = []
    for v in vals.split(","):
        v = v.strip()
        try:
            out.append(int(v))
        except ValueError:
            try:
                out.append(float(v))
            except ValueError:
                out.append(v)
    if not key or not out:
        raise ConfigurationError(f"empty sweep {text!r}")
    return key.strip(), out


# scenario instances


def _topology(block, n, rng) -> Topology:
    if block is None:
        return complete(n)
    if "edges" in block:
        return Topology.from_dict({"n": n, **block})
    params = {k: v for k, v in block.items() if k != "kind"}
    params.setdefault("n", n)
    return generate(block.get("kind", "complete"), rng, **params)


def build_instance(scenario: dict, rng):
    """``(problem, topology)`` for every scenario except the tabular one."""
    kind = scenario["scenario"]
    params = {k: v for k, v in scenario.items() if k != "scenario"}
    if kind == "mrf":
        fields = MrfFieldSpec.__dataclass_fields__
        spec = MrfFieldSpec(**{k: v for k, v in params.items() if k in fields})
        problem, top, _ = mrf_build(spec, rng)
        return problem, top
    if kind == "scaling":
        fields = ScalingSpec.__dataclass_fields__
        spec = ScalingSpec(**{k: (tuple(v) if isinstance(v, list) else v)
                              for k, v in params.items() if k in fields})
        w = params.get("w_star")
        return scaling_build(spec, int(params.get("N", 5)), rng,
                             None if w is None else np.asarray(w, float))
    if kind == "toy":
        return toy_build(rng, int(params.get("N", 5)), int(params.get("m", 4)), int(params.get("p", 3)),
                         params.get("equal_rates", True), params.get("uniform_weights", False),
                         None if params.get("w_star") is None else np.asarray(params["w_star"], float),
                         params.get("design", "anchored"))
    if kind == "problem":
        block = params.get("problem")
        if block is None:
            raise ConfigurationError("problem scenario needs a 'problem' block or path")
        problem = Problem.load(block) if isinstance(block, str) else Problem.from_dict(block)
        return problem, _topology(params.get("topology"), problem.n_nodes, rng)
    raise ConfigurationError(f"scenario {kind!r} has no streaming instance")


def instance_is_random(scenario) -> bool:
    return scenario["scenario"] in ("mrf", "scaling") or (
        scenario["scenario"] == "toy" and not scenario.get("fixed", True))


def engine_config(engine: dict, problem: Problem, kind: str) -> EngineConfig:
    """Resolve horizon, snapshot grid, step size and start point for one engine."""
    fl = kind in ("fl", "sde-fl")
    gamma = engine.get("fl_gamma", engine.get("gamma")) if fl else engine.get("gamma")
    if gamma is None:
        raise ConfigurationError("engine block needs gamma")
    if "snapshot_times" in engine:
        times = list(engine["snapshot_times"])
    else:
        if "horizon_events" in engine:
            horizon = float(engine["horizon_events"]) / problem.mus.sum()
        elif "horizon" in engine:
            horizon = float(engine["horizon"])
        else:
            raise ConfigurationError("engine block needs horizon, horizon_events or snapshot_times")
        n = int(engine.get("snapshots", 10))
        times = (np.arange(1, n + 1) * horizon / n).tolist()
    beta = engine.get("beta", 1.0)
    if engine.get("beta_mode") == "mean_rate":
        beta = float(problem.mus.mean())
    w0 = engine.get("w0", "zeros")
    if w0 == "zeros":
        w0 = None
    elif w0 == "w_star":
        w0 = problem.w_star
    return EngineConfig(gamma=float(gamma), delta=float(engine.get("delta", 0.0)), beta=float(beta),
                        snapshot_times=times, distribution=engine.get("distribution", "exponential"),
                        w0=w0, dt=engine.get("dt"))


# trial fan-out


def _trial(args):
    kind, scenario, engine, trial, inst_ss, dyn_ss, fixed = args
    problem, top = fixed if fixed is not None else build_instance(scenario, np.random.default_rng(inst_ss))
    cfg = engine_config(engine, problem, kind)
    return run_trial(kind, problem, top if kind in ("sgn", "sde") else None, cfg, dyn_ss, trial=trial)


def trial_seeds(seed, trials):
    return [ss.spawn(2) for ss in np.random.SeedSequence(seed).spawn(trials)]


def fixed_instance(cfg: RunConfig):
    if instance_is_random(cfg.scenario):
        return None
    return build_instance(cfg.scenario, np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA5])))


def representative_instance(cfg: RunConfig):
    """The fixed instance, or the one drawn for trial 0 when instances are random."""
    fixed = fixed_instance(cfg)
    if fixed is not None:
        return fixed
    return build_instance(cfg.scenario, np.random.default_rng(trial_seeds(cfg.seed, 1)[0][0]))


def resolve_horizon(cfg: RunConfig) -> RunConfig:
    """Turn ``horizon_events`` into a clock horizon shared by all trials.

    Random instances have random total rates, so the conversion uses the
    trial-0 instance to keep one snapshot grid across trials.
    """
    if "horizon_events" not in cfg.engine or "snapshot_times" in cfg.engine:
        return cfg
    problem, _ = representative_instance(cfg)
    new = copy.deepcopy(cfg)
    new.engine["horizon"] = float(new.engine.pop("horizon_events")) / problem.mus.sum()
    return new


def run_engines(cfg: RunConfig, workers=1) -> dict:
    """``{engine: [MetricsSeries, ...]}`` sorted by trial index."""
    cfg = resolve_horizon(cfg)
    seeds = trial_seeds(cfg.seed, cfg.trials)
    fixed = fixed_instance(cfg)
    out = {}
    for kind in cfg.engines:
        tasks = [(kind, cfg.scenario, cfg.engine, t, a, b, fixed) for t, (a, b) in enumerate(seeds)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                series = list(ex.map(_trial, tasks))
        else:
            series = [_trial(t) for t in tasks]
        out[kind] = sorted(series, key=lambda s: s.trial)
    return out


def final_stats(series, metric="phi") -> dict:
    v = np.array([s.final(metric) for s in series])
    half = 1.959963984540054 * v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0
    return {"mean": float(v.mean()), "half_width": float(half), "values": v.tolist()}


# tabular scenario


def load_fid(cfg: RunConfig, data_path=None):
    sc = cfg.scenario
    schema = FidSchema.from_mapping(sc["mapping"]) if sc.get("mapping") else FidSchema(
        n_nodes=sc.get("n_nodes", 15), mini_batch=sc.get("mini_batch", 10))
    path = data_path or sc.get("data")
    surrogate = path is None
    if surrogate:
        import tempfile

        rows = fid_surrogate(np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xF1D])))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "fid_surrogate.csv")
            write_fid_csv(path, rows)
            data = fid_ingest(path, schema)
    else:
        if not os.path.exists(path):
            raise DataError(f"data file not found: {path}")
        data = fid_ingest(path, schema)
    return data, surrogate


def batch_config(cfg: RunConfig) -> BatchConfig:
    e, sc = cfg.engine, cfg.scenario
    horizon = float(e.get("horizon", 3000))
    n = int(e.get("snapshots", 10))
    return BatchConfig(gamma=float(e.get("gamma", 1e-3)), delta=float(e.get("delta", 100.0)),
                       beta=float(e.get("beta", 1.0)),
                       snapshot_times=(np.arange(1, n + 1) * horizon / n).tolist(),
                       mini_batch=int(sc.get("mini_batch", 10)), phi=float(sc.get("phi", 0.9)),
                       window=int(sc.get("window", 15)))


def _batch_task(args):
    data, top, bcfg, trial, ss = args
    return run_batch_trial(data, top, bcfg, ss, trial=trial)


def run_fid(cfg: RunConfig, data_path=None, workers=1):
    """Returns ``(series, table_report_dict)``."""
    data, surrogate = load_fid(cfg, data_path)
    bcfg = batch_config(cfg)
    top = complete(data.n_nodes)
    tasks = [(data, top, bcfg, t, b) for t, (_, b) in enumerate(trial_seeds(cfg.seed, cfg.trials))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            series = list(ex.map(_batch_task, tasks))
    else:
        series = [_batch_task(t) for t in tasks]
    estimates = []
    for s in series:
        a = 1.0 / s.traces[-1]
        estimates.append(ensemble_average(s.models[-1], a / a.sum()))
    w_sgn = np.mean(estimates, axis=0)
    sol = gls_solve(data.X, fid_node_variances(data)[data.node_of_row], data.y,
                    level=float(cfg.scenario.get("ci_level", 0.97)))
    rep = table_report(sol, w_sgn, list(data.names), np.mean([s.final("phi") for s in series]))
    rep.update(surrogate=surrogate, rows=rep["rows"], n_rows=int(len(data.y)), rejected_rows=data.rejected)
    return series, rep


# artifacts


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(bd.clean_json(obj), fh, indent=2)


def _write_engine_outputs(out: Path, results: dict, title=""):
    out.mkdir(parents=True, exist_ok=True)
    single = len(results) == 1
    summaries = {}
    for kind, series in results.items():
        d = out if single else out / kind
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "metrics.csv", "w", newline="") as fh:
            series_to_csv(series, fh)
        summaries[kind] = summarize(series)
        summaries[kind]["final_phi"] = final_stats(series)
    metrics = sorted({m for s in summaries.values() for m in s.get("metrics", {})})
    for m in metrics:
        chart = {k: (s["times"], s["metrics"][m]["mean"], s["metrics"][m]["half_width"])
                 for k, s in summaries.items() if m in s["metrics"]}
        write_svg(out / f"plot_{m}.svg", line_chart(chart, f"{title} {m}".strip(), "time", m))
    return summaries


def cmd_run(cfg: RunConfig, out_dir, workers=1, data_path=None, beta_convention="proof") -> dict:
    """Run every sweep cell, write CSV/JSON/SVG artifacts and return the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [({}, cfg)] if cfg.sweep is None else [
        ({cfg.sweep[0]: v}, cfg.with_value(cfg.sweep[0], v)) for v in cfg.sweep[1]]
    summary = {"config": cfg.to_dict(), "seed": cfg.seed, "trials": cfg.trials, "cells": []}
    ref_phi = None
    if cfg.reference is not None and cfg.scenario["scenario"] != "fid":
        ref_cfg = cfg.with_overrides(cfg.reference)
        ref_cfg.engines = ["sgn"]
        ref = run_engines(ref_cfg, workers)["sgn"]
        ref_phi = final_stats(ref)
        summary["reference"] = {"overrides": cfg.reference, "final_phi": ref_phi}
    for overrides, cell_cfg in cells:
        sub = out if not overrides else out / "_".join(f"{k}={v}" for k, v in overrides.items())
        entry = {"sweep": overrides}
        if cell_cfg.scenario["scenario"] == "fid":
            series, rep = run_fid(cell_cfg, data_path, workers)
            entry["engines"] = _write_engine_outputs(sub, {"sgn": series}, "sgn")
            _dump(sub / "table1.json", rep)
            entry["table1"] = rep
        else:
            results = run_engines(cell_cfg, workers)
            entry["engines"] = _write_engine_outputs(sub, results)
            if ref_phi is not None and "sgn" in results:
                entry["phi_s"] = final_stats(results["sgn"])["mean"] / ref_phi["mean"]
            problem, top = representative_instance(cell_cfg)
            write_bounds(sub / "bounds.json", problem, top, cell_cfg, beta_convention)
        summary["cells"].append(entry)
    if cfg.sweep is not None:
        key, values = cfg.sweep
        if all(isinstance(v, (int, float)) for v in values):
            engines = summary["cells"][0]["engines"].keys()
            chart = {k: (values, [c["engines"][k]["final_phi"]["mean"] for c in summary["cells"]],
                         [c["engines"][k]["final_phi"]["half_width"] for c in summary["cells"]])
                     for k in engines}
            write_svg(out / "plot_sweep_phi.svg", line_chart(chart, f"final phi vs {key}", key, "phi"))
    _dump(out / "summary.json", summary)
    return summary


def bound_inputs(engine: dict, problem: Problem):
    """``(gamma, delta, beta, w0, snapshot_times)`` without the engine's positivity checks."""
    probe = dict(engine)
    gamma = float(probe.get("gamma", 0.0))
    probe["gamma"] = gamma if gamma > 0 else 1.0
    ecfg = engine_config(probe, problem, "sgn")
    return gamma, ecfg.delta, ecfg.beta, ecfg.w0, np.asarray(ecfg.snapshot_times)


def report_for(cfg: RunConfig, problem, top, beta_convention="proof"):
    gamma, delta, beta, w0, t = bound_inputs(cfg.engine, problem)
    return bd.bound_report(problem, top, gamma, delta, beta, w0, beta_convention), gamma * t, t


def write_bounds(path, problem, top, cfg: RunConfig, beta_convention="proof"):
    rep, s, t = report_for(cfg, problem, top, beta_convention)
    cmp = auto_comparison(problem, rep, beta_convention)
    bd.write_bounds_json(path, rep, cmp, s, t)
    return rep, cmp


def auto_comparison(problem, rep, beta_convention="proof"):
    ah = problem.alpha_hat
    no_common = all(np.all(s.lambda_diag == 0) for s in problem.nodes)
    mode = "uniform" if np.allclose(ah, ah[0]) or not no_common else "inverse-variance"
    cmp = bd.fl_comparison(rep.constants, rep.C2, rep.C3, rep.delta, rep.beta, mode, problem,
                           rep.C1, beta_convention)
    if mode == "uniform" and not np.allclose(ah, ah[0]):
        cmp.notes.append("weights are not uniform: equal-weight rule shown for reference only")
        cmp.decision = "inconclusive"
    return cmp


def bound_check(cfg: RunConfig, problem, top, beta_convention="proof", workers=1, slack=0.1) -> dict:
    """Monte Carlo validation of the bound curves with the diffusion engines."""
    ecfg = engine_config(cfg.engine, problem, "sgn")
    rep, _, _ = report_for(cfg, problem, top, beta_convention)
    check_cfg = copy.deepcopy(cfg)
    check_cfg.engines = ["sde", "sde-fl"]
    fixed = (problem, top)
    seeds = trial_seeds(cfg.seed, cfg.trials)
    res = {}
    for kind in check_cfg.engines:
        tasks = [(kind, cfg.scenario, cfg.engine, t, a, b, fixed) for t, (a, b) in enumerate(seeds)]
        res[kind] = [_trial(x) for x in tasks] if workers <= 1 else list(
            ProcessPoolExecutor(max_workers=workers).map(_trial, tasks))
    s = ecfg.gamma * np.asarray(ecfg.snapshot_times)
    V = np.mean([x.values["Vbar"] for x in res["sde"]], axis=0)
    U = np.mean([x.values["U"] for x in res["sde"]], axis=0)
    F = np.mean([x.values["F"] for x in res["sde-fl"]], axis=0)
    checks = {
        "thm1": bool(np.all(V <= (1 + slack) * rep.thm1(s))),
        "thm2": bool(np.all(U <= (1 + slack) * rep.thm2(s))),
        "thm3": bool(np.all((F >= (1 - slack) * rep.thm3_lower(s)) & (F <= (1 + slack) * rep.thm3_upper(s)))),
    }
    return {"passed": all(checks.values()), "checks": checks, "s": s.tolist(),
            "Vbar": V.tolist(), "thm1": rep.thm1(s).tolist(), "U": U.tolist(),
            "thm2": np.asarray(rep.thm2(s)).tolist(), "F": F.tolist(),
            "thm3_lower": rep.thm3_lower(s).tolist(), "thm3_upper": np.asarray(rep.thm3_upper(s)).tolist()}
