"""Monte Carlo experiment runner for the cooperative solvers.

A config is a plain dict (usually loaded from JSON)::

    {
      "scenario": {"generate": {"n_anchors": 12, "n_agents": 50, "side": 1.0,
                                "comm_range": 0.3, "seed": 1}},
      "sigmas": [0.02, 0.05, 0.1],
      "solvers": [{"name": "ls"}, {"name": "coop_ls"},
                  {"name": "pocs", "graph": "range"},
                  {"name": "admm", "graph": "range", "params": {"warm_start": "pocs"}}],
      "n_trials": 100,
      "seed": 7,
      "output": "results/"
    }

``scenario`` may instead be ``{"file": path}`` or an inline scenario dict.
The scenario is fixed; ranges are drawn once per (sigma, trial) on every
node pair. Solvers with ``graph: "full"`` see all of them, ``"range"``
solvers only the pairs within the scenario's connectivity range.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coop import (SolverConfig, solve_admm, solve_ls_gradient, solve_mds_smacof,
                   solve_pocs, solve_sequential)
from .errors import ConfigError, EmptyResolvedSet, LocalizationError
from .scenario import NetworkScenario, generate_benchmark_scenario, synthesize_ranges

SOLVERS = ("ls", "coop_ls", "sequential", "mds", "pocs", "admm")
GRAPHS = ("full", "range")
PERCENTILES = (50, 90)
ROW_FIELDS = ("solver", "sigma", "trial", "rmse_m", "resolved_fraction",
              "converged_fraction", "ranges_sha256", "error")
_CONFIG_KEYS = {"max_iterations", "step_tolerance", "objective_tolerance",
                "initializer", "seed", "acceleration"}


def compute_rmse(estimates, truth) -> float:
    """Root mean squared Euclidean error over the agents present in ``estimates``.

    Both arguments map agent id to position; ``estimates`` may omit
    unresolved agents or carry NaN for them.
    """
    errs = per_agent_errors(estimates, truth)
    return float(np.sqrt(np.mean(errs ** 2)))


def per_agent_errors(estimates, truth) -> np.ndarray:
    ids = [k for k, v in estimates.items() if np.all(np.isfinite(v))]
    if not ids:
        raise EmptyResolvedSet("no resolved agents to score")
    missing = [k for k in ids if k not in truth]
    if missing:
        raise KeyError(f"no ground truth for agents {missing}")
    return np.array([np.linalg.norm(np.asarray(estimates[k], float) - np.asarray(truth[k], float))
                     for k in sorted(ids)])


def error_cdf(errors, percentiles=PERCENTILES):
    """Empirical quantiles with linear interpolation between order statistics."""
    e = np.asarray(errors, float)
    if e.size == 0:
        raise ValueError("no errors given")
    vals = np.percentile(e, percentiles, method="linear")
    return [(float(p), float(v)) for p, v in zip(percentiles, np.atleast_1d(vals))]


def trial_seed(base, sigma_index, trial) -> int:
    """Stable per-trial noise seed; independent of the solver list."""
    ss = np.random.SeedSequence([int(base), int(sigma_index), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def ranges_digest(ranges) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ranges.edges, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(ranges.values, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


@dataclass
class SolverSpec:
    name: str
    label: str
    graph: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    scenario: dict
    sigmas: list
    solvers: list
    n_trials: int = 100
    seed: int = 0
    output: str = None
    workers: int = 1

    @classmethod
    def from_dict(cls, data, base_dir=None) -> "ExperimentConfig":
        """Validate ``data`` and build a config.

        Raises:
            ConfigError: listing every invalid field by dotted path.
        """
        p = {}
        if not isinstance(data, dict):
            raise ConfigError({"<root>": "config must be a JSON object"})
        unknown = set(data) - {"scenario", "sigmas", "solvers", "n_trials", "seed", "output", "workers"}
        for k in sorted(unknown):
            p[k] = "unknown field"
        scen = data.get("scenario")
        if not isinstance(scen, dict):
            p["scenario"] = "required object (generate, file or inline scenario)"
        elif "file" in scen:
            path = scen["file"]
            if base_dir and not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            if not os.path.exists(path):
                p["scenario.file"] = f"no such file: {scen['file']}"
            else:
                scen = {"file": path}
        elif "generate" in scen:
            g = scen["generate"]
            allowed = {"n_anchors", "n_agents", "side", "comm_range", "seed"}
            if not isinstance(g, dict):
                p["scenario.generate"] = "must be an object"
            else:
                for k in sorted(set(g) - allowed):
                    p[f"scenario.generate.{k}"] = "unknown field"
        elif "nodes" not in scen:
            p["scenario"] = "needs 'generate', 'file' or inline 'nodes'"
        sig = data.get("sigmas")
        if not isinstance(sig, list) or not sig:
            p["sigmas"] = "required non-empty list of noise levels"
        else:
            for n, s in enumerate(sig):
                if not isinstance(s, (int, float)) or isinstance(s, bool) or s < 0:
                    p[f"sigmas[{n}]"] = "must be a non-negative number"
        sol = data.get("solvers")
        specs = []
        if not isinstance(sol, list) or not sol:
            p["solvers"] = "at least one solver is required"
        else:
            labels = set()
            for n, s in enumerate(sol):
                path = f"solvers[{n}]"
                if isinstance(s, str):
                    s = {"name": s}
                if not isinstance(s, dict):
                    p[path] = "must be a solver name or object"
                    continue
                name = s.get("name")
                if name not in SOLVERS:
                    p[f"{path}.name"] = f"unknown solver {name!r}; choose from {', '.join(SOLVERS)}"
                    continue
                graph = s.get("graph", "full")
                if graph not in GRAPHS:
                    p[f"{path}.graph"] = f"must be one of {GRAPHS}"
                params = s.get("params", {})
                if not isinstance(params, dict):
                    p[f"{path}.params"] = "must be an object"
                    params = {}
                allowed = set(_CONFIG_KEYS)
                if name == "admm":
                    allowed |= {"penalty", "tolerance", "warm_start"}
                    if params.get("warm_start", "pocs") not in (None, "pocs"):
                        p[f"{path}.params.warm_start"] = "must be 'pocs' or null"
                if name == "pocs":
                    allowed |= {"projection"}
                for k in sorted(set(params) - allowed):
                    p[f"{path}.params.{k}"] = "unknown parameter"
                label = s.get("label", name if graph == "full" or name in ("pocs", "admm")
                              else f"{name}_{graph}")
                if label in labels:
                    p[f"{path}.label"] = f"duplicate label {label!r}"
                labels.add(label)
                specs.append(SolverSpec(name, label, graph, dict(params)))
        nt = data.get("n_trials", 100)
        if not isinstance(nt, int) or isinstance(nt, bool) or nt < 1:
            p["n_trials"] = "must be an integer >= 1"
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            p["seed"] = "must be a non-negative integer"
        w = data.get("workers", 1)
        if not isinstance(w, int) or isinstance(w, bool) or w < 1:
            p["workers"] = "must be an integer >= 1"
        if p:
            raise ConfigError(p)
        return cls(scen, list(sig), specs, nt, seed, data.get("output"), w)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError({"<file>": f"invalid JSON: {exc}"}) from exc
        except OSError as exc:
            raise ConfigError({"<file>": str(exc)}) from exc
        return cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))

    def build_scenario(self) -> NetworkScenario:
        s = self.scenario
        try:
            if "file" in s:
                with open(s["file"]) as fh:
                    return NetworkScenario.from_json(fh.read())
            if "generate" in s:
                return generate_benchmark_scenario(**s["generate"])
            return NetworkScenario.from_dict(s)
        except (LocalizationError, ValueError, KeyError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError({"scenario": str(exc)}) from exc


@dataclass
class MetricTable:
    rows: list
    aggregates: list
    timings: list = field(default_factory=list)

    def check_consistency(self):
        """Recompute aggregates from the per-trial rows and compare."""
        again = aggregate_rows(self.rows)
        if json.dumps(again, sort_keys=True) != json.dumps(self.aggregates, sort_keys=True):
            raise AssertionError("aggregates disagree with per-trial rows")

    def lookup(self, solver, sigma):
        for a in self.aggregates:
            if a["solver"] == solver and a["sigma"] == sigma:
                return a
        raise KeyError((solver, sigma))

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in self.rows:
            w.writerow([_fmt(r[k]) for k in ROW_FIELDS])
        return buf.getvalue()

    def aggregates_json(self) -> str:
        return json.dumps(self.aggregates, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
            fh.write(self.rows_csv())
        with open(os.path.join(out_dir, "aggregates.json"), "w") as fh:
            fh.write(self.aggregates_json())
        # wall times vary run to run, so they stay out of the metrics file
        with open(os.path.join(out_dir, "timings.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["solver", "sigma", "trial", "wall_time_s"])
            for t in self.timings:
                w.writerow([t["solver"], _fmt(t["sigma"]), t["trial"], f"{t['wall_time_s']:.6f}"])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def aggregate_rows(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r["solver"], r["sigma"]), []).append(r)
    out = []
    for (solver, sigma), rs in groups.items():
        rm = np.array([r["rmse_m"] for r in rs], float)
        ok = rm[np.isfinite(rm)]
        agg = {"solver": solver, "sigma": sigma, "n_trials": len(rs),
               "n_failed": int(len(rs) - len(ok)),
               "mean_rmse": float(np.mean(ok)) if len(ok) else None,
               "mean_resolved_fraction": float(np.mean([r["resolved_fraction"] for r in rs])),
               "converged_fraction": float(np.mean([r["converged_fraction"] for r in rs]))}
        for p, v in (error_cdf(ok) if len(ok) else [(p, None) for p in PERCENTILES]):
            agg[f"rmse_p{int(p)}"] = v
        out.append(agg)
    return out


def _make_config(params):
    kw = {k: v for k, v in params.items() if k in _CONFIG_KEYS}
    return SolverConfig(**kw) if kw else None


def _run_one(spec, scenario, ranges, cache):
    cfg = _make_config(spec.params)
    if spec.name == "ls":
        return solve_ls_gradient(scenario, ranges, cfg, cooperative=False)
    if spec.name == "coop_ls":
        return solve_ls_gradient(scenario, ranges, cfg)
    if spec.name == "sequential":
        return solve_sequential(scenario, ranges, cfg)
    if spec.name == "mds":
        return solve_mds_smacof(scenario, ranges, cfg)
    if spec.name == "pocs":
        return solve_pocs(scenario, ranges, cfg, spec.params.get("projection", "hybrid"))
    # admm
    kw = {k: spec.params[k] for k in ("penalty", "tolerance") if k in spec.params}
    if spec.params.get("warm_start", "pocs") == "pocs":
        key = ("pocs-warm", spec.graph)
        if key not in cache:
            cache[key] = solve_pocs(scenario, ranges)
        base = dict(spec.params)
        base = {k: v for k, v in base.items() if k in _CONFIG_KEYS}
        base.update(initializer="warm", warm_start=cache[key])
        cfg = SolverConfig(**base)
    return solve_admm(scenario, ranges, cfg, **kw)


def _run_trial(args):
    cfg, scenario, full_edges, si, sigma, trial = args
    seed = trial_seed(cfg.seed, si, trial)
    full = synthesize_ranges(scenario, sigma, seed, edges=full_edges)
    views = {"full": full, "range": full.restrict_to(scenario.edges)}
    digests = {k: ranges_digest(v) for k, v in views.items()}
    truth = {int(k): scenario.positions[k] for k in scenario.agent_ids}
    rows, times, cache = [], [], {}
    for spec in cfg.solvers:
        t0 = time.perf_counter()
        row = {"solver": spec.label, "sigma": float(sigma), "trial": int(trial),
               "ranges_sha256": digests[spec.graph], "error": ""}
        try:
            res = _run_one(spec, scenario, views[spec.graph], cache)
            est = {int(k): v for k, v in res.positions.items() if res.status.get(k) == "resolved"}
            try:
                row["rmse_m"] = compute_rmse(est, truth)
            except EmptyResolvedSet:
                row["rmse_m"] = float("nan")
            row["resolved_fraction"] = float(res.resolved_fraction())
            row["converged_fraction"] = 1.0 if res.converged else 0.0
        except LocalizationError as exc:
            row.update(rmse_m=float("nan"), resolved_fraction=0.0, converged_fraction=0.0,
                       error=type(exc).__name__)
        rows.append(row)
        times.append({"solver": spec.label, "sigma": float(sigma), "trial": int(trial),
                      "wall_time_s": time.perf_counter() - t0})
    return rows, times


def run_experiment(config) -> MetricTable:
    """Run every solver on identical measurements for each (sigma, trial).

    ``config`` is an :class:`ExperimentConfig` or a raw dict. Rows are sorted
    by (sigma index, trial, solver order) regardless of ``workers``.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    scenario = cfg.build_scenario()
    full_edges = scenario.fully_connected().edges
    tasks = [(cfg, scenario, full_edges, si, s, t)
             for si, s in enumerate(cfg.sigmas) for t in range(cfg.n_trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(_run_trial, tasks, chunksize=4))
    else:
        results = [_run_trial(t) for t in tasks]
    rows = [r for rs, _ in results for r in rs]
    timings = [t for _, ts in results for t in ts]
    table = MetricTable(rows, aggregate_rows(rows), timings)
    table.check_consistency()
    return table
