"""Command line entry point: ``python3 -m radioloc <command> ...``.

Commands::

    simulate     --config exp.json [--seed N] [--trials N] [--out DIR]
    aoa          --config aoa.json [--seed N] [--out spectrum.csv]
    bounds       --config bounds.json [--out sweep.csv]
    fingerprint build --config map.json --out radiomap.json
    fingerprint query --map radiomap.json --config query.json [--out est.json]

Exit status is 0 on success, 2 on an invalid config and 1 on any other
package error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import aoa, bounds, fingerprint
from .errors import ConfigError, LocalizationError
from .harness import ExperimentConfig, run_experiment


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError({"<file>": f"invalid JSON in {path}: {exc}"}) from exc
    except OSError as exc:
        raise ConfigError({"<file>": str(exc)}) from exc


def _check_keys(data, allowed, problems):
    if not isinstance(data, dict):
        raise ConfigError({"<root>": "config must be a JSON object"})
    for k in sorted(set(data) - set(allowed)):
        problems[k] = "unknown field"


def cmd_simulate(args):
    data = _load_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.trials is not None:
        data["n_trials"] = args.trials
    cfg = ExperimentConfig.from_dict(data, base_dir=os.path.dirname(os.path.abspath(args.config)))
    out = args.out or cfg.output or "results"
    table = run_experiment(cfg)
    table.write(out)
    for a in table.aggregates:
        mean = "nan" if a["mean_rmse"] is None else f"{a['mean_rmse']:.6f}"
        print(f"{a['solver']:>12s}  sigma={a['sigma']:<6g} mean_rmse={mean}")
    print(f"wrote {os.path.join(out, 'metrics.csv')}")
    return 0


def cmd_aoa(args):
    data = _load_json(args.config)
    p = {}
    _check_keys(data, ("array", "sources", "noise_power", "snapshots", "method", "n_sources",
                       "grid_step", "diagonal_loading", "seed"), p)
    arr = data.get("array", {})
    m = arr.get("n_elements", 8)
    if not isinstance(m, int) or m < 2:
        p["array.n_elements"] = "integer >= 2"
    sources = data.get("sources", [])
    if not isinstance(sources, list) or not all(
            isinstance(s, list) and len(s) == 2 for s in sources):
        p["sources"] = "list of [angle_deg, power] pairs"
    method = data.get("method", "music")
    if method not in ("bartlett", "capon", "music"):
        p["method"] = "one of bartlett, capon, music"
    snaps = data.get("snapshots", 0)
    if not isinstance(snaps, int) or snaps < 0:
        p["snapshots"] = "integer >= 0 (0 uses the exact covariance)"
    if p:
        raise ConfigError(p)
    geom = aoa.ArrayGeometry.ula(m, arr.get("spacing", 0.5))
    seed = args.seed if args.seed is not None else data.get("seed", 0)
    X, R = aoa.synthesize_snapshots(geom, sources, data.get("noise_power", 1.0),
                                    max(snaps, 1), seed)
    if snaps:
        R = aoa.sample_covariance(X)
    grid = aoa.default_grid(data.get("grid_step", 0.1))
    if method == "bartlett":
        spec = aoa.bartlett_spectrum(R, geom, grid)
    elif method == "capon":
        spec = aoa.capon_spectrum(R, geom, grid, data.get("diagonal_loading"),
                                  n_snapshots=snaps or None)
    else:
        spec = aoa.music_spectrum(R, geom, grid, data.get("n_sources", max(len(sources), 1)))
    out = args.out or "spectrum.csv"
    spec.to_csv(out)
    print("peak_deg  rel_db")
    vmax = spec.values.max()
    for a in spec.peaks():
        v = spec.values[np.searchsorted(spec.angles, a)]
        print(f"{a:8.2f}  {10 * np.log10(v / vmax):6.2f}")
    print(f"wrote {out}")
    return 0


def cmd_bounds(args):
    data = _load_json(args.config)
    p = {}
    _check_keys(data, ("spectrum", "snr_db", "mode", "t_obs", "quadrature_points"), p)
    sp = data.get("spectrum", {})
    kind = sp.get("kind", "flat")
    if kind not in ("flat", "edge", "csv"):
        p["spectrum.kind"] = "one of flat, edge, csv"
    n = sp.get("n", 1201)
    df = sp.get("spacing", 15e3)
    if kind != "csv" and (not isinstance(n, int) or n < 1 or n % 2 == 0):
        p["spectrum.n"] = "odd integer >= 1"
    if kind == "csv" and "path" not in sp:
        p["spectrum.path"] = "required for kind=csv"
    sweep = data.get("snr_db", {"start": -10, "stop": 40, "num": 26})
    if not isinstance(sweep, dict) or not {"start", "stop", "num"} <= set(sweep):
        p["snr_db"] = "object with start, stop, num"
    mode = data.get("mode", "sqrt")
    if mode not in bounds.ZZLB_MODES:
        p["mode"] = f"one of {bounds.ZZLB_MODES}"
    if p:
        raise ConfigError(p)
    if kind == "flat":
        spec = bounds.DiscreteSpectrum.flat(n, df)
    elif kind == "edge":
        spec = bounds.DiscreteSpectrum.edge(n, df)
    else:
        path = sp["path"]
        if not os.path.isabs(path):
            path = os.path.join(os.path.dirname(os.path.abspath(args.config)), path)
        spec = bounds.DiscreteSpectrum.from_power_csv(path, df)
    t_obs = data.get("t_obs", 0.5 / df)
    snr_db = np.linspace(sweep["start"], sweep["stop"], int(sweep["num"]))
    out = args.out or "bounds.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["snr_db", "crlb_std_m", "zzlb_std_m"])
        for s in snr_db:
            lin = 10 ** (s / 10)
            c = bounds.crlb_range_variance(spec, lin).std
            z = bounds.zzlb_range_variance(spec, lin, t_obs, data.get("quadrature_points", 256),
                                           mode).std
            w.writerow([repr(float(s)), repr(c), repr(z)])
            print(f"{s:7.2f} dB  crlb={c:10.4f} m  zzlb={z:10.4f} m")
    print(f"wrote {out}")
    return 0


def cmd_fingerprint_build(args):
    data = _load_json(args.config)
    p = {}
    _check_keys(data, ("csv", "synthetic"), p)
    if p:
        raise ConfigError(p)
    if "csv" in data:
        path = data["csv"]
        if not os.path.isabs(path):
            path = os.path.join(os.path.dirname(os.path.abspath(args.config)), path)
        rmap = fingerprint.RadioMap.from_csv(path)
    elif "synthetic" in data:
        s = data["synthetic"]
        p = {}
        if "aps" not in s:
            p["synthetic.aps"] = "list of AP positions"
        if "grid" not in s:
            p["synthetic.grid"] = "object with nx, ny, step"
        if p:
            raise ConfigError(p)
        g = s["grid"]
        xs, ys = np.meshgrid(np.arange(g["nx"]) * g["step"], np.arange(g["ny"]) * g["step"],
                             indexing="ij")
        locs = np.column_stack([xs.ravel(), ys.ravel()])
        rmap = fingerprint.synthetic_radio_map(locs, s["aps"], s.get("p0", -30.0),
                                               s.get("path_loss_exp", 2.5))
    else:
        raise ConfigError({"<root>": "needs 'csv' or 'synthetic'"})
    out = args.out or "radiomap.json"
    with open(out, "w") as fh:
        fh.write(rmap.to_json(indent=1))
    print(f"{len(rmap)} fingerprints, {len(rmap.ap_universe)} access points -> {out}")
    return 0


def cmd_fingerprint_query(args):
    with open(args.map) as fh:
        rmap = fingerprint.RadioMap.from_json(fh.read())
    data = _load_json(args.config)
    p = {}
    _check_keys(data, ("readings", "method", "metric", "k", "missing_value"), p)
    readings = data.get("readings")
    if not isinstance(readings, dict) or not readings:
        p["readings"] = "non-empty object ap_id -> rssi_dbm"
    method = data.get("method", "rbf")
    if method not in ("rbf", "classical"):
        p["method"] = "rbf or classical"
    metric = data.get("metric", "spearman")
    if metric not in fingerprint.METRICS:
        p["metric"] = f"one of {fingerprint.METRICS}"
    k = data.get("k", 1)
    if not isinstance(k, int) or k < 1:
        p["k"] = "integer >= 1"
    if p:
        raise ConfigError(p)
    if method == "rbf":
        est = fingerprint.rbf_locate(rmap, readings, metric, k)
    else:
        est = fingerprint.classical_locate(rmap, readings, k,
                                           data.get("missing_value", fingerprint.DEFAULT_MISSING_DBM))
    text = json.dumps({"estimate": [float(v) for v in est], "method": method,
                       "metric": metric if method == "rbf" else None, "k": k})
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="radioloc", description="Radio localization toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo benchmark of the cooperative solvers")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("aoa", help="angular spectrum of a synthetic ULA scene")
    a.add_argument("--config", required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_aoa)

    b = sub.add_parser("bounds", help="CRLB / ZZLB ranging bound sweep")
    b.add_argument("--config", required=True)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bounds)

    f = sub.add_parser("fingerprint", help="radio map build and query")
    fsub = f.add_subparsers(dest="action", required=True)
    fb = fsub.add_parser("build")
    fb.add_argument("--config", required=True)
    fb.add_argument("--out")
    fb.set_defaults(func=cmd_fingerprint_build)
    fq = fsub.add_parser("query")
    fq.add_argument("--map", required=True)
    fq.add_argument("--config", required=True)
    fq.add_argument("--out")
    fq.set_defaults(func=cmd_fingerprint_query)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LocalizationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
