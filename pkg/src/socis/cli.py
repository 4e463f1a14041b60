"""Command-line experiment runner.

``socis run CONFIG`` runs one experiment and writes ``results.csv``,
``trace.csv`` (policy-iteration runs) and ``manifest.json`` into the output
directory. ``socis compare RESULTS --oracle NAME --tol X`` tabulates errors
against a closed-form or quadrature oracle. See README for the config grammar.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .api import ApiConfig, ApiStatus, api_run_log, api_run_quad, monotonicity_report, write_trace_rows
from .benchmarks import (DoubleWellProblem, ShellProblem, bm_interval_mfet_exact,
                         double_well_committor_1d, shell_committor_exact)
from .costs import CostSpecLog, McParams
from .cv import OuModel, ControlVariateSpec, cv_seed_table, mfet_control_variate, mgf_sweep
from .errors import ConfigError, SocisError
from .rbf import RbfBasis
from .sde import SdeModel, StopDomain

EXPERIMENTS = ("SHELL_API_LOG", "SHELL_API_QUAD", "DOUBLE_WELL", "OU_MFET_CV", "MGF_SWEEP")
REQUIRED = object()

_RUN = {"name": (str, REQUIRED), "seed": (int, 0), "output_dir": (str, "out"),
        "threads": (int, 1)}
_MC = {"dt": (float, REQUIRED), "n_paths": (int, REQUIRED), "max_steps": (int, 1_000_000)}
_API = {"epsilon_reg": (float, REQUIRED), "tol": (float, 0.1), "max_iters": (int, 10),
        "n_points": (int, 51), "basis": (str, "gaussian"), "n_centers": (int, 11),
        "width": (float, None), "lam": (float, 1.0), "control_cap": (float, None),
        "init": (str, "auto"), "quad_sampling": (str, "minus")}

SCHEMAS = {
    "SHELL_API_LOG": {"experiment": _RUN, "mc": _MC, "api": _API,
                      "model": {"dim": (int, REQUIRED), "R1": (float, REQUIRED),
                                "R2": (float, REQUIRED), "sigma": (float, 1.0)}},
    "DOUBLE_WELL": {"experiment": _RUN, "mc": _MC, "api": _API,
                    "model": {"beta": (float, 4.0), "barrier_pos": (float, 1.5)}},
    "OU_MFET_CV": {"experiment": _RUN, "mc": _MC,
                   "model": {"dim": (int, REQUIRED), "beta": (float, REQUIRED),
                             "R": (float, REQUIRED)},
                   "cv": {"seeds": (list, REQUIRED), "n_reference": (int, 10_000),
                          "reference_seed": (int, 999_999)}},
    "MGF_SWEEP": {"experiment": _RUN, "mc": _MC,
                  "model": {"a": (float, -1.0), "b": (float, 1.0), "sigma": (float, 1.0),
                            "x0": (float, 0.0)},
                  "mgf": {"lambdas": (list, REQUIRED)}},
}
SCHEMAS["SHELL_API_QUAD"] = SCHEMAS["SHELL_API_LOG"]


@dataclass
class ExperimentConfig:
    experiment: str
    sections: dict
    source: str = ""

    @property
    def seed(self):
        return self.sections["experiment"]["seed"]

    @property
    def output_dir(self):
        return self.sections["experiment"]["output_dir"]

    def resolved(self):
        return {s: dict(v) for s, v in self.sections.items()}


def _line_of(text, section, key=None):
    cur = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            cur = line[1:-1].strip()
            if key is None and cur == section:
                return n
        elif cur == section and key is not None and "=" in line:
            if line.split("=", 1)[0].strip() == key:
                return n
    return None


def _where(path, text, section, key=None):
    n = _line_of(text, section, key)
    loc = f"{path}:{n}" if n else path
    field = f"[{section}] {key}" if key else f"[{section}]"
    return loc, field


def _convert(typ, raw):
    if typ is list:
        return [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw.strip()


def parse_config(path) -> ExperimentConfig:
    """Parse and validate an INI experiment config (or a resolved ``manifest.json``).

    Raises
    ------
    ConfigError
        Naming the offending field, with the line number when known.
    """
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        data = json.loads(text)
        return _validate(path, "", {s: {k: ("" if v is None else
                                            ",".join(map(repr, v)) if isinstance(v, list)
                                            else str(v)) for k, v in sec.items()}
                                     for s, sec in data["config"].items()})
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raw = {s: dict(cp.items(s)) for s in cp.sections()}
    return _validate(path, text, raw)


def _validate(path, text, raw):
    if "experiment" not in raw or "name" not in raw["experiment"]:
        raise ConfigError(f"{path}: missing required field [experiment] name")
    name = raw["experiment"]["name"].strip().upper()
    if name not in EXPERIMENTS:
        loc, _ = _where(path, text, "experiment", "name")
        raise ConfigError(f"{loc}: unknown experiment {name!r}; expected one of "
                          + ", ".join(EXPERIMENTS))
    schema = SCHEMAS[name]
    for sec in raw:
        if sec not in schema:
            loc, _ = _where(path, text, sec)
            raise ConfigError(f"{loc}: unknown section [{sec}] for {name}")
    out = {}
    for sec, keys in schema.items():
        given = raw.get(sec, {})
        for k in given:
            if k not in keys:
                loc, field = _where(path, text, sec, k)
                raise ConfigError(f"{loc}: unknown key {field}")
        vals = {}
        for k, (typ, default) in keys.items():
            if k in given and given[k].strip() != "":
                try:
                    vals[k] = _convert(typ, given[k])
                except ValueError:
                    loc, field = _where(path, text, sec, k)
                    raise ConfigError(f"{loc}: cannot parse {field} = {given[k]!r}") from None
            elif default is REQUIRED:
                raise ConfigError(f"{path}: missing required field [{sec}] {k}")
            else:
                vals[k] = default
        out[sec] = vals
    out["experiment"]["name"] = name
    return ExperimentConfig(name, out, path)


def _mc(cfg, seed=None, n_paths=None):
    m = cfg.sections["mc"]
    e = cfg.sections["experiment"]
    return McParams(m["dt"], n_paths or m["n_paths"], m["max_steps"],
                    seed=e["seed"] if seed is None else seed, threads=e["threads"])


def _basis(api, lo, hi):
    return RbfBasis.uniform(api["basis"], lo, hi, api["n_centers"], api["width"])


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _api_common(cfg, lo, hi, formulation):
    api = cfg.sections["api"]
    return ApiConfig(formulation, _basis(api, lo, hi),
                     tuple(np.linspace(lo, hi, api["n_points"])), _mc(cfg),
                     tol=api["tol"], max_iters=api["max_iters"], lam=api["lam"],
                     epsilon_reg=api["epsilon_reg"], control_cap=api["control_cap"],
                     init=api["init"], quad_sampling=api["quad_sampling"])


def _run_shell(cfg, out):
    m = cfg.sections["model"]
    quad = cfg.experiment == "SHELL_API_QUAD"
    p = ShellProblem(m["dim"], m["R1"], m["R2"], m["sigma"])
    ac = _api_common(cfg, p.R1, p.R2, "QUAD" if quad else "LOG")
    runner = api_run_quad if quad else api_run_log
    _, value, trace = runner(ac, p.model(), p.domain())
    r = np.asarray(ac.eval_points)
    x = np.zeros((r.size, p.dim))
    x[:, 0] = r
    fit = value(x)
    eps = ac.epsilon_reg
    est = (np.sqrt(np.maximum(fit, 0.0)) if quad else np.exp(-fit / ac.lam)) - eps
    oracle = shell_committor_exact(p, r)
    last = trace.final
    rows = [(r[i], est[i], last.cost[i], last.std_error[i], oracle[i], m["dim"], p.R1, p.R2,
             eps) for i in range(r.size)]
    _write_csv(os.path.join(out, "results.csv"),
               ["coordinate", "estimate", "cost", "std_error", "oracle", "dim", "R1", "R2",
                "epsilon_reg"], rows)
    with open(os.path.join(out, "trace.csv"), "w", newline="") as fh:
        write_trace_rows(csv.writer(fh), trace)
    mono = monotonicity_report(trace)
    return {"status": trace.status.value, "iterations": trace.n_iterations,
            "monotonicity": mono.aggregate if mono.defined else None, "notes": trace.notes}


def _run_double_well(cfg, out):
    m = cfg.sections["model"]
    api = cfg.sections["api"]
    p = DoubleWellProblem(m["beta"], m["barrier_pos"], api["epsilon_reg"])
    ac = _api_common(cfg, p.a, p.b, "LOG")
    from dataclasses import replace
    ac = replace(ac, radialize=False)
    _, value, trace = api_run_log(ac, p.model(), p.domain())
    xs = np.asarray(ac.eval_points)
    est = np.exp(-value(xs[:, None]) / ac.lam) - p.epsilon_reg
    oracle = double_well_committor_1d(p, xs)
    last = trace.final
    rows = [(xs[i], est[i], last.cost[i], last.std_error[i], oracle[i], p.beta,
             p.barrier_pos, p.epsilon_reg) for i in range(xs.size)]
    _write_csv(os.path.join(out, "results.csv"),
               ["coordinate", "estimate", "cost", "std_error", "oracle", "beta",
                "barrier_pos", "epsilon_reg"], rows)
    with open(os.path.join(out, "trace.csv"), "w", newline="") as fh:
        write_trace_rows(csv.writer(fh), trace)
    return {"status": trace.status.value, "iterations": trace.n_iterations, "notes": trace.notes}


def _run_ou(cfg, out):
    m = cfg.sections["model"]
    c = cfg.sections["cv"]
    ou = OuModel(m["dim"], m["beta"], m["R"])
    model, dom, x0 = ou.model(), ou.domain(), np.zeros(ou.dim)
    ref = mfet_control_variate(model, dom, ControlVariateSpec.zero(), x0,
                               _mc(cfg, seed=c["reference_seed"], n_paths=c["n_reference"]))
    seeds = [int(s) for s in c["seeds"]]
    table = cv_seed_table(model, dom, ou.approximate_cv(), x0, _mc(cfg), seeds)
    rows = []
    for s, e in zip(seeds, table):
        lo, hi = e.interval()
        clo, chi = e.crude_interval()
        rows.append((s, e.estimate, e.std_error, e.crude_estimate, e.crude_std_error, lo, hi,
                     clo, chi, ref.crude_estimate, ref.crude_std_error,
                     int(e.std_error < e.crude_std_error), int(lo <= ref.crude_estimate <= hi)))
    _write_csv(os.path.join(out, "results.csv"),
               ["seed", "estimate", "std_error", "crude_estimate", "crude_std_error", "ci_low",
                "ci_high", "crude_ci_low", "crude_ci_high", "reference", "reference_std_error",
                "narrower", "contains_reference"], rows)
    return {"status": "OK", "narrower": sum(r[-2] for r in rows),
            "contains_reference": sum(r[-1] for r in rows), "n_seeds": len(rows)}


def _run_mgf(cfg, out):
    m = cfg.sections["model"]
    model = SdeModel.brownian(1, m["sigma"])
    dom = StopDomain.interval(m["a"], m["b"])
    lams = cfg.sections["mgf"]["lambdas"]
    rows, (tm, tse) = mgf_sweep(model, dom, None, [m["x0"]], lams, _mc(cfg))
    oracle = bm_interval_mfet_exact(m["a"], m["b"], m["x0"], m["sigma"])
    _write_csv(os.path.join(out, "results.csv"),
               ["lambda", "coordinate", "estimate", "std_error", "tau_mean", "tau_std_error",
                "oracle_mfet", "a", "b", "sigma"],
               [(lam, m["x0"], e, se, tm, tse, oracle, m["a"], m["b"], m["sigma"])
                for lam, e, se in rows])
    est = [e for _, e, _ in sorted(rows, key=lambda t: -t[0])]
    return {"status": "OK", "monotone": bool(all(b >= a for a, b in zip(est, est[1:])))}


_RUNNERS = {"SHELL_API_LOG": _run_shell, "SHELL_API_QUAD": _run_shell,
            "DOUBLE_WELL": _run_double_well, "OU_MFET_CV": _run_ou, "MGF_SWEEP": _run_mgf}


def run_experiment(cfg: ExperimentConfig):
    """Run ``cfg`` and write its artifacts.

    Returns
    -------
    exit_code : int
        0 on success, 3 when a policy-iteration run diverged.
    summary : dict
    """
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.time()
    summary = _RUNNERS[cfg.experiment](cfg, out)
    status = summary.get("status")
    code = 3 if isinstance(status, str) and status.startswith("DIVERGED") else 0
    manifest = {"version": __version__, "experiment": cfg.experiment, "seed": cfg.seed,
                "config": cfg.resolved(), "summary": summary, "exit_code": code,
                "started": started, "elapsed_seconds": time.time() - t0}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return code, summary


ORACLES = ("SHELL", "DOUBLE_WELL", "BM_MFET")


def _oracle_value(name, row):
    x = float(row["coordinate"])
    try:
        if name == "SHELL":
            p = ShellProblem(int(float(row["dim"])), float(row["R1"]), float(row["R2"]))
            return float(shell_committor_exact(p, x))
        if name == "DOUBLE_WELL":
            p = DoubleWellProblem(float(row["beta"]), float(row["barrier_pos"]))
            if not p.a <= x <= p.b:
                return None
            return float(double_well_committor_1d(p, x))
        return float(bm_interval_mfet_exact(float(row["a"]), float(row["b"]), x,
                                            float(row.get("sigma", 1.0))))
    except SocisError:
        return None


def compare_to_oracle(results_csv, oracle, tol=None, column="estimate", out=None):
    """Per-row and aggregate errors of ``column`` against ``oracle``.

    Rows outside the oracle's domain are reported as NA and left out of the
    aggregates. Writes ``errors_<oracle>.csv`` next to the results unless
    ``out`` is given.

    Returns
    -------
    passed : bool
    aggregates : dict
        ``max_abs_error``, ``rmse``, ``mean_signed_error``, ``n_valid``, ``n_na``.
    """
    oracle = oracle.upper()
    if oracle not in ORACLES:
        raise ConfigError(f"unknown oracle {oracle!r}; expected one of {', '.join(ORACLES)}")
    with open(results_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and ("coordinate" not in rows[0] or column not in rows[0]):
        raise ConfigError(f"{results_csv}: needs columns 'coordinate' and {column!r}")
    table, errs = [], []
    for i, row in enumerate(rows):
        ref = _oracle_value(oracle, row)
        est = float(row[column])
        if ref is None:
            table.append((i, row["coordinate"], repr(est), "NA", "NA", "NA"))
            continue
        e = est - ref
        errs.append(e)
        table.append((i, row["coordinate"], repr(est), repr(ref), repr(e), repr(abs(e))))
    errs = np.asarray(errs)
    agg = {"n_valid": int(errs.size), "n_na": len(rows) - int(errs.size),
           "max_abs_error": float(np.max(np.abs(errs))) if errs.size else math.nan,
           "rmse": float(np.sqrt(np.mean(errs ** 2))) if errs.size else math.nan,
           "mean_signed_error": float(np.mean(errs)) if errs.size else math.nan}
    if out is None:
        out = os.path.join(os.path.dirname(os.path.abspath(results_csv)),
                           f"errors_{oracle.lower()}.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "coordinate", "estimate", "oracle", "error", "abs_error"])
        w.writerows(table)
        w.writerow([])
        for k in ("max_abs_error", "rmse", "mean_signed_error", "n_valid", "n_na"):
            w.writerow([k, repr(agg[k])])
    passed = bool(errs.size) and (tol is None or agg["max_abs_error"] <= tol)
    return passed, agg


def build_parser():
    ap = argparse.ArgumentParser(prog="socis", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a config file")
    r.add_argument("config", help="INI config, or a manifest.json from an earlier run")
    r.add_argument("--seed", type=int)
    r.add_argument("--out-dir")
    r.add_argument("--threads", type=int, help="worker threads; never changes results")
    c = sub.add_parser("compare", help="error table against an oracle")
    c.add_argument("results")
    c.add_argument("--oracle", required=True, type=str.upper, choices=ORACLES)
    c.add_argument("--tol", type=float)
    c.add_argument("--column", default="estimate")
    c.add_argument("--out")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            e = cfg.sections["experiment"]
            if args.seed is not None:
                e["seed"] = args.seed
            if args.out_dir is not None:
                e["output_dir"] = args.out_dir
            if args.threads is not None:
                e["threads"] = args.threads
            code, summary = run_experiment(cfg)
            print(json.dumps(summary, sort_keys=True))
            return code
        passed, agg = compare_to_oracle(args.results, args.oracle, args.tol, args.column,
                                        args.out)
        for k, v in agg.items():
            print(f"{k}: {v}")
        print("PASS" if passed else "FAIL")
        return 0 if passed else 1
    except SocisError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
