"""Configuration-driven experiment runner.

One self-describing JSON config lists the experiments; each experiment writes
its CSV outputs and a run.json manifest into its own subdirectory of the
output root.  Exit status 0 iff every requested pass criterion was met, 1 on
criterion failure or a runtime error inside an experiment, 2 on a config
error (rejected before any computation starts).

CSV contracts (header row, LF endings, '.' decimal separator, 17 significant
digits so reals round-trip exactly):

    steps.csv        n,t,norm,rhs_norm,estimate_satisfied,solver_iters
    convergence.csv  level,h_or_tau,error,slope_running
    stability.csv    sigma,tau,norm_T,B_spd
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .analysis import (CASE_IDS, coeff_field_from_case, convergence_study,
                       exact_scalar_field, make_manufactured, stability_probe)
from .grid import CoeffField, Grid2D, ScalarField, build_grid
from .operators import KOperator
from .schemes import SCHEME_KINDS, SOURCE_TIMES, SchemeConfig, run_evolution

__all__ = ["ConfigError", "emit_csv", "run_experiment", "main"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

ENV_OUT = "FLUXSCHEMES_OUT"
ENV_WORKERS = "FLUXSCHEMES_WORKERS"

EXPERIMENT_TYPES = ("evolve", "convergence", "stability", "sweep")
STABILITY_TOL = 1e-10


class ConfigError(ValueError):
    """Invalid experiment configuration; rejected before any computation."""


# -- CSV emission -------------------------------------------------------------

def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "undefined"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    s = str(v)
    if any(ch in s for ch in ",\"\n"):
        s = '"' + s.replace('"', '""') + '"'
    return s


def emit_csv(path: str, header: list[str], rows) -> None:
    """Write rows (any iterable of tuples) incrementally and atomically."""
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", newline="") as f:
            f.write(",".join(header) + "\n")
            for row in rows:
                if len(row) != len(header):
                    raise ValueError(f"row width {len(row)} != header width {len(header)}")
                f.write(",".join(_fmt_value(v) for v in row) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


# -- config validation helpers --------------------------------------------------

def _expect(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _get(d: dict, key: str, where: str, required: bool = True, default=None):
    if key not in d:
        _expect(not required, f"{where}: missing required field {key!r}")
        return default
    return d[key]


def _number(v, where: str) -> float:
    _expect(isinstance(v, (int, float)) and not isinstance(v, bool)
            and math.isfinite(float(v)), f"{where}: expected a finite number, got {v!r}")
    return float(v)


def _integer(v, where: str) -> int:
    _expect(isinstance(v, int) and not isinstance(v, bool), f"{where}: expected an integer, got {v!r}")
    return int(v)


def _parse_grid(d, where: str) -> Grid2D:
    _expect(isinstance(d, dict), f"{where}: expected an object")
    l1 = _number(_get(d, "l1", where, default=1.0, required=False), f"{where}.l1")
    l2 = _number(_get(d, "l2", where, default=1.0, required=False), f"{where}.l2")
    n1 = _integer(_get(d, "n1", where), f"{where}.n1")
    n2 = _integer(_get(d, "n2", where), f"{where}.n2")
    try:
        return build_grid(l1, l2, n1, n2)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_coefficients(d, grid: Grid2D, where: str) -> tuple[CoeffField, str | None]:
    _expect(isinstance(d, dict), f"{where}: expected an object")
    chi = _number(_get(d, "chi", where, required=False, default=0.5), f"{where}.chi")
    case_id = _get(d, "case", where, required=False)
    try:
        if case_id is not None:
            _expect(case_id in CASE_IDS, f"{where}.case: unknown case {case_id!r}")
            case = make_manufactured(case_id, grid.l1, grid.l2)
            return coeff_field_from_case(case, grid, chi), case_id

        def table(key):
            v = _get(d, key, where)
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                return float(v)   # CoeffField broadcasts scalars to all nodes
            _expect(isinstance(v, list), f"{where}.{key}: expected a number or nested list")
            arr = np.asarray(v, dtype=float)
            _expect(arr.shape == (grid.n1 + 1, grid.n2 + 1),
                    f"{where}.{key}: table shape {arr.shape} != {(grid.n1 + 1, grid.n2 + 1)}")
            return arr

        return CoeffField(grid, table("k11"), table("k12"), table("k22"), chi), None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_scheme(d, where: str, *, need_sigma_tau: bool = True) -> dict:
    _expect(isinstance(d, dict), f"{where}: expected an object")
    kind = _get(d, "kind", where)
    _expect(kind in SCHEME_KINDS, f"{where}.kind: unknown scheme {kind!r}")
    out = {"kind": kind}
    if need_sigma_tau:
        out["sigma"] = _number(_get(d, "sigma", where), f"{where}.sigma")
        out["tau"] = _number(_get(d, "tau", where), f"{where}.tau")
        out["horizon"] = _number(_get(d, "horizon", where), f"{where}.horizon")
        _expect(out["tau"] > 0, f"{where}.tau: must be positive")
        _expect(out["horizon"] >= out["tau"], f"{where}.horizon: must be >= tau")
    out["monitor"] = bool(_get(d, "monitor", where, required=False, default=True))
    out["cg_tol"] = _number(_get(d, "cg_tol", where, required=False, default=1e-10),
                            f"{where}.cg_tol")
    st = _get(d, "source_time", where, required=False, default="weighted")
    _expect(st in SOURCE_TIMES, f"{where}.source_time: must be one of {SOURCE_TIMES}")
    out["source_time"] = st
    return out


def _validate_experiment(exp, idx: int) -> dict:
    where = f"experiments[{idx}]"
    _expect(isinstance(exp, dict), f"{where}: expected an object")
    name = _get(exp, "name", where)
    _expect(isinstance(name, str) and name and all(c.isalnum() or c in "-_." for c in name),
            f"{where}.name: must be a filesystem-safe identifier")
    etype = _get(exp, "type", where)
    _expect(etype in EXPERIMENT_TYPES, f"{where}.type: unknown type {etype!r}")
    out = {"name": name, "type": etype, "where": where}

    if etype == "convergence":
        case_id = _get(exp, "case", where)
        _expect(case_id in CASE_IDS, f"{where}.case: unknown case {case_id!r}")
        kind = _get(exp, "scheme_kind", where)
        _expect(kind in SCHEME_KINDS, f"{where}.scheme_kind: unknown scheme {kind!r}")
        axis = _get(exp, "axis", where)
        _expect(axis in ("space", "time"), f"{where}.axis: must be 'space' or 'time'")
        levels = _get(exp, "levels", where)
        _expect(isinstance(levels, list) and len(levels) >= 2,
                f"{where}.levels: need at least two refinement levels")
        sigma = _number(_get(exp, "sigma", where), f"{where}.sigma")
        out.update(case=case_id, scheme_kind=kind, axis=axis, levels=levels, sigma=sigma,
                   chi=_number(_get(exp, "chi", where, required=False, default=0.5), f"{where}.chi"),
                   horizon=_number(_get(exp, "horizon", where, required=False, default=0.5),
                                   f"{where}.horizon"),
                   n_fixed=_integer(_get(exp, "n_fixed", where, required=False, default=16),
                                    f"{where}.n_fixed"),
                   tau0=_number(_get(exp, "tau0", where, required=False, default=0.02),
                                f"{where}.tau0"),
                   tau_rule=_get(exp, "tau_rule", where, required=False, default="fixed"),
                   reference=_get(exp, "reference", where, required=False, default="exact"))
        _expect(out["tau_rule"] in ("fixed", "h2"), f"{where}.tau_rule: must be 'fixed' or 'h2'")
        _expect(out["reference"] in ("exact", "semidiscrete"),
                f"{where}.reference: must be 'exact' or 'semidiscrete'")
        pass_block = _get(exp, "pass", where, required=False, default={})
        target = pass_block.get("target")
        if target is None:
            if axis == "space":
                target = [0.9, None] if kind in ("flux_weighted",) else [1.8, None]
            else:
                target = [1.8, None] if sigma == 0.5 and kind != "lod_diagonal" else [0.8, 1.2]
        _expect(isinstance(target, list) and len(target) == 2, f"{where}.pass.target: expected [lo, hi]")
        lo = _number(target[0], f"{where}.pass.target[0]")
        hi = math.inf if target[1] is None else _number(target[1], f"{where}.pass.target[1]")
        out["target"] = (lo, hi)
        return out

    grid = _parse_grid(_get(exp, "grid", where), f"{where}.grid")
    coeff, case_id = _parse_coefficients(_get(exp, "coefficients", where), grid,
                                         f"{where}.coefficients")
    out.update(grid=grid, coeff=coeff, case=case_id)

    if etype == "stability":
        scheme = _parse_scheme(_get(exp, "scheme", where), f"{where}.scheme", need_sigma_tau=False)
        sigmas = _get(exp, "sigmas", where)
        taus = _get(exp, "taus", where)
        _expect(isinstance(sigmas, list) and sigmas, f"{where}.sigmas: need a non-empty list")
        _expect(isinstance(taus, list) and taus, f"{where}.taus: need a non-empty list")
        out.update(scheme=scheme,
                   sigmas=[_number(s, f"{where}.sigmas") for s in sigmas],
                   taus=[_number(t, f"{where}.taus") for t in taus])
        if scheme["kind"] in ("lod_diagonal", "lod_triangular"):
            _expect(not coeff.has_mixed,
                    f"{where}: {scheme['kind']} requires k12 = 0 coefficients")
        pass_block = _get(exp, "pass", where, required=False, default={})
        out["expect_stable"] = bool(pass_block.get("expect_stable", False))
        return out

    # evolve and sweep share the scheme/source/initial machinery
    need_st = etype == "evolve"
    scheme = _parse_scheme(_get(exp, "scheme", where), f"{where}.scheme", need_sigma_tau=need_st)
    initial = _get(exp, "initial", where, required=False, default="case" if case_id else "sine")
    _expect(initial in ("case", "sine", "random", "zero"),
            f"{where}.initial: must be case|sine|random|zero")
    _expect(initial != "case" or case_id is not None,
            f"{where}.initial: 'case' initial needs case coefficients")
    source = _get(exp, "source", where, required=False, default="case" if case_id else "zero")
    _expect(source in ("case", "zero"), f"{where}.source: must be case|zero")
    _expect(source != "case" or case_id is not None,
            f"{where}.source: 'case' source needs case coefficients")
    if scheme["kind"] in ("lod_diagonal", "lod_triangular"):
        _expect(not coeff.has_mixed, f"{where}: {scheme['kind']} requires k12 = 0 coefficients")
    pass_block = _get(exp, "pass", where, required=False, default={})
    out.update(scheme=scheme, initial=initial, source=source,
               require_estimates=bool(pass_block.get("require_estimates", False)))
    if etype == "sweep":
        sigmas = _get(exp, "sigmas", where)
        taus = _get(exp, "taus", where)
        _expect(isinstance(sigmas, list) and sigmas, f"{where}.sigmas: need a non-empty list")
        _expect(isinstance(taus, list) and taus, f"{where}.taus: need a non-empty list")
        horizon = _number(_get(exp, "horizon", where), f"{where}.horizon")
        out.update(sigmas=[_number(s, f"{where}.sigmas") for s in sigmas],
                   taus=[_number(t, f"{where}.taus") for t in taus], horizon=horizon)
    return out


def _validate_config(doc) -> dict:
    _expect(isinstance(doc, dict), "config: top level must be a JSON object")
    experiments = doc.get("experiments", [])
    _expect(isinstance(experiments, list), "config.experiments: expected a list")
    _expect(len(experiments) > 0, "no experiments defined")
    parsed = [_validate_experiment(e, i) for i, e in enumerate(experiments)]
    names = [p["name"] for p in parsed]
    _expect(len(set(names)) == len(names), "config.experiments: duplicate experiment names")
    return {
        "out_dir": doc.get("out_dir", "results"),
        "workers": doc.get("workers", 1),
        "seed": doc.get("seed", 0),
        "experiments": parsed,
        "raw": doc,
    }


# -- experiment execution -------------------------------------------------------

def _initial_field(exp, grid: Grid2D, seed: int) -> ScalarField:
    kind = exp["initial"]
    if kind == "zero":
        return ScalarField.zeros(grid)
    if kind == "sine":
        return ScalarField.from_function(
            grid, lambda x1, x2: np.sin(math.pi * x1 / grid.l1) * np.sin(math.pi * x2 / grid.l2))
    if kind == "random":
        rng = np.random.default_rng(seed)
        return ScalarField(grid, rng.standard_normal(grid.shape_interior))
    case = make_manufactured(exp["case"], grid.l1, grid.l2)
    return exact_scalar_field(case, grid, 0.0)


def _source_fn(exp, grid: Grid2D):
    if exp["source"] == "zero":
        return None
    case = make_manufactured(exp["case"], grid.l1, grid.l2)
    return case.source


def _records_rows(records):
    for r in records:
        yield (r.n, r.t, r.norm, r.rhs_norm, r.estimate_satisfied, r.solver_iterations)


def _run_evolve_once(exp, scheme_kwargs, out_dir: str, seed: int) -> bool:
    grid = exp["grid"]
    K = KOperator(exp["coeff"])
    cfg = SchemeConfig(**scheme_kwargs)
    result = run_evolution(_initial_field(exp, grid, seed), _source_fn(exp, grid), K, cfg)
    emit_csv(os.path.join(out_dir, "steps.csv"),
             ["n", "t", "norm", "rhs_norm", "estimate_satisfied", "solver_iters"],
             _records_rows(result.records))
    if exp["require_estimates"]:
        return all(r.estimate_satisfied is True for r in result.records[1:])
    return True


def _run_one(exp: dict, out_root: str, seed: int) -> tuple[str, bool, list[str]]:
    name = exp["name"]
    out_dir = os.path.join(out_root, name)
    os.makedirs(out_dir, exist_ok=True)
    exp_seed = (seed ^ zlib.crc32(name.encode())) & 0xFFFFFFFF
    start = time.perf_counter()
    outputs = []
    passed = True

    if exp["type"] == "evolve":
        passed = _run_evolve_once(exp, exp["scheme"], out_dir, exp_seed)
        outputs.append("steps.csv")

    elif exp["type"] == "sweep":
        for sigma in exp["sigmas"]:
            for tau in exp["taus"]:
                sub = os.path.join(out_dir, f"sigma{sigma:g}_tau{tau:g}")
                os.makedirs(sub, exist_ok=True)
                kwargs = dict(exp["scheme"], sigma=sigma, tau=tau, horizon=exp["horizon"])
                ok = _run_evolve_once(exp, kwargs, sub, exp_seed)
                passed = passed and ok
                outputs.append(os.path.join(f"sigma{sigma:g}_tau{tau:g}", "steps.csv"))

    elif exp["type"] == "stability":
        K = KOperator(exp["coeff"])
        rows = []
        all_stable = True
        for sigma in exp["sigmas"]:
            for tau in exp["taus"]:
                cert = stability_probe(exp["scheme"]["kind"], sigma, tau, K, tol=STABILITY_TOL)
                rows.append((cert.sigma, cert.tau,
                             cert.norm if cert.b_positive else math.nan, cert.b_positive))
                all_stable = all_stable and cert.stable
        emit_csv(os.path.join(out_dir, "stability.csv"),
                 ["sigma", "tau", "norm_T", "B_spd"], rows)
        outputs.append("stability.csv")
        if exp["expect_stable"]:
            passed = all_stable

    else:  # convergence
        case = make_manufactured(exp["case"])
        report = convergence_study(case, exp["scheme_kind"], exp["sigma"], exp["axis"],
                                   exp["levels"], chi=exp["chi"], horizon=exp["horizon"],
                                   n_fixed=exp["n_fixed"], tau0=exp["tau0"],
                                   tau_rule=exp["tau_rule"], reference=exp["reference"],
                                   target=exp["target"])
        slopes = report.running_slopes()
        rows = [(i, report.values[i], report.errors[i], slopes[i])
                for i in range(len(report.values))]
        emit_csv(os.path.join(out_dir, "convergence.csv"),
                 ["level", "h_or_tau", "error", "slope_running"], rows)
        outputs.append("convergence.csv")
        passed = report.passed

    manifest = {
        "name": name,
        "type": exp["type"],
        "config": {k: v for k, v in exp.items()
                   if k not in ("grid", "coeff", "where")},
        "grid": {"l1": exp["grid"].l1, "l2": exp["grid"].l2,
                 "n1": exp["grid"].n1, "n2": exp["grid"].n2} if "grid" in exp else None,
        "library_version": __version__,
        "wall_time_s": time.perf_counter() - start,
        "passed": passed,
        "outputs": outputs,
    }
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(manifest, f, indent=2, default=str)
        f.write("\n")
    return name, passed, outputs


def run_experiment(config_path: str, out_dir: str | None = None,
                   workers: int | None = None, seed: int | None = None) -> int:
    """Run every experiment in the config file; returns the process exit code."""
    try:
        with open(config_path) as f:
            doc = json.load(f)
    except OSError as exc:
        print(f"error: cannot read config {config_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON in {config_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cfg = _validate_config(doc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_root = out_dir or os.environ.get(ENV_OUT) or cfg["out_dir"]
    n_workers = workers or int(os.environ.get(ENV_WORKERS, 0) or 0) or int(cfg["workers"])
    n_workers = max(1, n_workers)
    run_seed = cfg["seed"] if seed is None else seed

    failures = []
    results = []
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        futures = {pool.submit(_run_one, exp, out_root, run_seed): exp["name"]
                   for exp in cfg["experiments"]}
        for fut, name in futures.items():
            try:
                results.append(fut.result())
            except Exception as exc:  # runtime failure inside one experiment
                print(f"error: experiment {name} failed: {exc}", file=sys.stderr)
                failures.append(name)

    for name, passed, outputs in sorted(results):
        status = "PASS" if passed else "FAIL"
        print(f"{status} {name}: {', '.join(outputs)}")
        if not passed:
            failures.append(name)
    if failures:
        print(f"{len(failures)} experiment(s) failed: {', '.join(sorted(set(failures)))}",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fluxschemes",
        description="Experiment runner for flux-variable parabolic difference schemes.")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run the experiments in a JSON config")
    runp.add_argument("config", help="path to the experiment config (JSON)")
    runp.add_argument("--out", default=None, help=f"output directory (env: {ENV_OUT})")
    runp.add_argument("--workers", type=int, default=None,
                      help=f"concurrent experiments (env: {ENV_WORKERS})")
    runp.add_argument("--seed", type=int, default=None, help="seed for randomized initial data")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run_experiment(args.config, out_dir=args.out, workers=args.workers,
                              seed=args.seed)
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
