"""Batch front end: ``cpma check|solve|ladder|mixed|lemma|energy --config FILE``.

Configs are YAML (JSON is accepted too). Every command writes
``<command>_report.json`` into ``--out`` plus optional CSV plot data.

Exit codes: 0 all checks PASS (and consistent), 1 all FAIL (consistent),
2 the three senses disagree, 3 INCONCLUSIVE, 4 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .field_core import ScalarField, read_field, sample_function
from .fixtures import SUITE, ball_grid, build_fixture, fail_density
from .hermitian_cone import det, exact_minimizer, inf_trace, sample_cone, trace_pair
from .oracle import brute_min_trace, manufactured_family
from .solver import (LadderConfig, SolverConfig, functional_F, run_ladder, solve_exponential,
                     write_ladder_csv, write_trace_csv)
from .subsolution import (FAIL, INCONCLUSIVE, PASS, Tolerance, check_equivalence, check_mixed,
                          default_check_sample)

log = logging.getLogger("cpma")

SCHEMA_VERSION = 1
EXIT_PASS, EXIT_FAIL, EXIT_INCONSISTENT, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- config handling

_COMMON = {"seed": 0}

SCHEMAS: dict[str, dict] = {
    "check": {"fixture": None, "field_file": None, "density_file": None, "n": None,
              "resolution": 21, "radius": 1.0, "f": "fixture", "eps_h": [4.0, 3.0, 2.0],
              "eps": None, "family_scales_h": [2.0, 4.0],
              "sample": {"count": 64, "kappa_max": 100.0},
              "tolerance": {"c1": Tolerance.c1, "c2": Tolerance.c2}},
    "solve": {"fixture": "exp-quadratic(1,1)", "n": 1, "resolutions": [17, 33],
              "boundary": "exact", "solver": {}, "uniqueness": True, "order_floor": 0.8,
              "error_factor": 0.25},
    "ladder": {"fixture": "quadratic-ball", "n": None, "resolution": 21, "radius": 1.0,
               "js": [5, 10, 20], "deltas": [0.1, 0.5], "tau_factor": 5.0, "solver": {},
               "ratio_limit": 0.65},
    "mixed": {"resolution": 17, "radius": 1.0, "eps_h": [3.0, 2.0], "random_pairs": 0,
              "potentials": None, "densities": None,
              "tolerance": {"c1": Tolerance.c1, "c2": Tolerance.c2}},
    "lemma": {"n": 2, "count": 50, "brute_density": 0, "limit": 1e-10, "brute_limit": 1e-3},
    "energy": {"fixture": "exp-quadratic(1,1)", "n": 1, "resolution": 33, "probes": 10,
               "el_limit": 1e-6, "critical_factor": 10.0, "solver": {}},
}

_SOLVER_KEYS = {"method", "root_tol", "residual_tol", "max_sweeps", "max_newton", "damping",
                "direct_limit"}


def load_config(command: str, path: str | None) -> dict:
    """Read, validate and fill defaults; unknown keys are errors."""
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise UsageError(f"config is not valid YAML/JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config must be a mapping")
    schema = {**_COMMON, **SCHEMAS[command]}
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise UsageError(f"unknown config keys for {command!r}: {unknown}")
    cfg = {}
    for key, default in schema.items():
        val = raw.get(key, default)
        if isinstance(default, dict):
            val = val or {}
            if not isinstance(val, dict):
                raise UsageError(f"{key!r} must be a mapping")
            allowed = _SOLVER_KEYS if key == "solver" else set(default)
            bad = sorted(set(val) - allowed)
            if bad:
                raise UsageError(f"unknown keys in {key!r}: {bad}")
            val = {**default, **val}
        cfg[key] = val
    _validate(command, cfg)
    return cfg


def _validate(command: str, cfg: dict) -> None:
    def positive_int(key, lo=1):
        v = cfg[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < lo:
            raise UsageError(f"{key!r} must be an integer >= {lo}")

    def number_list(key):
        v = cfg[key]
        if v is None:
            return
        if not isinstance(v, list) or not v or not all(isinstance(x, (int, float)) for x in v):
            raise UsageError(f"{key!r} must be a non-empty list of numbers")

    if not isinstance(cfg["seed"], int):
        raise UsageError("'seed' must be an integer")
    if command == "check":
        if (cfg["fixture"] is None) == (cfg["field_file"] is None):
            raise UsageError("give exactly one of 'fixture' or 'field_file'")
        positive_int("resolution", 5)
        for key in ("eps_h", "eps", "family_scales_h"):
            number_list(key)
        f = cfg["f"]
        if not (isinstance(f, (int, float)) and not isinstance(f, bool) or f in ("fixture", "inflated")):
            raise UsageError("'f' must be a number, 'fixture' or 'inflated'")
    elif command == "solve":
        number_list("resolutions")
        if cfg["boundary"] not in ("exact", "zero"):
            raise UsageError("'boundary' must be 'exact' or 'zero'")
    elif command == "ladder":
        positive_int("resolution", 5)
        number_list("js")
        number_list("deltas")
    elif command == "mixed":
        positive_int("resolution", 5)
        number_list("eps_h")
        if not isinstance(cfg["random_pairs"], int) or cfg["random_pairs"] < 0:
            raise UsageError("'random_pairs' must be a nonnegative integer")
        if cfg["potentials"] is None and cfg["random_pairs"] == 0:
            raise UsageError("give 'potentials' or 'random_pairs'")
    elif command == "lemma":
        positive_int("n")
        positive_int("count")
        if not isinstance(cfg["brute_density"], int) or cfg["brute_density"] < 0:
            raise UsageError("'brute_density' must be a nonnegative integer")
    elif command == "energy":
        positive_int("resolution", 5)
        positive_int("probes")


def _solver_config(opts: dict) -> SolverConfig:
    try:
        return SolverConfig(**opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad solver options: {exc}") from None


def artifact_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _json_safe(obj):
    from .subsolution import _clean

    return _clean(obj)


# ---------------------------------------------------------------- commands


def _check_inputs(cfg: dict):
    if cfg["fixture"] is not None:
        phi, f = build_fixture(cfg["fixture"], cfg["resolution"], cfg["radius"], cfg["n"])
    else:
        phi = read_field(cfg["field_file"])
        if cfg["density_file"] is not None:
            f = read_field(cfg["density_file"])
            if f.grid != phi.grid:
                raise UsageError("density file lives on a different grid")
        elif cfg["f"] in ("fixture", "inflated"):
            raise UsageError("a field file needs 'density_file' or a numeric 'f'")
        else:
            f = None
    spec = cfg["f"]
    if isinstance(spec, (int, float)):
        f = phi.with_values(np.full(phi.grid.shape, float(spec)))
    elif spec == "inflated":
        f = fail_density(f)
    return phi, f


def cmd_check(cfg: dict, threads: int) -> tuple[dict, int, dict]:
    phi, f = _check_inputs(cfg)
    h = phi.grid.spacing
    eps = cfg["eps"] if cfg["eps"] is not None else [e * h for e in cfg["eps_h"]]
    sample = default_check_sample(phi.grid.n, cfg["sample"]["count"], cfg["sample"]["kappa_max"],
                                  cfg["seed"])
    report = check_equivalence(phi, f, {"eps": eps, "sample": sample,
                                        "family_scales": [s * h for s in cfg["family_scales_h"]],
                                        "tolerance": Tolerance(**cfg["tolerance"]),
                                        "threads": threads})
    overall = report.overall
    if overall == INCONCLUSIVE:
        code = EXIT_INCONCLUSIVE
    elif overall == "INCONSISTENT":
        code = EXIT_INCONSISTENT
    else:
        code = EXIT_PASS if report.agreed == PASS else EXIT_FAIL
    out = {"results": report.to_dict(), "margins": report.margins(),
           "verdicts": {**report.verdicts, "overall": overall}}
    csv_rows = {"check_margins.csv": _per_eps_rows(report)}
    return out, code, csv_rows


def _per_eps_rows(report) -> list[dict]:
    rows = []
    for sense, rec in report.records.items():
        for item in rec.details.get("per_eps", []):
            rows.append({"sense": sense, "eps": item["eps"], "min_margin": item["min_margin"]})
        for item in rec.details.get("weak", []):
            rows.append({"sense": sense, "eps": item["eps"], "min_margin": item["min_weak_margin"]})
        for item in rec.details.get("per_scale", []):
            rows.append({"sense": sense, "eps": item["scale"], "min_margin": item["min_margin"]})
    return rows


def _verdict_code(verdicts: dict) -> int:
    vs = set(verdicts.values())
    if FAIL in vs:
        return EXIT_FAIL
    if INCONCLUSIVE in vs:
        return EXIT_INCONCLUSIVE
    return EXIT_PASS


def cmd_solve(cfg: dict, threads: int) -> tuple[dict, int, dict]:
    man = manufactured_family(cfg["fixture"], cfg["n"])
    if man.kind != "exp":
        raise UsageError("solve needs an exponential manufactured family, e.g. exp-quadratic(1,1)")
    scfg = _solver_config(cfg["solver"])
    runs, traces = [], {}
    for m in cfg["resolutions"]:
        grid, mask = ball_grid(man.n, int(m), man.radius)
        exact = sample_function(grid, mask, man.solution)
        mu = sample_function(grid, mask, man.rhs, density=True)
        if cfg["boundary"] == "exact":
            bd = exact
        else:
            bd = exact.with_values(np.zeros(grid.shape))
        t0 = time.perf_counter()
        res = solve_exponential(mu, bd, scfg)
        elapsed = time.perf_counter() - t0
        inner = mask.interior
        err = float(np.max(np.abs(res.field.values[inner] - exact.values[inner])))
        run = {"resolution": int(m), "h": grid.spacing, "max_error": err, "error_over_h": err / grid.spacing,
               "converged": res.converged, "iterations": res.iterations, "residual": res.residual,
               "seconds": elapsed}
        if cfg["uniqueness"]:
            alt = solve_exponential(mu, bd, scfg, init=exact.with_values(np.full(grid.shape, -1.0)))
            run["uniqueness_gap"] = float(np.max(np.abs(alt.field.values[inner] - res.field.values[inner])))
        runs.append(run)
        traces[f"solve_trace_m{m}.csv"] = res
    verdicts = {"accuracy": PASS if all(r["max_error"] <= cfg["error_factor"] * r["h"] and r["converged"]
                                        for r in runs) else FAIL}
    ratios = []
    for a, b in zip(runs, runs[1:]):
        ratio = a["max_error"] / b["max_error"] if b["max_error"] > 0 else math.inf
        ratios.append({"coarse": a["resolution"], "fine": b["resolution"], "ratio": ratio})
    if ratios:
        floor = 2 ** cfg["order_floor"]
        verdicts["order"] = PASS if all(r["ratio"] >= floor for r in ratios) else FAIL
    if cfg["uniqueness"]:
        verdicts["uniqueness"] = PASS if all(r["uniqueness_gap"] <= 1e-6 for r in runs) else FAIL
    out = {"results": {"fixture": man.name, "n": man.n, "boundary": cfg["boundary"], "runs": runs,
                       "ratios": ratios, "solver": scfg.descriptor()},
           "margins": [{"resolution": r["resolution"], "error_margin": cfg["error_factor"] * r["h"] - r["max_error"]}
                       for r in runs],
           "verdicts": verdicts}
    return out, _verdict_code(verdicts), {"solve_errors.csv": runs, **traces}


def cmd_ladder(cfg: dict, threads: int) -> tuple[dict, int, dict]:
    phi, f = build_fixture(cfg["fixture"], cfg["resolution"], cfg["radius"], cfg["n"])
    ladder = LadderConfig(tuple(cfg["js"]), tuple(cfg["deltas"]), cfg["tau_factor"])
    res = run_ladder(phi, f, ladder, _solver_config(cfg["solver"]))
    rows = [r.row() for r in res.rungs]
    ratios = res.deviation_ratios()
    verdicts = {"sandwich": PASS if res.all_inside() else FAIL,
                "converged": PASS if all(r.solve.converged for r in res.rungs) else FAIL}
    if ratios:
        verdicts["deviation_decay"] = PASS if all(r["ratio"] <= cfg["ratio_limit"] for r in ratios) else FAIL
    out = {"results": {"grid": phi.grid.describe(), "tau": res.tau, "rungs": rows, "ratios": ratios},
           "margins": [{"j": r["j"], "delta": r["delta"], "min": r["observed_min_margin"],
                        "max": r["observed_max_margin"]} for r in rows],
           "verdicts": verdicts}
    return out, _verdict_code(verdicts), {"ladder.csv": res}


def quadratic_potential(A):
    """``z* A z`` as a coordinate function (A Hermitian, ``n x n``)."""
    A = np.asarray(A, dtype=complex)
    n = A.shape[0]

    def fn(c):
        zs = [c[2 * j] + 1j * c[2 * j + 1] for j in range(n)]
        total = 0.0
        for j in range(n):
            for k in range(n):
                total = total + (np.conj(zs[j]) * A[j, k] * zs[k]).real
        return total

    return fn


def _parse_matrix(raw, n) -> np.ndarray:
    a = np.array([[complex(*v) if isinstance(v, list) else complex(v) for v in row] for row in raw])
    if a.shape != (n, n) or not np.allclose(a, a.conj().T):
        raise UsageError("potential matrices must be Hermitian n x n")
    return a


def random_psd(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    """Positive definite Hermitian matrices ``B B* + 0.1 I``."""
    b = rng.standard_normal((count, n, n)) + 1j * rng.standard_normal((count, n, n))
    return b @ np.conj(np.swapaxes(b, -1, -2)) + 0.1 * np.eye(n)


def cmd_mixed(cfg: dict, threads: int) -> tuple[dict, int, dict]:
    n = 2
    grid, mask = ball_grid(n, cfg["resolution"], cfg["radius"])
    eps = [e * grid.spacing for e in cfg["eps_h"]]
    tol = Tolerance(**cfg["tolerance"])
    cases = []
    if cfg["potentials"] is not None:
        mats = [_parse_matrix(p, n) for p in cfg["potentials"]]
        if len(mats) != n:
            raise UsageError(f"'potentials' needs exactly {n} matrices")
        dens = cfg["densities"] or [float(det(m).real) for m in mats]
        cases.append(("configured", mats, dens))
    rng = np.random.default_rng(cfg["seed"])
    for i in range(cfg["random_pairs"]):
        mats = list(random_psd(rng, n, n))
        cases.append((f"random[{i}]", mats, [float(det(m).real) for m in mats]))
    rows, verdicts = [], {}
    for name, mats, dens in cases:
        phis = [sample_function(grid, mask, quadratic_potential(m)) for m in mats]
        rec = check_mixed(phis, dens, eps, tolerance=tol)
        rows.append({"case": name, "verdict": rec.verdict, "worst_margin": rec.worst,
                     "tolerance": rec.tolerance})
        verdicts[name] = rec.verdict
    summary = {"cases": len(rows), "passed": sum(r["verdict"] == PASS for r in rows),
               "min_margin": min(r["worst_margin"] for r in rows)}
    out = {"results": {"grid": grid.describe(), "eps": eps, "summary": summary, "cases": rows},
           "margins": [{"case": r["case"], "margin": r["worst_margin"]} for r in rows],
           "verdicts": verdicts}
    return out, _verdict_code(verdicts), {"mixed_margins.csv": rows}


def cmd_lemma(cfg: dict, threads: int) -> tuple[dict, int, dict]:
    n = cfg["n"]
    rng = np.random.default_rng(cfg["seed"])
    qs = random_psd(rng, n, cfg["count"])
    base = sample_cone(n, 16, seed=cfg["seed"])
    rows = []
    for i, q in enumerate(qs):
        target = float(np.prod(np.linalg.eigvalsh(q))) ** (1.0 / n)
        hstar = exact_minimizer(q)
        direct = float(trace_pair(hstar, q).real) / n
        aug = inf_trace(q, base.augmented(hstar)).value
        row = {"index": i, "root_det": target, "trace_at_minimizer": direct,
               "identity_error": abs(direct - target), "augmented_error": abs(aug - target),
               "det_error": abs(float(np.linalg.det(hstar).real) - 1.0)}
        if cfg["brute_density"]:
            b = brute_min_trace(q, cfg["brute_density"], seed=cfg["seed"])
            row["brute"] = b
            row["brute_gap"] = b - target
        rows.append(row)
    worst = {k: max(r[k] for r in rows) for k in ("identity_error", "augmented_error", "det_error")}
    verdicts = {"identity": PASS if worst["identity_error"] <= cfg["limit"] else FAIL,
                "augmented": PASS if worst["augmented_error"] <= cfg["limit"] else FAIL,
                "unit_det": PASS if worst["det_error"] <= cfg["limit"] else FAIL}
    if cfg["brute_density"]:
        gaps = [r["brute_gap"] for r in rows]
        worst["brute_gap_max"] = max(gaps)
        worst["brute_gap_min"] = min(gaps)
        verdicts["brute"] = PASS if max(gaps) <= cfg["brute_limit"] and min(gaps) >= -1e-12 else FAIL
    out = {"results": {"n": n, "count": cfg["count"], "worst": worst,
                       "max_abs_inf_trace_augmented_minus_root_det": worst["augmented_error"]},
           "margins": rows, "verdicts": verdicts}
    return out, _verdict_code(verdicts), {"lemma.csv": rows}


def cmd_energy(cfg: dict, threads: int) -> tuple[dict, int, dict]:
    man = manufactured_family(cfg["fixture"], cfg["n"])
    if man.kind != "exp":
        raise UsageError("energy needs an exponential manufactured family")
    grid, mask = ball_grid(man.n, cfg["resolution"], man.radius)
    exact = sample_function(grid, mask, man.solution)
    mu = sample_function(grid, mask, man.rhs, density=True)
    scfg = _solver_config(cfg["solver"])
    sol = solve_exponential(mu, exact, scfg)
    probes = energy_probes(mask, cfg["probes"], cfg["seed"])
    smooth = functional_F(exact, mu, probes)
    at_sol = functional_F(sol.field, mu, probes)
    global_tol = scfg.residual_tol * max(1.0, float(np.max(np.abs(exact.values[mask.boundary]))))
    crit_limit = cfg["critical_factor"] * global_tol
    verdicts = {"euler_lagrange": PASS if max(smooth.relative_residuals) <= cfg["el_limit"] else FAIL,
                "critical_point": PASS if sol.converged and max(abs(c) for c in at_sol.critical_residuals)
                <= crit_limit else FAIL}
    out = {"results": {"fixture": man.name, "grid": grid.describe(), "smooth": smooth.as_dict(),
                       "solution": at_sol.as_dict(), "solver": sol.summary(), "critical_limit": crit_limit},
           "margins": [{"probe": i, "el_relative": r, "critical": c}
                       for i, (r, c) in enumerate(zip(smooth.relative_residuals, at_sol.critical_residuals))],
           "verdicts": verdicts}
    return out, _verdict_code(verdicts), {}


def energy_probes(mask, count: int, seed: int) -> list[np.ndarray]:
    """Smooth random directions vanishing near the boundary shell."""
    from .field_core import erode
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    support = erode(mask.interior, 2 * mask.width)
    out = []
    for _ in range(count):
        v = ndimage.gaussian_filter(rng.standard_normal(mask.grid.shape), 1.0)
        out.append(np.where(support, v, 0.0))
    return out


COMMANDS = {"check": cmd_check, "solve": cmd_solve, "ladder": cmd_ladder, "mixed": cmd_mixed,
            "lemma": cmd_lemma, "energy": cmd_energy}


# ---------------------------------------------------------------- plumbing


def _write_csv(path: Path, payload) -> None:
    from .solver import LadderResult, SolveResult

    if isinstance(payload, LadderResult):
        write_ladder_csv(payload, path)
        return
    if isinstance(payload, SolveResult):
        write_trace_csv(payload, path)
        return
    rows = list(payload)
    if not rows:
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        wr.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpma", description="Discrete complex Monge-Ampere verification tools.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML or JSON scenario file")
    p.add_argument("--threads", type=int, default=None, help="parallel evaluation width (default: all cores)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.command, args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        threads = args.threads or os.cpu_count() or 1
        if threads < 1:
            raise UsageError("--threads must be >= 1")
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        body, code, csvs = COMMANDS[args.command](cfg, threads)
    except UsageError as exc:
        return _usage_error("usage", str(exc))
    except (ValueError, OSError, NotImplementedError) as exc:
        return _usage_error(type(exc).__name__, str(exc))
    report = {"schema_version": SCHEMA_VERSION, "command": args.command, "config_echo": cfg,
              **body, "exit_code": code,
              "meta": {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                       "version": artifact_version()}}
    path = out_dir / f"{args.command}_report.json"
    path.write_text(json.dumps(_json_safe(report), indent=2, sort_keys=True) + "\n")
    for name, payload in csvs.items():
        _write_csv(out_dir / name, payload)
    print(json.dumps({"command": args.command, "verdicts": _json_safe(body["verdicts"]),
                      "exit_code": code, "report": str(path)}, sort_keys=True))
    return code


def _usage_error(kind: str, message: str) -> int:
    print(json.dumps({"error": {"type": kind, "message": message}, "exit_code": EXIT_USAGE}))
    return EXIT_USAGE


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
