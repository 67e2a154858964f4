"""Command-line entry point.

Every run writes ``summary.json`` (sorted keys, no timestamps) and, for
solver-backed commands, ``fields/<name>.tgrd`` plus ``fields/<name>.csv``
under ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    HypothesisViolation,
    Verdict,
    _clean,
    curvature_experiment,
    folding_consistency_experiment,
    limit_experiment,
    monotonicity_experiment,
    ordering_experiment,
)
from .folding import AffineSystem, extended_affine, fold, sigma0
from .grid import TorusGrid, write_csv, write_tgrd
from .maxprin import (
    HypothesisError,
    MatrixField,
    build_subset_graph,
    check_cdd,
    check_cooperative,
    check_fully_coupled,
)
from .rootsys import (
    build_root_system,
    coxeter_number,
    extended_simple_sums_check,
    height_grading_check,
    to_json,
)
from .toda import (
    MODES,
    ContinuationFailure,
    IncompatibleData,
    NewtonFailure,
    assemble,
    derived_fields,
    newton_solve,
)

log = logging.getLogger("todalab")

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_USAGE = 2
EXIT_SCHEMA = 3
EXIT_SOLVER = 4
EXIT_HYPOTHESIS = 5

EXIT_HELP = """exit codes:
  0  success, every requested verdict passed
  1  a verdict or invariant check failed
  2  command-line usage error
  3  configuration error (unreadable file, unknown key, wrong type)
  4  solver failure (no convergence or incompatible data)
  5  input data violate the hypotheses of the experiment
"""


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config schema

_NUM = (int, float)
_EXPERIMENT_KEYS = {
    "solve": {"t", "mode", "kappa", "c", "amplitudes"},
    "monotonicity": {"t", "mode", "tau", "amplitudes"},
    "order": {"t", "tau"},
    "curvature": {"t", "mode", "tau"},
    "fold": {"t"},
    "limit": {"eps", "tau", "cauchy_tol"},
}
_TOP_KEYS = {"command", "description", "coupling", "grid", "divisors", "solver", "experiment", "seed", "out"}
_REQUIRED = {"coupling", "divisors"}


def _expect(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _check_keys(d, allowed, where):
    _expect(isinstance(d, dict), f"{where}: expected an object")
    extra = sorted(set(d) - set(allowed))
    _expect(not extra, f"{where}: unknown key(s) {', '.join(extra)}")


def _is_num(x):
    return isinstance(x, _NUM) and not isinstance(x, bool)


def validate_config(cfg: dict, command: str) -> dict:
    """Check ``cfg`` against the schema of ``command`` and fill defaults.

    Raises
    ------
    ConfigError
        On unknown keys, missing keys or wrongly typed values.
    """
    _check_keys(cfg, _TOP_KEYS, "config")
    missing = sorted(_REQUIRED - set(cfg))
    _expect(not missing, f"config: missing key(s) {', '.join(missing)}")
    if "command" in cfg:
        _expect(cfg["command"] == command, f"config is for {cfg['command']!r}, not {command!r}")

    cp = cfg["coupling"]
    _check_keys(cp, {"type", "rank", "affine", "fold"}, "coupling")
    _expect(isinstance(cp.get("type"), str), "coupling.type: expected a string")
    _expect(isinstance(cp.get("rank"), int) and not isinstance(cp.get("rank"), bool), "coupling.rank: expected an integer")
    for k in ("affine", "fold"):
        _expect(isinstance(cp.get(k, False), bool), f"coupling.{k}: expected a boolean")

    g = cfg.get("grid", {})
    _check_keys(g, {"L", "N"}, "grid")
    _expect(_is_num(g.get("L", 1.0)), "grid.L: expected a number")
    _expect(isinstance(g.get("N", 64), int), "grid.N: expected an integer")

    divs = cfg["divisors"]
    _expect(isinstance(divs, list), "divisors: expected a list with one entry per node")
    for a, d in enumerate(divs):
        _expect(isinstance(d, list), f"divisors[{a}]: expected a list of [i, j, m]")
        for p in d:
            _expect(
                isinstance(p, list) and len(p) == 3 and all(isinstance(x, int) and not isinstance(x, bool) for x in p),
                f"divisors[{a}]: entries must be [i, j, m] integer triples",
            )

    s = cfg.get("solver", {})
    _check_keys(s, {"tol", "max_iter", "max_halvings"}, "solver")
    _expect(_is_num(s.get("tol", 1.0)), "solver.tol: expected a number")
    for k in ("max_iter", "max_halvings"):
        _expect(isinstance(s.get(k, 1), int), f"solver.{k}: expected an integer")

    e = cfg.get("experiment", {})
    _check_keys(e, _EXPERIMENT_KEYS[command], "experiment")
    if command in ("monotonicity",):
        _expect(isinstance(e.get("t"), list) and len(e["t"]) >= 2 and all(_is_num(x) and x > 0 for x in e["t"]),
                "experiment.t: expected a list of at least two positive numbers")
    elif "t" in e:
        _expect(_is_num(e["t"]) and e["t"] > 0, "experiment.t: expected a positive number")
    if command == "limit":
        _expect(isinstance(e.get("eps"), list) and len(e["eps"]) >= 2 and all(_is_num(x) and x > 0 for x in e["eps"]),
                "experiment.eps: expected a list of at least two positive numbers")
    if "mode" in e:
        _expect(e["mode"] in MODES, f"experiment.mode: expected one of {', '.join(MODES)}")
    for k in ("tau", "c", "cauchy_tol"):
        if k in e:
            _expect(_is_num(e[k]) and e[k] > 0, f"experiment.{k}: expected a positive number")
    if "kappa" in e:
        _expect(_is_num(e["kappa"]), "experiment.kappa: expected a number")
    if "amplitudes" in e:
        _expect(isinstance(e["amplitudes"], list) and all(_is_num(x) and x > 0 for x in e["amplitudes"]),
                "experiment.amplitudes: expected a list of positive numbers")
    _expect(isinstance(cfg.get("seed", 0), int), "seed: expected an integer")
    return cfg


def load_config(path: str) -> dict:
    """Read a JSON config; ``defaults/<name>.json`` falls back to the shipped copy."""
    p = Path(path)
    if not p.exists() and p.parts[:1] == ("defaults",):
        res = resources.files("todalab").joinpath("defaults", *p.parts[1:])
        if res.is_file():
            text = res.read_text()
        else:
            raise ConfigError(f"{path}: no such shipped default")
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return cfg


# ---------------------------------------------------------------- builders

def _grid(cfg):
    g = cfg.get("grid", {})
    try:
        return TorusGrid(float(g.get("L", 2 * np.pi)), int(g.get("N", 64)))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def _root_system(cp):
    try:
        return build_root_system(cp["type"], cp["rank"])
    except ValueError as exc:
        raise ConfigError(f"coupling: {exc}") from exc


def _coupling(cp):
    rs = _root_system(cp)
    if cp.get("fold"):
        try:
            return fold(extended_affine(rs), sigma0(cp["type"], cp["rank"]))
        except ValueError as exc:
            raise ConfigError(f"coupling: {exc}") from exc
    if cp.get("affine"):
        return extended_affine(rs)
    return rs


def _solver(cfg):
    s = cfg.get("solver", {})
    return float(s.get("tol", 1e-10)), int(s.get("max_iter", 30))


def affine_json(aff: AffineSystem) -> dict:
    return _clean({
        "name": aff.name,
        "size": aff.size,
        "shape": aff.shape,
        "labels": list(aff.node_labels),
        "matrix": [[int(x) for x in row] for row in aff.A],
        "right_kernel": list(aff.right_kernel),
        "left_kernel": list(aff.left_kernel),
        "orbits": [list(o) for o in aff.orbits],
        "halved": list(aff.halved),
    })


# ---------------------------------------------------------------- output

def _dump(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_outputs(out, summary: dict, grid: TorusGrid | None = None, fields: dict | None = None) -> list:
    """Write ``summary.json`` and field dumps; returns the relative artifact paths."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    if fields and grid is not None:
        (out / "fields").mkdir(exist_ok=True)
        for name in sorted(fields):
            arr = np.asarray(fields[name], dtype=float)
            arr = arr[None] if arr.ndim == 2 else arr
            write_tgrd(out / "fields" / f"{name}.tgrd", arr)
            cols = [name] if len(arr) == 1 else [f"{name}_{k}" for k in range(len(arr))]
            write_csv(out / "fields" / f"{name}.csv", grid, arr, cols)
            artifacts += [f"fields/{name}.tgrd", f"fields/{name}.csv"]
    summary = dict(summary, artifacts=artifacts)
    (out / "summary.json").write_text(_dump(summary))
    return artifacts


# ---------------------------------------------------------------- commands

def cmd_root(args) -> int:
    try:
        rs = build_root_system(args.type, args.rank)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if args.action == "info":
        print(_dump(to_json(rs)), end="")
        return EXIT_OK
    gram = np.array([[float(x) for x in row] for row in rs.gram_ext])
    checks = {
        "coxeter_is_mark_sum": coxeter_number(rs) == sum(rs.ext_marks),
        "coxeter_is_height_plus_one": rs.coxeter == 1 + sum(rs.delta),
        "marks_in_gram_kernel": all(
            sum(row[j] * rs.ext_marks[j] for j in range(rs.rank + 1)) == 0 for row in rs.gram_ext
        ),
        "height_grading": height_grading_check(rs),
        "extended_simple_sums": extended_simple_sums_check(rs),
        "gram_psd_corank_one": bool(np.linalg.matrix_rank(gram) == rs.rank and np.linalg.eigvalsh(gram).min() > -1e-12),
    }
    print(_dump({"root_system": rs.name, "coxeter": rs.coxeter, "checks": checks}), end="")
    return EXIT_OK if all(checks.values()) else EXIT_VERDICT


def cmd_fold(args) -> int:
    try:
        rs = build_root_system(args.type, args.rank)
        ext = extended_affine(rs)
        inv = sigma0(args.type, args.rank)
        folded = fold(ext, inv)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    print(_dump({
        "involution": list(inv.perm),
        "unfolded": affine_json(ext),
        "folded": affine_json(folded),
        "node_orbits": {lab: [ext.node_labels[i] for i in orb] for lab, orb in zip(folded.node_labels, folded.orbits)},
    }), end="")
    return EXIT_OK


def _read_matrix_field(path) -> MatrixField:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if isinstance(data, list):
        data = {"matrix": data}
    _check_keys(data, {"matrix", "samples", "points", "grid"}, "matrix file")
    try:
        if "matrix" in data:
            return MatrixField.constant(data["matrix"])
        if "grid" in data:
            return MatrixField.from_grid(data["grid"])
        pts = data.get("points")
        return MatrixField(np.asarray(data["samples"], dtype=float), tuple(map(tuple, pts)) if pts else None)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed matrix field ({exc})") from exc


def cmd_mp(args) -> int:
    try:
        C = _read_matrix_field(args.matrix)
        nu = None
        if args.nu is not None:
            nu = np.array([float(x) for x in args.nu.split(",")])
            _expect(nu.shape == (C.n,), f"--nu needs {C.n} entries")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    checks = {
        "cooperative": check_cooperative(C, args.tol).to_json(),
        "cdd": check_cdd(C, args.tol).to_json(),
        "fully_coupled": check_fully_coupled(C).to_json(),
    }
    out = {"n": C.n, "samples": C.size, "checks": checks}
    ok = all(c["ok"] for c in checks.values())
    if nu is not None and args.K is not None:
        try:
            setup = build_subset_graph(C, nu, args.K)
            out["subset_graph"] = {"vertices": len(setup.S), "report": setup.report}
        except HypothesisError as exc:
            out["subset_graph"] = {"error": str(exc), "report": exc.report}
            ok = False
    out["ok"] = ok
    print(_dump(out), end="")
    return EXIT_OK if ok else EXIT_VERDICT


def run_solve(cfg, out) -> int:
    grid = _grid(cfg)
    coupling = _coupling(cfg["coupling"])
    tol, max_iter = _solver(cfg)
    e = cfg.get("experiment", {})
    problem = assemble(
        coupling, cfg["divisors"], kappa=e.get("kappa"), t=float(e.get("t", 1.0)), mode=e.get("mode", "raw"),
        grid=grid, amplitudes=e.get("amplitudes"), c=e.get("c"), tol=tol,
    )
    sol = newton_solve(problem, tol=tol, max_iter=max_iter,
                       max_halvings=int(cfg.get("solver", {}).get("max_halvings", 20)))
    d = derived_fields(sol)
    summary = {
        "command": "solve",
        "coupling": getattr(coupling, "name", str(coupling)),
        "mode": problem.mode,
        "labels": list(problem.labels),
        "t": sol.t,
        "kappa": problem.kappa,
        "iterations": sol.iterations,
        "residual": sol.residual_norm,
        "residual_by_node": list(sol.residual_by_node),
        "history": list(sol.history),
        "Q_min": float(d["Q"].min()),
        "passed": bool(sol.residual_norm <= tol),
    }
    write_outputs(out, summary, grid, {"u": sol.u, "w": sol.w, "energy": d["energy"], "Q": d["Q"]})
    return EXIT_OK if summary["passed"] else EXIT_VERDICT


def run_experiment(kind, cfg) -> Verdict:
    grid = _grid(cfg)
    tol, max_iter = _solver(cfg)
    e = cfg.get("experiment", {})
    cp = cfg["coupling"]
    divs = cfg["divisors"]
    tau = float(e.get("tau", 1e-6))
    if kind == "monotonicity":
        return monotonicity_experiment(_coupling(cp), divs, e["t"], grid=grid, mode=e.get("mode", "raw"), tau=tau,
                                       tol=tol, max_iter=max_iter, amplitudes=e.get("amplitudes"))
    if kind == "order":
        aff = _coupling(cp)
        if not isinstance(aff, AffineSystem):
            raise ConfigError("order needs coupling.affine or coupling.fold")
        return ordering_experiment(aff, divs, t=float(e.get("t", 1.0)), grid=grid, tau=tau, tol=tol,
                                   max_iter=max_iter)
    if kind == "curvature":
        return curvature_experiment(_coupling(cp), divs, t=float(e.get("t", 1.0)), grid=grid, mode=e.get("mode"),
                                    tau=tau, tol=tol, max_iter=max_iter)
    if kind == "fold":
        return folding_consistency_experiment(cp["type"], cp["rank"], divs, t=float(e.get("t", 1.0)), grid=grid,
                                              tol=tol, max_iter=max_iter)
    if kind == "limit":
        return limit_experiment(_root_system(cp), divs, e["eps"], grid=grid, tau=tau, tol=tol, max_iter=max_iter,
                                cauchy_tol=float(e.get("cauchy_tol", 1e-4)))
    raise ConfigError(f"unknown experiment {kind!r}")


def _job(kind, path, out) -> tuple[int, str]:
    """Run one configured command; returns ``(exit code, message)``."""
    try:
        cfg = validate_config(load_config(path), kind)
        np.random.seed(int(cfg.get("seed", 0)))
        if kind == "solve":
            return run_solve(cfg, out), ""
        verdict = run_experiment(kind, cfg)
    except ConfigError as exc:
        return EXIT_SCHEMA, f"config error: {exc}"
    except (HypothesisViolation, HypothesisError) as exc:
        return EXIT_HYPOTHESIS, f"hypothesis violated: {exc}"
    except (NewtonFailure, ContinuationFailure, IncompatibleData) as exc:
        return EXIT_SOLVER, f"solver failure: {exc}"
    except ValueError as exc:
        return EXIT_SCHEMA, f"config error: {exc}"
    summary = dict(verdict.to_json(), command=kind, config=cfg)
    write_outputs(out, summary, _grid(cfg), verdict.fields)
    status = "PASS" if verdict.passed else "FAIL"
    return (EXIT_OK if verdict.passed else EXIT_VERDICT), f"{status} {verdict.name} margin={verdict.margin:.3e}"


def _run_jobs(kind, configs, out, jobs) -> int:
    outs = [Path(out)] if len(configs) == 1 else [Path(out) / Path(c).stem for c in configs]
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, [kind] * len(configs), configs, outs))
    else:
        results = [_job(kind, c, o) for c, o in zip(configs, outs)]
    code = EXIT_OK
    for (rc, msg), c in zip(results, configs):
        if msg:
            print(f"{c}: {msg}", file=sys.stderr if rc not in (EXIT_OK, EXIT_VERDICT) else sys.stdout)
        if rc != EXIT_OK and (code == EXIT_OK or code == EXIT_VERDICT):
            code = rc
    return code


def cmd_solve(args) -> int:
    return _run_jobs("solve", args.config, args.out, args.jobs)


def cmd_exp(args) -> int:
    return _run_jobs(args.kind, args.config, args.out, args.jobs)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="todalab",
        description="Root systems, affine foldings, Toda-type solvers and maximum-principle checks.",
        epilog=EXIT_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("root", help="root system data and invariant checks", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("action", choices=["info", "check"])
    r.add_argument("type")
    r.add_argument("rank", type=int)
    r.set_defaults(func=cmd_root)

    f = sub.add_parser("fold", help="extended diagram and its fold as JSON", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    f.add_argument("type")
    f.add_argument("rank", type=int)
    f.set_defaults(func=cmd_fold)

    m = sub.add_parser("mp", help="maximum-principle hypothesis checks", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    m.add_argument("action", choices=["check"])
    m.add_argument("--matrix", required=True, help="JSON file: a matrix, or {samples|grid|matrix: ...}")
    m.add_argument("--nu", help="comma-separated positive weights")
    m.add_argument("--K", type=float, help="weight multiplier for the subset graph")
    m.add_argument("--tol", type=float, default=0.0)
    m.set_defaults(func=cmd_mp)

    for name, func, help_ in (("solve", cmd_solve, "solve one configured system"),):
        s = sub.add_parser(name, help=help_, epilog=EXIT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        s.add_argument("--config", required=True, action="append", help="JSON config (repeatable)")
        s.add_argument("--out", default="out")
        s.add_argument("--jobs", type=int, default=1, help="worker processes across configs")
        s.set_defaults(func=func)

    e = sub.add_parser("exp", help="run a configured experiment", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    e.add_argument("kind", choices=["monotonicity", "order", "curvature", "fold", "limit"])
    e.add_argument("--config", required=True, action="append", help="JSON config (repeatable)")
    e.add_argument("--out", default="out")
    e.add_argument("--jobs", type=int, default=1, help="worker processes across configs")
    e.set_defaults(func=cmd_exp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
