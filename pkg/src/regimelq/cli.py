"""Command-line front end: solve, iterate, simulate, verify, report.

Problem files are YAML: top-level sections ``problem``, ``grid``,
``generator`` and a ``regimes`` list.  Every coefficient may be a
constant (matrix as a list of rows, vector as a list) or a per-node
array (one extra level of nesting, length steps + 1).  Example::

    name: scalar-benchmark
    problem: {n: 1, m: 1, regimes: 1}
    grid: {t0: 0.0, T: 1.0, steps: 1000}
    generator:
      rates: [[0.0]]
    regimes:
      - A: [[0.0]]
        B: [[1.0]]
        C: [[0.0]]
        D: [[0.0]]
        Q: [[0.0]]
        S: [[0.0]]
        R: [[1.0]]
        G: [[1.0]]
        b: [0.0]
        sigma: [0.0]
        q: [0.0]
        rho: [0.0]
        g: [0.0]

Exit codes: 0 success, 1 problem-file/validation error, 2 solution not
regular (or the iteration certifies non-convexity), 3 integration
divergence, 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import affine, riccati, sim, verify
from .matcore import symmetrize
from .model import Generator, ProblemSpec, TimeGrid, validate

__all__ = ["main", "parse_problem", "write_problem", "build_spec"]

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_NOT_REGULAR = 2
EXIT_DIVERGENCE = 3
EXIT_VERIFY_FAILED = 4

_MATRIX_FIELDS = {
    "A": ("n", "n"), "B": ("n", "m"), "C": ("n", "n"), "D": ("n", "m"),
    "Q": ("n", "n"), "S": ("m", "n"), "R": ("m", "m"),
}
_VECTOR_FIELDS = {"b": "n", "sigma": "n", "q": "n", "rho": "m"}
_SYMMETRIZED = ("Q", "R")


class ProblemFileError(ValueError):
    """Problem file cannot be parsed into an admissible specification."""


def _depth(x) -> int:
    d = 0
    while isinstance(x, (list, tuple)):
        d += 1
        x = x[0] if len(x) else None
    return d


def _field_nodes(raw, base_depth: int, n_nodes: int, name: str) -> np.ndarray:
    """Constant or per-node field -> (n_nodes, ...) float array."""
    d = _depth(raw)
    arr = np.asarray(raw, dtype=float)
    if d == base_depth:
        return np.broadcast_to(arr, (n_nodes, *arr.shape)).copy()
    if d == base_depth + 1:
        if arr.shape[0] != n_nodes:
            raise ProblemFileError(
                f"{name}: per-node array has {arr.shape[0]} samples, "
                f"grid needs {n_nodes}"
            )
        return arr
    raise ProblemFileError(f"{name}: nesting depth {d} not understood")


def build_spec(doc: dict) -> ProblemSpec:
    """Assemble a ProblemSpec from a parsed problem document."""
    try:
        prob = doc["problem"]
        n, m, n_reg = int(prob["n"]), int(prob["m"]), int(prob["regimes"])
        g_sec = doc["grid"]
        grid = TimeGrid(float(g_sec["t0"]), float(g_sec["T"]), int(g_sec["steps"]))
        rates_raw = doc["generator"]["rates"]
        regime_docs = doc["regimes"]
    except (KeyError, TypeError) as exc:
        raise ProblemFileError(f"missing or malformed section: {exc}") from exc
    if len(regime_docs) != n_reg:
        raise ProblemFileError(
            f"regimes list has {len(regime_docs)} entries, problem.regimes={n_reg}"
        )
    n_nodes = grid.steps + 1
    gen = Generator(_field_nodes(rates_raw, 2, n_nodes, "generator.rates"))
    if gen.n_regimes != n_reg:
        raise ProblemFileError(
            f"generator is {gen.n_regimes}x{gen.n_regimes}, problem.regimes={n_reg}"
        )

    dims = {"n": n, "m": m}
    fields = {}
    for name, (r, c) in _MATRIX_FIELDS.items():
        shape = (dims[r], dims[c])
        per_regime = []
        for i, rd in enumerate(regime_docs):
            if name not in rd:
                raise ProblemFileError(f"regime {i + 1}: missing field {name}")
            arr = _field_nodes(rd[name], 2, n_nodes, f"regime {i + 1}.{name}")
            if arr.shape[1:] != shape:
                raise ProblemFileError(
                    f"regime {i + 1}.{name}: shape {arr.shape[1:]} != {shape}"
                )
            per_regime.append(arr)
        stacked = np.stack(per_regime, axis=1)
        fields[name] = symmetrize(stacked) if name in _SYMMETRIZED else stacked
    for name, dim in _VECTOR_FIELDS.items():
        shape = (dims[dim],)
        per_regime = []
        for i, rd in enumerate(regime_docs):
            raw = rd.get(name, [0.0] * dims[dim])
            arr = _field_nodes(raw, 1, n_nodes, f"regime {i + 1}.{name}")
            if arr.shape[1:] != shape:
                raise ProblemFileError(
                    f"regime {i + 1}.{name}: shape {arr.shape[1:]} != {shape}"
                )
            per_regime.append(arr)
        fields[name] = np.stack(per_regime, axis=1)

    g_terms, g_vecs = [], []
    for i, rd in enumerate(regime_docs):
        if "G" not in rd:
            raise ProblemFileError(f"regime {i + 1}: missing field G")
        g_mat = np.asarray(rd["G"], dtype=float)
        if g_mat.shape != (n, n):
            raise ProblemFileError(f"regime {i + 1}.G: shape {g_mat.shape} != {(n, n)}")
        g_terms.append(symmetrize(g_mat))
        g_vec = np.asarray(rd.get("g", [0.0] * n), dtype=float)
        if g_vec.shape != (n,):
            raise ProblemFileError(f"regime {i + 1}.g: shape {g_vec.shape} != {(n,)}")
        g_vecs.append(g_vec)

    spec = ProblemSpec(
        n=n, m=m, grid=grid, gen=gen,
        G=np.stack(g_terms), g=np.stack(g_vecs), **fields,
    )
    problems = validate(spec)
    if problems:
        raise ProblemFileError("; ".join(problems))
    return spec


def parse_problem(path: str | Path) -> tuple[ProblemSpec, dict]:
    """Read a YAML problem file; returns the spec and the raw document."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ProblemFileError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ProblemFileError(f"YAML error in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProblemFileError(f"{path}: top level must be a mapping")
    try:
        return build_spec(doc), doc
    except ProblemFileError:
        raise
    except (ValueError, TypeError) as exc:
        raise ProblemFileError(f"{path}: {exc}") from exc


def _emit_field(arr: np.ndarray) -> list:
    """Per-node (n_nodes, ...) array -> constant if possible, else per-node."""
    if np.all(arr == arr[0]):
        return arr[0].tolist()
    return arr.tolist()


def write_problem(path: str | Path, spec: ProblemSpec, name: str = "problem") -> None:
    """Write a spec back to the YAML schema (inverse of parse_problem)."""
    doc = {
        "name": name,
        "problem": {"n": spec.n, "m": spec.m, "regimes": spec.n_regimes},
        "grid": {"t0": spec.grid.t0, "T": spec.grid.T, "steps": spec.grid.steps},
        "generator": {"rates": _emit_field(spec.gen.rates)},
        "regimes": [],
    }
    for i in range(spec.n_regimes):
        entry = {}
        for fname in (*_MATRIX_FIELDS, *_VECTOR_FIELDS):
            entry[fname] = _emit_field(getattr(spec, fname)[:, i])
        entry["G"] = spec.G[i].tolist()
        entry["g"] = spec.g[i].tolist()
        doc["regimes"].append(entry)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=None)


def _meta_line(args, extra: dict | None = None) -> str:
    """Single leading comment line; carries the timestamp, so comparisons
    of repeated runs must skip comment lines."""
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    parts = [
        f"generated={stamp}",
        f"seed={args.seed}",
        f"steps={args.steps or 'file'}",
        f"paths={args.paths}",
        f"threads={args.threads}",
        f"pinv_tol={args.pinv_tol}",
        f"strong_tol={args.strong_tol}",
        f"conv_tol={args.conv_tol}",
    ]
    for k, v in (extra or {}).items():
        parts.append(f"{k}={v}")
    return "# " + " ".join(parts) + "\n"


def _write_csv(path: Path, meta: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(meta)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format(v, ".17g") if isinstance(v, float) else v for v in row]
            )


def _write_riccati_csv(out: Path, args, spec, sol) -> None:
    t_nodes = spec.grid.nodes()
    header = ["t", "regime"]
    header += [f"P_{a}_{b}" for a in range(spec.n) for b in range(spec.n)]
    header += ["min_eig_R_hat"]
    rows = []
    for k, t in enumerate(t_nodes):
        for i in range(spec.n_regimes):
            rows.append(
                [float(t), i + 1, *sol.P[k, i].ravel().tolist(),
                 float(sol.min_eig_R_hat[k, i])]
            )
    _write_csv(out / "riccati.csv", _meta_line(args), header, rows)


def _write_affine_csv(out: Path, args, spec, aff) -> None:
    t_nodes = spec.grid.nodes()
    header = ["t", "regime"]
    header += [f"eta_{a}" for a in range(spec.n)]
    header += [f"v_star_{a}" for a in range(spec.m)]
    rows = []
    for k, t in enumerate(t_nodes):
        for i in range(spec.n_regimes):
            rows.append(
                [float(t), i + 1, *aff.eta[k, i].tolist(),
                 *aff.v_star[k, i].tolist()]
            )
    _write_csv(out / "affine.csv", _meta_line(args), header, rows)


def _load_and_solve(args):
    """Shared front half: parse, apply overrides, solve, write solve outputs.

    Returns (spec, ric, aff, exit_code); on a nonzero exit code the other
    entries may be None.
    """
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec, _ = parse_problem(args.problem)
    if args.steps:
        spec = spec.with_steps(args.steps)

    try:
        if args.command == "iterate":
            sol = riccati.iterate_strongly_regular(
                spec, max_iter=args.max_iter, conv_tol=args.conv_tol,
                pinv_tol=args.pinv_tol, strong_tol=args.strong_tol,
            )
        else:
            sol = riccati.solve_riccati_direct(
                spec, pinv_tol=args.pinv_tol, strong_tol=args.strong_tol,
            )
    except riccati.DivergenceError as exc:
        (out / "classification.txt").write_text(f"divergent: {exc}\n")
        print(f"error: {exc}", file=sys.stderr)
        return spec, None, None, EXIT_DIVERGENCE
    except (riccati.NotStronglyRegularError, riccati.NonConvergenceError) as exc:
        (out / "classification.txt").write_text(f"not_regular: {exc}\n")
        print(f"error: {exc}", file=sys.stderr)
        return spec, None, None, EXIT_NOT_REGULAR

    _write_riccati_csv(out, args, spec, sol)
    (out / "classification.txt").write_text(str(sol.classification) + "\n")
    if not sol.classification.is_regular:
        print(f"classification: {sol.classification}", file=sys.stderr)
        return spec, sol, None, EXIT_NOT_REGULAR

    aff = affine.solve_eta(spec, sol)
    _write_affine_csv(out, args, spec, aff)
    return spec, sol, aff, EXIT_OK


def _cmd_solve(args) -> int:
    _, sol, _, code = _load_and_solve(args)
    if code == EXIT_OK:
        print(f"classification: {sol.classification}")
        if args.command == "iterate":
            print(f"iterations: {len(sol.iteration_trace)}")
    return code


def _cmd_simulate(args) -> int:
    spec, sol, aff, code = _load_and_solve(args)
    if code != EXIT_OK:
        return code
    out = Path(args.out)
    x0 = np.asarray(args.x0 or [0.0] * spec.n, dtype=float)
    i0 = args.i0 - 1
    est = sim.mc_value(
        spec, sol, aff, spec.grid.t0, i0, x0, args.paths, args.seed,
        threads=args.threads,
    )
    _write_csv(
        out / "value_mc.csv", _meta_line(args),
        ["mean", "std_error", "paths", "seed"],
        [[est.mean, est.std_error, est.paths, est.seed]],
    )
    print(f"mc value: {est.mean:.8g} +- {est.std_error:.3g} ({est.paths} paths)")
    if args.dump_paths:
        for p in range(args.dump_paths):
            rng = np.random.default_rng([args.seed, 424242, p])
            chain, path = sim.simulate_closed_loop(spec, sol, aff, i0, x0, rng)
            rows = []
            for k, t in enumerate(spec.grid.nodes()):
                rows.append(
                    [float(t), int(chain.alpha[k]) + 1,
                     *path.X[k].tolist(), *path.u[k].tolist()]
                )
            header = ["t", "regime"]
            header += [f"x_{a}" for a in range(spec.n)]
            header += [f"u_{a}" for a in range(spec.m)]
            _write_csv(out / f"path_{p:04d}.csv", _meta_line(args), header, rows)
    return EXIT_OK


def _cmd_verify(args) -> int:
    spec, sol, aff, code = _load_and_solve(args)
    out = Path(args.out)
    if code != EXIT_OK:
        if spec is not None and code == EXIT_NOT_REGULAR:
            # no solution to certify, but the convexity probe still
            # documents why (a flagged probe explains a failed iteration)
            report = verify.convexity_probe(
                spec, spec.grid.t0, args.i0 - 1, args.controls,
                max(args.paths // 5, 200), args.seed,
            )
            with open(out / "verification.csv", "w", encoding="utf-8",
                      newline="") as fh:
                fh.write(_meta_line(args, {"paths_main": args.paths}))
                fh.write(report.to_csv())
            (out / "summary.txt").write_text(report.summary())
            print(report.summary(), end="")
        return code
    x0 = np.asarray(args.x0 or [1.0] * spec.n, dtype=float)
    i0 = args.i0 - 1
    t0 = spec.grid.t0
    report = verify.VerificationReport()

    rng = np.random.default_rng([args.seed, 1])
    chain, path = sim.simulate_closed_loop(spec, sol, aff, i0, x0, rng)
    res = verify.stationarity_residual(spec, sol, aff, chain, path)
    res_norm = float(np.linalg.norm(res, axis=1).max())
    report.add(
        "stationarity_max_residual", res_norm, 1e-6 + 10.0 * spec.grid.h,
        seed=args.seed,
    )

    report.extend(
        verify.value_consistency(spec, sol, aff, t0, i0, x0, args.paths, args.seed)
    )
    report.extend(verify.m0_crosscheck(spec, t0, i0, args.paths, args.seed))
    report.extend(
        verify.convexity_probe(
            spec, t0, i0, args.controls, max(args.paths // 5, 200), args.seed
        )
    )
    _, u_path = sim.simulate_closed_loop(
        spec, sol, aff, i0, x0, np.random.default_rng([args.seed, 2])
    )
    v_dir = np.random.default_rng([args.seed, 3]).normal(
        size=(spec.grid.steps + 1, spec.m)
    )
    report.extend(
        verify.frechet_gradient_check(
            spec, t0, i0, x0, u_path.u, v_dir, (0.05, 0.1),
            max(args.paths // 5, 200), args.seed,
        )
    )

    with open(out / "verification.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(_meta_line(args, {"paths_main": args.paths}))
        fh.write(report.to_csv())
    (out / "summary.txt").write_text(report.summary())
    print(report.summary(), end="")
    return EXIT_OK if report.all_passed else EXIT_VERIFY_FAILED


def _cmd_report(args) -> int:
    out = Path(args.out)
    src = out / "verification.csv"
    if not src.exists():
        print(f"error: {src} not found; run verify first", file=sys.stderr)
        return EXIT_PARSE
    body = [
        line for line in src.read_text(encoding="utf-8").splitlines()
        if line and not line.startswith("#")
    ]
    reader = csv.DictReader(io.StringIO("\n".join(body)))
    report = verify.VerificationReport()
    for row in reader:
        report.add(row["check"], float(row["statistic"]), float(row["tolerance"]))
    (out / "summary.txt").write_text(report.summary())
    print(report.summary(), end="")
    return EXIT_OK if report.all_passed else EXIT_VERIFY_FAILED


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regimelq",
        description="Regime-switching LQ control: solve, simulate, verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("solve", _cmd_solve),
        ("iterate", _cmd_solve),
        ("simulate", _cmd_simulate),
        ("verify", _cmd_verify),
        ("report", _cmd_report),
    ):
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        if name != "report":
            p.add_argument("--problem", required=True, help="YAML problem file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--steps", type=int, default=0,
                       help="override grid steps (0 = use problem file)")
        p.add_argument("--paths", type=int, default=10000)
        p.add_argument("--seed", type=int, default=12345)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--pinv-tol", type=float, default=riccati.DEFAULT_PINV_TOL)
        p.add_argument("--strong-tol", type=float, default=riccati.DEFAULT_STRONG_TOL)
        p.add_argument("--conv-tol", type=float, default=1e-10)
        p.add_argument("--max-iter", type=int, default=50)
        p.add_argument("--i0", type=int, default=1, help="initial regime (1-based)")
        p.add_argument("--x0", type=float, nargs="+", default=None)
        p.add_argument("--controls", type=int, default=20,
                       help="random controls for the convexity probe")
        p.add_argument("--dump-paths", type=int, default=0,
                       help="write this many closed-loop path CSVs")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProblemFileError as exc:
        print(f"problem file error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except riccati.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
