"""Command-line front end: ``run``, ``sweep``, ``plot`` and ``selftest``.

Exit codes: 0 on completion (a reached cap counts as completion), 1 on a
numerical failure or a malformed input file, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .adaptive import AdaptiveConfig, Algorithm, run
from .errors import CatgfemError
from .mesh import dump_mesh
from .problems import PROBLEMS, get_problem
from .record import CSV_HEADER, CsvSchemaError, read_csv

log = logging.getLogger("catgfem")

THREADS_ENV = "CATGFEM_THREADS"


# --- argument types -------------------------------------------------------

def _theta(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"theta must lie in (0, 1), got {text}")
    return value


def _thetas(text):
    values = [_theta(t) for t in text.split(",") if t.strip()]
    if not values:
        raise argparse.ArgumentTypeError("need at least one theta value")
    return values


def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a valid {kind.__name__}: {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catgfem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every adaptive level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--problem", required=True, choices=sorted(PROBLEMS))
        p.add_argument("--algo", default="catgfem", choices=[a.value for a in Algorithm])
        p.add_argument("--h0", type=_positive(int), default=None, metavar="N",
                       help="initial mesh size 1/N (problem default when omitted)")
        p.add_argument("--tol", type=_positive(float), default=1e-8, help="estimator stopping tolerance")
        p.add_argument("--max-elements", type=_positive(int), default=200_000)
        p.add_argument("--max-iterations", type=_positive(int), default=200)
        p.add_argument("--no-errors", action="store_true", help="skip exact-error evaluation")
        p.add_argument("--no-timings", action="store_true",
                       help="leave wall_ms empty so repeated runs give identical files")

    p = sub.add_parser("run", help="one adaptive run, written as CSV")
    add_run_flags(p)
    p.add_argument("--theta", type=_theta, default=0.3)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--dump-mesh", type=Path, default=None, metavar="PATH",
                   help="write the final mesh in the text dump format")

    p = sub.add_parser("sweep", help="one run per theta plus a manifest")
    add_run_flags(p)
    p.add_argument("--thetas", type=_thetas, required=True, help="comma-separated list")
    p.add_argument("--out", required=True, type=Path, help="output directory")

    p = sub.add_parser("plot", help="log-log SVG of CSV histories")
    p.add_argument("csv", nargs="+", type=Path)
    p.add_argument("--columns", default="energy_err,eta",
                   help="comma-separated columns to draw against n_elements")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("selftest", help="quick refinement fuzz and patch checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=_positive(int), default=20)
    return parser


# --- run / sweep ------------------------------------------------------------

def _config(args, theta) -> AdaptiveConfig:
    return AdaptiveConfig(algorithm=args.algo, theta=theta, tol=args.tol,
                          max_elements=args.max_elements, max_iterations=args.max_iterations,
                          n0=args.h0, compute_errors=not args.no_errors)


def _execute(problem_name, config, out, timings=True, dump=None):
    problem = get_problem(problem_name)
    final = {}

    def keep_mesh(state, row, report):
        final["mesh"] = state.current.mesh

    record = run(problem, config, callback=keep_mesh if dump else None)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        record.write_csv(fh, timings=timings)
    if dump:
        with open(dump, "w") as fh:
            dump_mesh(final["mesh"], fh)
    return record


def run_command(args) -> int:
    record = _execute(args.problem, _config(args, args.theta), args.out,
                      timings=not args.no_timings, dump=args.dump_mesh)
    last = record.rows[-1]
    print(f"{record.algorithm} on {record.problem}: {len(record.rows)} levels, "
          f"{last.n_elements} elements, eta={last.eta:.4e}, stop={record.stop_reason}")
    return 0


def _sweep_job(job):
    problem, config, out, timings = job
    try:
        record = _execute(problem, config, out, timings=timings)
        return "ok", record.stop_reason, ""
    except CatgfemError as exc:
        return "failed", "", f"{type(exc).__name__}: {exc}"


def sweep_command(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for theta in args.thetas:
        name = f"{args.problem}_{args.algo}_theta{theta:g}.csv"
        jobs.append((args.problem, _config(args, theta), args.out / name, not args.no_timings))
    workers = max(1, min(int(os.environ.get(THREADS_ENV, "1") or 1), len(jobs)))
    if workers == 1:
        results = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))

    manifest = args.out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", "csv", "status", "stop_reason", "message"])
        for theta, job, (status, stop, msg) in zip(args.thetas, jobs, results):
            w.writerow([repr(theta), job[2].name, status, stop, msg])
    failed = [r for r in results if r[0] != "ok"]
    for theta, (status, _, msg) in zip(args.thetas, results):
        if status != "ok":
            print(f"error: theta={theta:g}: {msg}", file=sys.stderr)
    print(f"wrote {len(jobs) - len(failed)} of {len(jobs)} runs; manifest {manifest}")
    return 1 if failed else 0


# --- plot -------------------------------------------------------------------

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"]
DASHES = ["", "6,3", "2,3", "8,3,2,3"]


def render_svg(series, width=720, height=480) -> str:
    """Log-log plot of (label, n_elements, values, color, dash) series."""
    left, right, top, bottom = 70, 200, 20, 50
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([s[1] for s in series])
    ys = np.concatenate([s[2] for s in series])
    lx0, lx1 = math.floor(np.log10(xs.min())), math.ceil(np.log10(xs.max()))
    ly0, ly1 = math.floor(np.log10(ys.min())), math.ceil(np.log10(ys.max()))
    lx1 = max(lx1, lx0 + 1)
    ly1 = max(ly1, ly0 + 1)

    def px(x):
        return left + (np.log10(x) - lx0) / (lx1 - lx0) * pw

    def py(y):
        return top + (ly1 - np.log10(y)) / (ly1 - ly0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for e in range(lx0, lx1 + 1):
        x = px(10.0 ** e)
        out.append(f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" y2="{top + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle">1e{e}</text>')
    for e in range(ly0, ly1 + 1):
        y = py(10.0 ** e)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">1e{e}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">number of elements</text>')

    for label, n, v, color, dash in series:
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(n, v))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash_attr} '
                   f'points="{pts}"><title>{escape(label)}</title></polyline>')

    # reference slope -1/2 over one decade, tucked into the lower left
    x0 = 10.0 ** (lx0 + 0.15 * (lx1 - lx0))
    x1 = x0 * 10.0
    y0 = 10.0 ** (ly0 + 0.35 * (ly1 - ly0))
    y1 = y0 * 10.0 ** -0.5
    tri = [(px(x0), py(y0)), (px(x1), py(y1)), (px(x0), py(y1))]
    out.append('<polygon class="slope-ref" fill="none" stroke="black" points="'
               + " ".join(f"{a:.2f},{b:.2f}" for a, b in tri) + '"/>')
    out.append(f'<text x="{px(x0) - 6:.2f}" y="{(py(y0) + py(y1)) / 2:.2f}" text-anchor="end">-1/2</text>')

    for i, (label, _, _, color, dash) in enumerate(series):
        y = top + 10 + 18 * i
        x = left + pw + 12
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="{x}" y1="{y}" x2="{x + 28}" y2="{y}" stroke="{color}" '
                   f'stroke-width="1.5"{dash_attr}/>')
        out.append(f'<text x="{x + 34}" y="{y + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_command(args) -> int:
    columns = [c.strip() for c in args.columns.split(",") if c.strip()]
    bad = [c for c in columns if c not in CSV_HEADER or c in ("k", "n_elements")]
    if not columns or bad:
        print(f"error: --columns: unknown or unplottable column(s) {', '.join(bad) or '(none)'}",
              file=sys.stderr)
        return 2
    series = []
    for i, path in enumerate(args.csv):
        data = read_csv(path)
        for j, col in enumerate(columns):
            n, v = data["n_elements"], data[col]
            keep = np.isfinite(v) & (v > 0)
            if not keep.any():
                continue
            style = i * len(columns) + j
            series.append((f"{path.stem}: {col}", n[keep], v[keep],
                           COLORS[style % len(COLORS)], DASHES[j % len(DASHES)]))
    if not series:
        print("error: nothing to plot; every selected column is empty", file=sys.stderr)
        return 1
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(render_svg(series))
    print(f"wrote {args.out} ({len(series)} curves)")
    return 0


# --- selftest ---------------------------------------------------------------

def selftest_command(args) -> int:
    from .fem import build_space, interpolate, prolongation
    from .mesh import bisect, generate_lshape, generate_unit_square
    from .problems import patch_problem

    rng = np.random.default_rng(args.seed)
    ok = True

    def report(name, passed, detail):
        nonlocal ok
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")

    for gen in (generate_unit_square, generate_lshape):
        mesh = gen(2)
        area = mesh.areas.sum()
        worst = 0.0
        for _ in range(args.rounds):
            marked = rng.choice(mesh.n_triangles, size=min(3, mesh.n_triangles), replace=False)
            fine = bisect(mesh, marked)
            coarse_space, fine_space = build_space(mesh), build_space(fine)
            lin = lambda x: 1.0 + 2.0 * x[:, 0] - x[:, 1]
            err = np.abs(prolongation(coarse_space, fine_space) @ interpolate(coarse_space, lin).coeffs
                         - interpolate(fine_space, lin).coeffs).max()
            worst = max(worst, err)
            mesh = fine
        counts = np.bincount(mesh.elem_to_edge.ravel(), minlength=len(mesh.edges))
        conforming = np.array_equal(counts == 1, mesh.boundary_edge_mask)
        report(f"fuzz {gen.__name__}", conforming and abs(mesh.areas.sum() - area) < 1e-12 and worst < 1e-13,
               f"{mesh.n_triangles} triangles, conforming={conforming}, prolongation err={worst:.1e}")

    problem = patch_problem()
    for algo in Algorithm:
        rec = run(problem, AdaptiveConfig(algorithm=algo, theta=0.5, max_iterations=2, tol=1e-30))
        err = max(r.energy_err for r in rec.rows)
        report(f"patch {algo.value}", err < 1e-10, f"max energy error {err:.1e}")
    return 0 if ok else 1


# --- entry point --------------------------------------------------------------

COMMANDS = {"run": run_command, "sweep": sweep_command, "plot": plot_command,
            "selftest": selftest_command}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CsvSchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CatgfemError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
