"""Command line entry point ``mlt``.

Every subcommand builds one report dict; ``--json`` prints it as a single JSON
document, otherwise it is rendered as ``key: value`` lines. Exit codes: 0 on
success, 1 on domain errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MltError, NonConvergenceError
from .experiment import ExperimentConfig, boundedness_probe, parse_grid, power_experiment
from .fit import FitOptions, fit_mle, lrt
from .graph import GRAPH_KINDS, make_graph, mlt_zero_mean, read_graph, serialize_graph
from .model import likelihood_upper_bound, load_data_csv, sample_stats

DEFAULT_T_GRID = (0.0, 1.0, 10.0, 1e3, 1e6)


def _clean(obj):
    """JSON-safe copy: tuples to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _render_text(report: dict, prefix: str = "") -> list[str]:
    lines = []
    for key, value in report.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            lines.extend(_render_text(value, name + "."))
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            lines.append(f"{name}: {len(value)} entries")
        else:
            lines.append(f"{name}: {json.dumps(value)}")
    return lines


def _emit(report: dict, as_json: bool, out=None) -> None:
    out = out or sys.stdout
    report = _clean(report)
    if as_json:
        out.write(json.dumps(report, indent=2) + "\n")
    else:
        out.write("\n".join(_render_text(report)) + "\n")


def _fit_options(args) -> FitOptions:
    return FitOptions(restarts=args.restarts, max_iter=args.max_iter, seed=args.seed)


def _stats(args):
    return sample_stats(load_data_csv(args.data), zero_mean=args.zero_mean)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_threshold(args) -> dict:
    return mlt_zero_mean(read_graph(args.graph)).to_dict()


def cmd_witness(args) -> dict:
    from .witness import build_divergence_witness, verify_witness

    g = read_graph(args.graph)
    stats = sample_stats(load_data_csv(args.data), zero_mean=not args.center)
    w = build_divergence_witness(g, stats)
    grid = parse_grid(args.t_grid) if args.t_grid else DEFAULT_T_GRID
    report = verify_witness(w, g, stats, grid)
    if args.svg:
        from .plotting import plot_witness

        plot_witness(w, args.svg)
    return {"witness": w.to_dict(), "verification": report.to_dict()}


def cmd_fit(args) -> dict:
    g = read_graph(args.graph)
    stats = _stats(args)
    bound = likelihood_upper_bound(g, stats.cov)
    try:
        res = fit_mle(g, stats.cov, _fit_options(args))
    except NonConvergenceError as exc:
        if exc.best is None:
            raise
        res = exc.best
    out = res.to_dict()
    out["upper_bound"] = bound
    out["n"] = stats.n
    out["zero_mean"] = stats.zero_mean
    if not res.converged:
        out["warning"] = "optimizer did not converge; best point reported"
    return out


def cmd_lrt(args) -> dict:
    g_full = read_graph(args.full)
    g_null = read_graph(args.null)
    stats = _stats(args)
    res = lrt(g_full, g_null, stats, _fit_options(args))
    out = res.to_dict()
    out["n"] = stats.n
    out["zero_mean"] = stats.zero_mean
    out["upper_bound_full"] = likelihood_upper_bound(g_full, stats.cov)
    return out


def cmd_probe(args) -> dict:
    g = read_graph(args.graph)
    report = boundedness_probe(g, args.n, args.reps, args.seed, _fit_options(args))
    return report.to_dict()


def cmd_power(args) -> dict:
    cfg = ExperimentConfig(
        p=args.p,
        n_values=tuple(int(x) for x in args.n.split(",")),
        lambda12_grid=parse_grid(args.grid),
        replicates=args.reps,
        alpha=args.alpha,
        seed=args.seed,
        fit=_fit_options(args),
    )
    table = power_experiment(cfg)
    csv_text = table.to_csv()
    if args.out:
        Path(args.out).write_text(csv_text)
    if args.svg:
        from .plotting import plot_power

        plot_power(table, args.svg)
    report = table.to_dict()
    report["outputs"] = {"csv": args.out, "svg": args.svg}
    if not args.out and not args.json:
        sys.stdout.write(csv_text)
        return {}
    return report


def cmd_generate(args) -> dict:
    g = make_graph(args.kind, args.p)
    text = serialize_graph(g)
    if args.output:
        Path(args.output).write_text(text)
        return {"kind": args.kind, "p": g.p, "edges": g.n_edges, "path": args.output}
    if args.json:
        return {"kind": args.kind, "p": g.p, "edges": g.n_edges, "graph": text}
    sys.stdout.write(text)
    return {}


# ---------------------------------------------------------------------------
# Parser

def _add_fit_flags(sp, restarts: int = 1) -> None:
    sp.add_argument("--restarts", type=int, default=restarts, help="number of optimizer starts")
    sp.add_argument("--seed", type=int, default=0, help="seed for restart initializations")
    sp.add_argument("--max-iter", type=int, default=5000, help="iteration cap per start")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlt", description="Maximum likelihood thresholds of path diagrams.")
    parser.add_argument("--version", action="version", version=f"mlt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("threshold", help="thresholds and component decomposition of a graph")
    sp.add_argument("graph")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_threshold)

    sp = sub.add_parser("witness", help="certify likelihood divergence below the threshold")
    sp.add_argument("graph")
    sp.add_argument("--data", required=True, help="CSV data file, one row per observation")
    sp.add_argument("--center", action="store_true", help="unknown mean: center the data first")
    sp.add_argument("--t-grid", help="t values for verification, start:stop:step or comma list")
    sp.add_argument("--svg", help="write the log-likelihood path plot here")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_witness)

    sp = sub.add_parser("fit", help="maximum likelihood fit")
    sp.add_argument("graph")
    sp.add_argument("--data", required=True)
    sp.add_argument("--zero-mean", action="store_true", help="treat the mean as known to be zero")
    _add_fit_flags(sp)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("lrt", help="likelihood ratio test of a subgraph")
    sp.add_argument("full")
    sp.add_argument("null")
    sp.add_argument("--data", required=True)
    sp.add_argument("--zero-mean", action="store_true")
    _add_fit_flags(sp)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_lrt)

    sp = sub.add_parser("probe", help="boundedness probe on random data")
    sp.add_argument("graph")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--reps", type=int, default=100)
    _add_fit_flags(sp)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("power", help="size and power of the test of lambda_12 = 0")
    sp.add_argument("--p", type=int, default=20)
    sp.add_argument("--n", default="15,20,25", help="comma-separated sample sizes")
    sp.add_argument("--grid", default="-1:1:0.25", help="lambda_12 values, start:stop:step or comma list")
    sp.add_argument("--reps", type=int, default=200)
    sp.add_argument("--alpha", type=float, default=0.05)
    _add_fit_flags(sp)
    sp.set_defaults(seed=7)
    sp.add_argument("--out", help="CSV output path")
    sp.add_argument("--svg", help="SVG power curve output path")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_power)

    sp = sub.add_parser("generate", help="write a built-in graph")
    sp.add_argument("--kind", required=True, choices=GRAPH_KINDS)
    sp.add_argument("--p", type=int)
    sp.add_argument("-o", "--output")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_generate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = args.func(args)
    except (MltError, ValueError, OSError) as exc:
        if getattr(args, "json", False):
            _emit({"error": str(exc), "type": type(exc).__name__}, True)
        else:
            sys.stderr.write(f"mlt {args.command}: error: {exc}\n")
        return 1
    if report:
        _emit(report, args.json)
    return 0


if __name__ == "__main__":
    sys.exit(main())
