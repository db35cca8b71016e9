"""Command-line front end: ``spinmarket <subcommand> [options]``.

Exit codes: 0 success, 2 bad arguments or configuration, 3 partial numeric
failure in a sweep.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ._io import fmt, write_csv, write_json
from .core import ModelParams, TiePolicy, parse_config, random_config, run_micro
from .kernel import _kernel_table, simulate_macro_chain
from .longmem import DegenerateStatisticError, rs_curve, write_rs_csv
from .skeleton import analyze_attractors, drift_field
from .spectral import (
    assemble_matrix,
    mixing_half_life,
    spectral_summary,
    write_matrix_csv,
    write_measure_csv,
    write_spectrum_csv,
)
from .sweep import ConfigError, SweepConfig, classify_regime, sweep

log = logging.getLogger("spinmarket")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3


def _params(args) -> ModelParams:
    beta = float("inf") if args.beta is None else args.beta
    return ModelParams(args.N, args.alpha, tie_policy=TiePolicy(args.tie_policy), beta=beta)


def _emit(args, name: str, payload: dict) -> None:
    """Print a small summary, and save it as JSON when asked."""
    if args.format == "json":
        write_json(Path(args.out_dir) / f"{name}.json", payload)
    print(json.dumps({k: (fmt(v) if isinstance(v, float) else v) for k, v in payload.items()}, default=str))


def cmd_simulate(args) -> int:
    params = _params(args)
    rng = np.random.default_rng(args.seed)
    if args.level == "macro":
        path = simulate_macro_chain(tuple(args.start), params, args.steps, rng)
    else:
        if args.config:
            config = parse_config(Path(args.config).read_text())
            if config.N != params.N:
                raise ValueError(f"config has N={config.N}, expected {params.N}")
        else:
            config = random_config(params.N, tuple(args.start), rng)
        path = run_micro(config, params, args.steps, rng)
    out = Path(args.out_dir) / f"path_{args.level}.csv"
    write_csv(out, ["step", "i", "j"], ((n + 1, i, j) for n, (i, j) in enumerate(path)))
    last = tuple(int(x) for x in path[-1]) if len(path) else tuple(args.start)
    _emit(args, "simulate", {"level": args.level, "steps": args.steps, "final_state": list(last), "path": str(out)})
    return EXIT_OK


def cmd_kernel(args) -> int:
    rows = _kernel_table(_params(args))
    cols = ["i", "j", "p_up_site", "p_down_site", "p_up_arc", "p_down_arc", "p_hold"]
    out = write_csv(Path(args.out_dir) / f"kernel_N{args.N}.csv", cols, ([r[c] for c in cols] for r in rows))
    _emit(args, "kernel", {"N": args.N, "alpha": args.alpha, "states": len(rows), "path": str(out)})
    return EXIT_OK


def cmd_spectrum(args) -> int:
    params = _params(args)
    M = assemble_matrix(params)
    summ = spectral_summary(M, N=params.N)
    out = Path(args.out_dir)
    write_spectrum_csv(M, out / "spectrum.csv")
    write_measure_csv(summ.stationary, out / "stationary.csv")
    if summ.second_vector is not None:
        write_measure_csv(summ.second_vector, out / "second_vector.csv")
    if args.matrix:
        write_matrix_csv(M, out / "matrix.csv")
    _emit(args, "spectrum", {
        "N": params.N, "alpha": params.alpha, "lambda2": summ.lambda2, "gap": summ.gap,
        "half_life": mixing_half_life(summ.lambda2) if summ.lambda2 > 0 else 0,
        "trap_mass": summ.stationary.at(params.N, params.n_arcs), "notes": summ.notes,
    })
    return EXIT_OK


def cmd_skeleton(args) -> int:
    field = drift_field(_params(args))
    report = analyze_attractors(field, radius=args.radius, max_steps=args.max_steps)
    out = Path(args.out_dir)
    field.to_csv(out / "drift_field.csv")
    report.to_json(out / "attractors.json")
    report.basins_csv(out / "basins.csv")
    _emit(args, "skeleton", {
        "attractors": [{"states": [list(s) for s in a["states"]], "class": a["class"]} for a in report.attractors],
    })
    return EXIT_OK


def cmd_rs(args) -> int:
    if args.input:
        data = np.loadtxt(args.input, delimiter=",", skiprows=1, ndmin=2)
        series = {f"col{args.column}": data[:, args.column]}
    else:
        params = _params(args)
        path = simulate_macro_chain(tuple(args.start), params, args.steps, np.random.default_rng(args.seed))
        series = {"S+": path[:, 0], "A+": path[:, 1]}
    rows = []
    for name, s in series.items():
        try:
            curve = rs_curve(s, args.taus, method=args.method)
        except DegenerateStatisticError as exc:
            log.error("%s: %s", name, exc)
            return EXIT_PARTIAL
        rows += [(name, t, v, args.alpha, args.N, args.seed) for t, v in zip(curve.taus, curve.index_values)]
    out = write_rs_csv(rows, Path(args.out_dir) / "rs.csv")
    _emit(args, "rs", {"rows": len(rows), "path": str(out)})
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.config:
        config = SweepConfig.load(args.config)
    else:
        config = SweepConfig.from_dict({"N_list": args.N_list or [], "alpha_list": args.alpha_list or [],
                                        "seed": args.seed, "steps": args.steps, "taus": args.taus or []})
    result = sweep(config, out_dir=args.out_dir, threads=args.threads)
    trap = float(config.thresholds.get("trap"))
    for r in result.records:
        status = classify_regime(r, trap) if r.ok else f"FAILED {r.error}"
        print(f"N={r.N} alpha={fmt(r.alpha)} lambda2={fmt(r.lambda2)} trap_mass={fmt(r.trap_mass)} {status}")
    return EXIT_PARTIAL if result.failures else EXIT_OK


def _model_args(p, require=True):
    p.add_argument("--N", type=int, required=require, default=None if require else 10)
    p.add_argument("--alpha", type=float, required=require, default=None if require else 3.0)
    p.add_argument("--beta", type=float, default=None, help="inverse temperature; omit for the frozen limit")
    p.add_argument("--tie-policy", default=TiePolicy.PAPER_KERNEL.value, choices=[t.value for t in TiePolicy])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinmarket", description="Site/arc spin market model toolkit.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default=".")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a micro or macro path")
    _model_args(p)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--start", type=int, nargs=2, default=[0, 0], metavar=("I", "J"))
    p.add_argument("--level", choices=["macro", "micro"], default="macro")
    p.add_argument("--config", help="initial micro configuration in the two-line text format")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kernel", help="dump one-step transition probabilities")
    _model_args(p)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("spectrum", help="eigen-analysis of the transition matrix")
    _model_args(p)
    p.add_argument("--matrix", action="store_true", help="also write the matrix in coordinate form")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("skeleton", help="drift field and automaton attractors")
    _model_args(p)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--max-steps", type=int, default=8)
    p.set_defaults(func=cmd_skeleton)

    p = sub.add_parser("rs", help="rescaled-range index of a path")
    _model_args(p, require=False)
    p.add_argument("--input", help="CSV with a header row; otherwise a macro path is simulated")
    p.add_argument("--column", type=int, default=1)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--start", type=int, nargs=2, default=[8, 10], metavar=("I", "J"))
    p.add_argument("--taus", type=int, nargs="+", default=[50, 100, 500, 1000])
    p.add_argument("--method", choices=["classic", "lo"], default="classic")
    p.set_defaults(func=cmd_rs)

    p = sub.add_parser("sweep", help="scan a grid of (N, alpha)")
    p.add_argument("--config", help="JSON file with N_list, alpha_list, seed, steps, taus, thresholds")
    p.add_argument("--N-list", type=int, nargs="*", dest="N_list")
    p.add_argument("--alpha-list", type=float, nargs="*", dest="alpha_list")
    p.add_argument("--steps", type=int, default=0)
    p.add_argument("--taus", type=int, nargs="*")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (ValueError, TypeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
