"""Command line entry point: ``difflinalg {gradcheck,bench,fit}``.

Exit codes: 0 success, 1 a gradient check failed, 2 usage or input error.
The default precision comes from ``DIFFLINALG_PRECISION`` (``double`` if unset).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import gradcheck, kernels, models
from .bench import DEFAULT_REPS, run_bench
from .errors import DataError, LinalgError
from .plotting import bench_figure, loss_figure
from .tape.ops import LINALG_OPS

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
PRECISION_ENV = "DIFFLINALG_PRECISION"


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        vals = [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def _op_list(text):
    names = [v for v in text.replace(",", " ").split() if v]
    unknown = [v for v in names if v not in LINALG_OPS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown operator(s) {unknown}; known: {', '.join(LINALG_OPS)}")
    return names


def _default_precision():
    p = os.environ.get(PRECISION_ENV, "double")
    if p not in ("double", "single"):
        raise UsageError(f"{PRECISION_ENV} must be 'double' or 'single', got {p!r}")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="difflinalg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, backend="lapack"):
        p.add_argument("--precision", choices=("double", "single"), default=None,
                       help=f"floating point precision (default: ${PRECISION_ENV} or double)")
        p.add_argument("--backend", choices=sorted(kernels.BACKENDS), default=backend)
        p.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gradcheck", help="finite-difference check of operator backward passes")
    g.add_argument("--ops", type=_op_list, nargs="+", default=list(LINALG_OPS))
    g.add_argument("--shapes", type=_int_list, nargs="+", default=list(gradcheck.DEFAULT_SHAPES))
    g.add_argument("--trials", type=int, default=10)
    g.add_argument("--format", choices=("text", "json"), default="text")
    g.add_argument("--report", help="also write JSON-lines records to this file")
    common(g)

    b = sub.add_parser("bench", help="forward/backward timings normalized by n^3")
    b.add_argument("--ops", type=_op_list, nargs="+", default=["potrf", "gelqf", "syevd"])
    b.add_argument("--sizes", type=_int_list, nargs="+", default=[128, 256, 512])
    b.add_argument("--reps", type=int, default=DEFAULT_REPS)
    b.add_argument("--threads", type=int, default=1, help="worker threads for batched kernels (recorded)")
    b.add_argument("--output", help="JSON-lines file (default: stdout)")
    b.add_argument("--figure", help="write a seconds/n^3 plot to this file")
    common(b)

    f = sub.add_parser("fit", help="fit a model criterion to CSV data with Adam")
    f.add_argument("model", choices=("gp", "sgp", "blr", "kalman"))
    f.add_argument("--data", required=True, help="CSV with header; last column is the target "
                   "(kalman: every column is an observation dimension)")
    f.add_argument("--steps", type=int, default=200)
    f.add_argument("--lr", type=float, default=models.DEFAULT_LR)
    f.add_argument("--inducing", type=int, default=8, help="sgp: number of inducing points")
    f.add_argument("--path", choices=("lq", "cholesky"), default="lq", help="blr: factorization path")
    f.add_argument("--hidden", type=int, default=1, help="kalman: latent state dimension")
    f.add_argument("--no-normalize", action="store_true")
    f.add_argument("--trace", default="loss_trace.csv", help="loss trace CSV")
    f.add_argument("--params", default="params.json", help="fitted parameters JSON")
    f.add_argument("--figure", help="write a loss plot to this file")
    common(f, backend="reference")
    return parser


def cmd_gradcheck(args, out) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    dtype_name = args.precision or _default_precision()
    reports = gradcheck.run_suite(ops=args.ops, shapes=args.shapes, trials=args.trials, seed=args.seed,
                                  precision=dtype_name)
    print(gradcheck.format_reports(reports, args.format), file=out)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(gradcheck.format_reports(reports, "json") + "\n")
    failed = sum(not r.passed for r in reports)
    if args.format == "text":
        print(f"# {len(reports) - failed}/{len(reports)} passed", file=out)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bench(args, out) -> int:
    if args.reps < 3:
        raise UsageError("--reps must be >= 3")
    if any(n < 16 for n in args.sizes):
        raise UsageError("--sizes must all be >= 16")
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    records = [r.record() for r in run_bench(args.ops, args.sizes, args.reps, args.precision or _default_precision(),
                                             args.seed, args.threads)]
    lines = "\n".join(json.dumps(r, sort_keys=True) for r in records)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(lines + "\n")
    else:
        print(lines, file=out)
    if args.figure:
        bench_figure(records, args.figure)
    return EXIT_OK


def _fit_setup(args, data):
    rng = np.random.default_rng(args.seed)
    if args.model in ("gp", "sgp"):
        X, y = data.X, data.y
        if X.shape[1] == 0:
            raise DataError("need at least one feature column besides the target")
        init = models.GpHypers(1.0, 1.0, 0.5)
        if args.model == "gp":
            return models.gp_graph(X, y), init.raw(), X, y
        if not 1 <= args.inducing <= len(X):
            raise UsageError(f"--inducing must be between 1 and {len(X)}")
        Z = X[np.sort(rng.choice(len(X), args.inducing, replace=False))]
        return models.sgp_graph(X, y), models.SgpState(init, Z).raw(), X, y
    if args.model == "blr":
        if data.X.shape[1] == 0:
            raise DataError("need at least one feature column besides the target")
        return models.blr_graph(data.X.T, data.y, path=args.path), models.BlrHypers(1.0, 1.0).raw(), data.X, data.y
    V = data.X
    h, v = args.hidden, V.shape[1]
    if h < 1:
        raise UsageError("--hidden must be >= 1")
    init = models.LdsParams.from_covariances(0.5 * np.eye(h), 0.5 * rng.standard_normal((v, h)) + np.eye(v, h),
                                             np.eye(h), np.eye(v), np.zeros(h), np.eye(h))
    return models.kalman_graph(V), init.raw(), V, None


def cmd_fit(args, out) -> int:
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    if not os.path.exists(args.data):
        raise DataError(f"{args.data}: no such file")
    data = models.load_csv(args.data, target=None if args.model == "kalman" else -1,
                           normalize=not args.no_normalize)
    build, init, X, y = _fit_setup(args, data)
    res = models.fit(build, init, steps=args.steps, lr=args.lr)
    with open(args.trace, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "criterion"])
        w.writerows((i, repr(v)) for i, v in enumerate(res.losses))
    summary = {"model": args.model, "initial": res.initial, "final": res.final,
               "params": {k: np.asarray(v).tolist() for k, v in res.params.items()}}
    if args.model == "sgp":
        full = models.gp_graph(X, y)
        summary["gp_criterion_at_fit"] = models.evaluate(
            full, {k: v for k, v in res.params.items() if k != "inducing"}, grad=False)[0]
    if args.model in ("gp", "sgp"):
        summary["hypers"] = vars(models.GpHypers.from_raw(res.params))
    elif args.model == "blr":
        summary["hypers"] = vars(models.BlrHypers.from_raw(res.params))
    else:
        Sh, Sv, S0 = models.LdsParams.from_raw(res.params).covariances()
        summary["covariances"] = {"Sh": Sh.tolist(), "Sv": Sv.tolist(), "S0": S0.tolist()}
    with open(args.params, "w") as fh:
        json.dump(summary, fh, indent=2)
    if args.figure:
        loss_figure(res.losses, args.figure, title=f"{args.model} fit")
    print(f"initial={res.initial:.6g} final={res.final:.6g} steps={args.steps}", file=out)
    return EXIT_OK


COMMANDS = {"gradcheck": cmd_gradcheck, "bench": cmd_bench, "fit": cmd_fit}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    # list options accept "a b" as well as "a,b"
    for name in ("ops", "shapes", "sizes"):
        val = getattr(args, name, None)
        if val and isinstance(val[0], list):
            setattr(args, name, [x for part in val for x in part])
    try:
        with kernels.use_backend(args.backend):
            return COMMANDS[args.command](args, out)
    except (UsageError, DataError, FileNotFoundError) as e:
        print(f"difflinalg {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except LinalgError as e:
        print(f"difflinalg {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
