"""Command-line experiment harness.

Exit codes: 0 success, 1 input error, 2 the fit hit ``--max-iter`` without converging.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import report
from .core import ClusterCapError, DegenerateLambdaError, PypParams, estimate_lambda, fit
from .datagen import SynthSpec, generate
from .dataset import Dataset, DatasetError, load_csv, normalize, save_csv
from .spectral import EigenError, spectral_fit
from .urn import UrnConfig, simulate

log = logging.getLogger("pypmeans")

EXIT_OK, EXIT_INPUT, EXIT_NOCONV = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def worker_count() -> int:
    raw = os.environ.get("PYP_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise InputError(f"PYP_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load(args) -> Dataset:
    ds = load_csv(args.input, args.labels)
    return ds if args.no_normalize else normalize(ds)


def _resolve_params(args, ds: Dataset) -> PypParams:
    common = dict(
        max_iter=args.max_iter, tol=args.tol, seed=args.seed,
        agglomeration=not args.no_agglomeration, alg1_offset=args.alg1_offset,
    )
    if args.variant == "kmeans":
        if args.k is None:
            raise InputError("--variant kmeans needs --k")
        return PypParams(variant="kmeans", fixed_c=args.k, **common)
    lam = args.lam
    if lam is None:
        if args.estimate_c is None:
            raise InputError("give --lambda or --estimate-c")
        lam, _ = estimate_lambda(ds, args.estimate_c, args.theta_ratio)
    theta = args.theta if args.theta is not None else lam / args.theta_ratio
    return PypParams(lam=lam, theta=theta, variant=args.variant, **common)


def _outdir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_cluster(args) -> int:
    ds = _load(args)
    params = _resolve_params(args, ds)
    result = fit(ds, params)
    out = _outdir(args)
    report.write_assignments(result.state.assignments, out / "assignments.csv")
    record = report.run_record(params, ds, result, args.input,
                               extra={"theta_ratio": args.theta_ratio, "estimate_c": args.estimate_c})
    report.write_record(record, out / "record.txt")
    log.info("c=%d objective=%.6g iterations=%d converged=%s",
             result.state.c, result.objective, result.iterations, result.converged)
    return EXIT_OK if result.converged else EXIT_NOCONV


def cmd_spectral(args) -> int:
    ds = _load(args)
    if args.lam is None:
        raise InputError("spectral needs --lambda (eigenvalue scale)")
    theta = args.theta if args.theta is not None else args.lam / args.theta_ratio
    result = spectral_fit(ds, args.lam, theta, kind=args.kernel, sigma=args.sigma, seed=args.seed)
    out = _outdir(args)
    report.write_assignments(result.state.assignments, out / "assignments.csv")
    extra = {"variant": "spectral", "lambda": args.lam, "theta": theta, "kernel": args.kernel,
             "sigma": args.sigma, "seed": args.seed}
    report.write_record(report.run_record(None, ds, result, args.input, extra=extra), out / "record.txt")
    return EXIT_OK if result.converged else EXIT_NOCONV


def cmd_urn(args) -> int:
    cfg = UrnConfig(args.lambda_raw, args.theta_raw, args.epsilon, args.n_draws, args.seed)
    trace = simulate(cfg)
    out = _outdir(args)
    with (out / "sizes.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["color", "size"])
        for k, s in enumerate(trace.sizes, start=1):
            w.writerow([k, int(s)])
    sizes, counts = np.unique(trace.sizes, return_counts=True)
    with (out / "histogram.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "count"])
        for s, n in zip(sizes, counts):
            w.writerow([int(s), int(n)])
    record = {
        "params": {"lambda_raw": cfg.lambda_raw, "theta_raw": cfg.theta_raw, "epsilon": cfg.epsilon,
                   "n_draws": cfg.n_draws, "seed": cfg.seed},
        "result": {"c": int(trace.sizes.size), "alpha_hat": report.alpha_hat(trace.sizes)},
    }
    report.write_record(record, out / "record.txt")
    return EXIT_OK


def cmd_datagen(args) -> int:
    spec = SynthSpec(c=args.c, d=args.d, big_size=args.big_size, small_size=args.small_size,
                     n_big=args.n_big, center_box=args.center_box, seed=args.seed,
                     min_center_dist=args.min_center_dist)
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(generate(spec), path)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ds = load_csv(args.input, args.labels)
    if ds.labels is None:
        raise InputError("evaluate needs --labels")
    pred = report.read_assignments(args.assignments)
    if pred.size != ds.n:
        raise InputError(f"{args.assignments}: {pred.size} assignments for {ds.n} points")
    text = report.format_record({"metrics": report.evaluate(ds.labels, pred)})
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


SWEEP_COLUMNS = ["variant", "true_c", "lambda", "theta_ratio", "repeats",
                 "lambda_mean", "c_mean", "c_std", "dr_mean", "dr_std",
                 "nmi_mean", "nmi_std", "acc_mean", "acc_std", "converged_frac"]


def _sweep_run(task):
    """One fit; top-level so worker processes can import it."""
    variant, source, lam, ratio, seed, opts = task
    if source[0] == "gen":
        ds = normalize(generate(SynthSpec(c=source[1], seed=seed)))
    else:
        ds = source[1]
    if variant == "kmeans":
        true_c = int(np.unique(ds.labels).size) if ds.labels is not None else opts["k"]
        params = PypParams(variant="kmeans", fixed_c=opts["k"] or true_c, seed=seed,
                           max_iter=opts["max_iter"])
        lam_used = float("nan")
    else:
        if lam is None:
            rough = source[1] if source[0] == "gen" else opts["estimate_c"]
            lam_used, theta = estimate_lambda(ds, rough, ratio)
        else:
            lam_used, theta = lam, lam / ratio
        params = PypParams(lam=lam_used, theta=theta, variant=variant, seed=seed,
                           agglomeration=opts["agglomeration"], alg1_offset=opts["alg1_offset"],
                           max_iter=opts["max_iter"])
    res = fit(ds, params)
    row = {"lambda": lam_used, "c": res.state.c, "converged": res.converged}
    if ds.labels is not None:
        row.update(report.evaluate(ds.labels, res.state.assignments, res.state.sizes))
    return row


def cmd_sweep(args) -> int:
    if args.input is None and not args.gen_c:
        raise InputError("sweep needs --input or --gen-c")
    lambdas: list[Optional[float]] = list(args.lambdas or [])
    if args.estimate:
        lambdas.append(None)
    variants = [v for v in args.variants.split(",") if v]
    if not lambdas and "kmeans" not in variants:
        raise InputError("empty grid: give --lambdas and/or --estimate")
    for v in variants:
        if v not in ("pyp", "dp", "kmeans"):
            raise InputError(f"unknown variant {v!r}")
    if args.input is not None:
        ds = _load(args)
        if args.estimate and args.estimate_c is None:
            raise InputError("--estimate on --input needs --estimate-c")
        sources = [("file", ds)]
    else:
        sources = [("gen", c) for c in args.gen_c]
    if args.repeats < 1:
        raise InputError("--repeats must be >= 1")

    opts = {"k": args.k, "estimate_c": args.estimate_c, "agglomeration": not args.no_agglomeration,
            "alg1_offset": args.alg1_offset, "max_iter": args.max_iter}
    cells = []
    for source in sources:
        for variant in variants:
            for lam in ([None] if variant == "kmeans" else lambdas):
                cells.append((variant, source, lam))
    if not cells:
        raise InputError("empty grid")
    tasks = [(v, s, lam, args.theta_ratio, args.seed + r, opts)
             for v, s, lam in cells for r in range(args.repeats)]

    workers = min(worker_count(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_run, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        rows = [_sweep_run(t) for t in tasks]

    out = _outdir(args)
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for ci, (variant, source, lam) in enumerate(cells):
            chunk = rows[ci * args.repeats:(ci + 1) * args.repeats]
            true_c = source[1] if source[0] == "gen" else (
                chunk[0].get("true_c") if "true_c" in chunk[0] else "")

            def stat(key):
                vals = [r[key] for r in chunk if key in r]
                if not vals:
                    return ["", ""]
                return [repr(float(np.mean(vals))), repr(float(np.std(vals)))]

            lam_vals = [r["lambda"] for r in chunk]
            w.writerow([
                variant, true_c,
                "kmeans" if variant == "kmeans" else ("est" if lam is None else repr(lam)),
                repr(float(args.theta_ratio)), args.repeats,
                repr(float(np.mean(lam_vals))),
                *stat("c"), *stat("discovery_rate"), *stat("nmi"), *stat("acc"),
                repr(float(np.mean([r["converged"] for r in chunk]))),
            ])
    return EXIT_OK


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV file")
    p.add_argument("--labels", default=None, help="label column name, or 'last'")
    p.add_argument("--no-normalize", action="store_true", help="skip [0, 1] feature scaling")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--theta-ratio", type=float, default=10.0, help="theta = lambda / ratio when --theta is absent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=".")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pypmeans", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cluster", help="run pyp-means / dp-means / k-means")
    _add_fit_flags(p)
    p.add_argument("--estimate-c", type=int, default=None, help="rough cluster count for lambda estimation")
    p.add_argument("--variant", choices=["pyp", "dp", "kmeans"], default="pyp")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--no-agglomeration", action="store_true")
    p.add_argument("--alg1-offset", action="store_true")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("spectral", help="spectral variant on a kernel of the data")
    _add_fit_flags(p)
    p.add_argument("--kernel", choices=["rbf", "linear"], default="rbf")
    p.add_argument("--sigma", type=float, default=None, help="rbf width; median pairwise distance if absent")
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("urn", help="simulate the modified Polya urn")
    p.add_argument("--lambda-raw", type=float, default=1.0)
    p.add_argument("--theta-raw", type=float, default=0.0)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--n-draws", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=cmd_urn)

    p = sub.add_parser("datagen", help="write a synthetic power-law Gaussian mixture")
    p.add_argument("--c", type=int, required=True)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--big-size", type=int, default=200)
    p.add_argument("--small-size", type=int, default=30)
    p.add_argument("--n-big", type=int, default=2)
    p.add_argument("--center-box", type=float, default=20.0)
    p.add_argument("--min-center-dist", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("evaluate", help="score an assignments file against labels")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", default="last")
    p.add_argument("--assignments", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="aggregate metrics over a lambda / cluster-count grid")
    p.add_argument("--input", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--gen-c", type=_int_list, default=None, help="generated cluster counts, e.g. 3,10,30,50")
    p.add_argument("--lambdas", type=_float_list, default=None, help="e.g. 0.05,0.1,0.2")
    p.add_argument("--estimate", action="store_true", help="add a cell with lambda from furthest-first estimation")
    p.add_argument("--estimate-c", type=int, default=None)
    p.add_argument("--theta-ratio", type=float, default=10.0)
    p.add_argument("--variants", default="pyp,dp")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--no-agglomeration", action="store_true")
    p.add_argument("--alg1-offset", action="store_true")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, DatasetError, DegenerateLambdaError, ClusterCapError, EigenError,
            ValueError, OSError) as exc:
        print(f"pypmeans: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
