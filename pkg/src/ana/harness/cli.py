"""Command line entry point ``ana``.

Exit codes: 0 ok, 1 config error, 2 numeric failure, 3 tolerance violation.
``ANA_THREADS`` caps the BLAS/OpenMP worker count.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .. import noise as nz
from ..engine import checkpoint
from ..engine.network import evaluate_quantized
from ..engine.optim import DivergenceError
from .config import ConfigError, load_config
from .data import DataFormatError, load_cifar_binary, load_idx, load_mnist, synth_lipschitz
from .experiment import run_experiment
from .oracles import STAIRCASES, oracle_check

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 1, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else Path(args.config).with_suffix("")
    result = run_experiment(cfg, out)
    print(f"final quantized val accuracy {result.final_quantized_accuracy:.4f}")
    print(f"wrote {out / 'metrics.csv'} and {out / 'model.ana'}")
    return EXIT_OK


def _cmd_check(args) -> int:
    params = {}
    if args.kind in ("smoothing", "derivative", "lipschitz"):
        if args.family:
            params["families"] = args.family
        if args.sigma:
            params["sigmas"] = args.sigma
        if args.kind == "smoothing":
            params["n"] = args.n
        if args.tol is not None:
            params["slack" if args.kind == "lipschitz" else "tol"] = args.tol
    elif args.kind == "gradient":
        params.update(seed=args.seed, h=args.h)
        if args.tol is not None:
            params["tol"] = args.tol
    else:
        params.update(target=args.target, epsilon=args.eps, lam=args.lam, n_samples=args.samples)
        if args.tol is not None:
            params["tol"] = args.tol
    rep = oracle_check(args.kind, **params)
    print(rep.format())
    return EXIT_OK if rep.ok else EXIT_TOLERANCE


def _load_any(spec: str, args):
    p = Path(spec)
    if p.is_dir():
        return load_mnist(p, args.split)
    if p.exists():
        if args.labels:
            return load_idx(p, args.labels, args.mean, args.std)
        return load_cifar_binary(p)
    try:
        return synth_lipschitz(spec, args.n, args.seed)
    except ValueError as e:
        raise ConfigError(f"dataset {spec!r} is neither a path nor a generator: {e}") from None


def _cmd_infer(args) -> int:
    net, epoch = checkpoint.load(args.checkpoint)
    ds = _load_any(args.dataset, args)
    if ds.x.ndim == 3 and net.layers[0].linear.kind == "dense":
        ds.x = ds.x.reshape(len(ds.x), -1)
    acc = evaluate_quantized(net, ds.x, ds.y)
    print(f"checkpoint epoch {epoch}; {len(ds)} samples; quantized accuracy {acc:.4f}")
    return EXIT_OK


def _cmd_export_curves(args) -> int:
    f = STAIRCASES[args.quantizer]()
    xs = np.linspace(-args.lim, args.lim, args.points)
    cols, data = ["x"], [xs]
    for s in args.sigmas:
        m = nz.NoiseModel.make(args.family, s)
        cols += [f"value_s{s:g}", f"deriv_s{s:g}"]
        data.append(nz.smoothed_eval(f, m, xs))
        data.append(nz.smoothed_derivative(f, m, xs) if not m.is_delta else np.full_like(xs, np.nan))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*data):
            w.writerow([repr(float(v)) for v in row])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ana", description="Quantized networks trained with additive noise annealing.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: config path without suffix)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("check", help="run an oracle suite")
    p.add_argument("kind", choices=["smoothing", "derivative", "lipschitz", "gradient", "approximation"])
    p.add_argument("--family", action="append", choices=["uniform", "gaussian", "triangular"])
    p.add_argument("--sigma", action="append", type=float)
    p.add_argument("--n", type=int, default=1_000_000, help="quadrature nodes")
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--target", default="identity", choices=["identity", "mean2", "sine"])
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=10_000)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("infer", help="quantized inference accuracy of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset", help="MNIST directory, IDX images file (with --labels), CIFAR .bin, or generator name")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--labels")
    p.add_argument("--mean", type=float, default=0.1307)
    p.add_argument("--std", type=float, default=0.3081)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("export-curves", help="smoothed staircase and derivative as CSV")
    p.add_argument("family", choices=list(nz.FAMILIES))
    p.add_argument("sigmas", type=_floats, help="comma-separated sigma values")
    p.add_argument("--quantizer", default="ternary", choices=sorted(STAIRCASES))
    p.add_argument("--points", type=int, default=1201)
    p.add_argument("--lim", type=float, default=3.0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_export_curves)
    return ap


def _run(args) -> int:
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, checkpoint.CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, FloatingPointError, nz.DegenerateNoiseError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = os.environ.get("ANA_THREADS")
    if threads:
        try:
            limit = int(threads)
        except ValueError:
            print(f"error: ANA_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return EXIT_CONFIG
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=limit):
            return _run(args)
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
