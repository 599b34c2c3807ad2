"""Batch command line: build-index, simulate, denoise, evaluate.

Exit codes: 0 success, 2 bad usage, 3 unreadable or unwritable file,
4 inconsistent parameters or input, 5 invalid index file, 1 anything else.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import imageio
from .core import add_poisson_noise, as_intensity_image
from .denoiser import DenoiseParams
from .indexer import IndexFormatError, build_index, ingest_corpus, load_index, save_index
from .pipeline import denoise_image, evaluate

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARAMS = 4
EXIT_INDEX = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _nonnegative_float(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return value


def _search_flags(p):
    p.add_argument("--window", "-M", type=_positive_int, default=10,
                   help="convergence window in queue pops")
    p.add_argument("--epsilon", type=_nonnegative_float, default=1e-12,
                   help="relative change of the weight sum that counts as converged")
    p.add_argument("--exhaustive", action="store_true",
                   help="visit every cluster (slow, exact)")
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="denoising threads (default: all available)")


def make_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="poisson-mmse", formatter_class=fmt,
                     description="Poisson denoising by MMSE estimation over a clustered patch prior.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-index", formatter_class=fmt,
                       help="cluster clean patches and build the search structures")
    p.add_argument("--input", nargs="+", required=True, metavar="IMAGE",
                   help="clean PGM/PFM images (directories are scanned for *.pgm, *.pfm)")
    p.add_argument("--output", required=True, help="index file to write")
    p.add_argument("--side", type=_positive_int, default=14, help="patch side in pixels")
    p.add_argument("--clusters", type=_positive_int, default=10**6, help="number of clusters N_C")
    p.add_argument("--neighbors", "-K", type=_positive_int, default=None,
                   help="K-NN graph degree (default: 2 * side**2)")
    p.add_argument("--trees", type=_positive_int, default=64, help="number of k-d trees")
    p.add_argument("--leaf-size", type=_positive_int, default=32, help="k-d tree leaf size")
    p.add_argument("--cap", type=_positive_int, default=None,
                   help="random subsample of at most this many patches")
    p.add_argument("--max-iters", type=_positive_int, default=30, help="k-means rounds")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", formatter_class=fmt,
                       help="draw a Poisson count image from a clean image")
    p.add_argument("--input", required=True, help="clean PGM/PFM image")
    p.add_argument("--peak", type=_positive_float, required=True,
                   help="peak intensity after rescaling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="noisy.pgm", help="16-bit PGM to write")

    p = sub.add_parser("denoise", formatter_class=fmt, help="denoise a count image")
    p.add_argument("--index", required=True)
    p.add_argument("--input", required=True, help="noisy count PGM")
    p.add_argument("--output", default="denoised.pfm", help="PFM to write")
    p.add_argument("--pgm-output", default=None,
                   help="also write the rounded result as PGM here")
    _search_flags(p)

    p = sub.add_parser("evaluate", formatter_class=fmt,
                       help="PSNR of noisy vs denoised images over noise realizations")
    p.add_argument("--clean", required=True, help="clean PGM/PFM image")
    p.add_argument("--index", required=True)
    p.add_argument("--peaks", type=_positive_float, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--realizations", type=_positive_int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="report.csv", help="CSV report to write")
    _search_flags(p)
    return parser


def _expand_inputs(paths):
    out = []
    for path in paths:
        if os.path.isdir(path):
            out.extend(sorted(os.path.join(path, f) for f in os.listdir(path)
                              if f.lower().endswith((".pgm", ".pfm"))))
        else:
            out.append(path)
    return out


def _params(args) -> DenoiseParams:
    return DenoiseParams(args.window, args.epsilon, args.exhaustive)


def _build_index(args):
    sources = _expand_inputs(args.input)
    corpus = ingest_corpus(sources, args.side, cap=args.cap, seed=args.seed)
    if args.clusters > len(corpus):
        raise ValueError(f"--clusters {args.clusters} exceeds the {len(corpus)} corpus patches")
    k = args.neighbors if args.neighbors is not None else 2 * args.side ** 2
    if k >= args.clusters:
        raise ValueError(f"K = {k} must be smaller than N_C = {args.clusters}")
    index = build_index(corpus, args.clusters, k=k, n_trees=args.trees,
                        leaf_size=args.leaf_size, seed=args.seed, max_iters=args.max_iters)
    save_index(index, args.output)
    print(f"wrote {args.output}: {index.n_clusters} clusters from {len(corpus)} patches")


def _simulate(args):
    clean = as_intensity_image(imageio.read_image(args.input))
    counts = add_poisson_noise(clean, args.peak, args.seed)
    imageio.write_counts_pgm(args.output, counts)
    print(f"wrote {args.output}")


def _denoise(args):
    index = load_index(args.index)
    noisy = imageio.read_pgm(args.input)
    out, info = denoise_image(noisy, index, _params(args), args.workers, full_output=True)
    imageio.write_pfm(args.output, out)
    if args.pgm_output:
        imageio.write_pgm(args.pgm_output, np.rint(out).astype(np.int64))
    print(f"wrote {args.output} ({info['fallbacks']} fallback patches)")


def _evaluate(args):
    clean = as_intensity_image(imageio.read_image(args.clean))
    index = load_index(args.index)
    name = os.path.splitext(os.path.basename(args.clean))[0]
    report = evaluate(clean, index, args.peaks, args.realizations, args.seed,
                      _params(args), name=name, workers=args.workers)
    imageio.atomic_write_bytes(args.output, report.to_csv().encode("utf-8"))
    print(report.to_table())


_COMMANDS = {
    "build-index": _build_index,
    "simulate": _simulate,
    "denoise": _denoise,
    "evaluate": _evaluate,
}


def run_cli(argv=None) -> int:
    """Parse ``argv`` and run one subcommand; returns the exit code."""
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except IndexFormatError as exc:
        return _fail(EXIT_INDEX, f"invalid index: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"{exc.filename or ''}: {exc.strerror or exc}".lstrip(": "))
    except ValueError as exc:
        return _fail(EXIT_PARAMS, str(exc))
    except Exception as exc:  # noqa: BLE001 - last-resort one-line diagnostic
        return _fail(EXIT_FAILURE, f"{type(exc).__name__}: {exc}")
    return EXIT_OK


def _fail(code: int, message: str) -> int:
    print(f"poisson-mmse: error: {message}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run_cli())
