"""``pqii`` command line: gen, fit, encode, build, query, bench, report."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import bench as bench_mod
from .dataset import SyntheticSpec, gen_synthetic, load_matrix, save_matrix
from .ivf import default_nlist, ivf_build, load_index, save_index
from .kmeans import DEFAULT_MAX_ITERS
from .pipeline import MODES
from .pq import (
    load_codebook,
    load_codes,
    pq_decode,
    pq_encode,
    pq_fit,
    rmse,
    save_codebook,
    save_codes,
)
from .report import write_report

THREADS_ENV = "PQII_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(2)


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _int_list(text: str) -> list[int]:
    return [_positive(t) for t in text.split(",") if t.strip()]


def resolve_threads(flag: int | None) -> int:
    """``--threads`` wins, then ``PQII_THREADS``, then the logical core count."""
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            v = int(env)
        except ValueError:
            v = 0
        if v < 1:
            raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return v
    return os.cpu_count() or 1


# -- commands ----------------------------------------------------------------


def cmd_gen(args) -> None:
    spec = SyntheticSpec(args.rows, args.dims, args.clusters, args.spread, args.seed)
    data = gen_synthetic(spec)
    save_matrix(data, args.out)
    print(f"{args.out}\t{data.shape[0]}x{data.shape[1]}")


def cmd_fit(args) -> None:
    data = load_matrix(args.data)
    cb = pq_fit(data, args.m, args.ks, max_iters=args.iters, seed=args.seed)
    save_codebook(cb, args.out)
    print(f"{args.out}\tM={cb.m} Ks={cb.ks} Ds={cb.sub_dim}")


def cmd_encode(args) -> None:
    data = load_matrix(args.data)
    cb = load_codebook(args.codebook)
    codes = pq_encode(cb, data)
    save_codes(codes, cb.ks, args.out)
    print(f"rmse\t{rmse(data, pq_decode(cb, codes)):.9g}")


def cmd_build(args) -> None:
    cb = load_codebook(args.codebook)
    codes, ks = load_codes(args.codes)
    if ks != cb.ks:
        raise UsageError(f"codes were made with Ks={ks}, codebook has Ks={cb.ks}")
    nlist = args.nlist if args.nlist is not None else default_nlist(len(codes))
    if nlist > len(codes):
        raise UsageError(f"--nlist {nlist} exceeds item count {len(codes)}")
    index = ivf_build(cb, codes, np.arange(len(codes)), nlist, seed=args.seed, max_iters=args.iters)
    save_index(index, args.out)
    print(f"{args.out}\tnlist={index.nlist} items={index.n_items}")


def cmd_query(args) -> None:
    index = load_index(args.index)
    nprobe = args.nprobe if args.nprobe is not None else min(8, index.nlist)
    if nprobe > index.nlist:
        raise UsageError(f"--nprobe {nprobe} exceeds nlist {index.nlist}")
    queries = load_matrix(args.queries)
    rows = range(len(queries)) if args.row is None else [args.row]
    if args.row is not None and not 0 <= args.row < len(queries):
        raise UsageError(f"--row {args.row} out of range [0, {len(queries)})")
    subset = None
    if args.subset:
        subset = np.array(sorted({int(t) for t in args.subset.split(",")}), dtype=np.uint64)
    for i in rows:
        if len(rows) > 1:
            print(f"# query {i}")
        res = index.query(queries[i], args.k, nprobe, subset=subset, threshold=args.threshold)
        for id_, dist in res.hits:
            print(f"{id_}\t{dist:.9g}")


def cmd_bench(args) -> None:
    data = load_matrix(args.data)
    ms, kss = args.m, args.ks
    if args.sweep == "subspace":
        ms = bench_mod.SWEEPS["subspace"]["m"]
    elif args.sweep == "codesize":
        kss = bench_mod.SWEEPS["codesize"]["ks"]
    threads = args.threads_list or [resolve_threads(args.threads)]
    rows = bench_mod.run_bench(
        data, modes=args.modes, ms=ms, kss=kss, chunks=args.chunks, threads=threads,
        seeds=args.seeds, seed=args.seed, nlist=args.nlist, iters=args.iters, phases=args.phases,
    )
    if args.out:
        bench_mod.write_csv(rows, args.out, append=args.append)
        print(f"{args.out}\t{len(rows)} rows")
    else:
        bench_mod.write_csv(rows, sys.stdout)


def cmd_report(args) -> None:
    rows = bench_mod.read_csv(args.csv)
    for path in write_report(rows, args.out):
        print(path)


# -- parser ------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, default) -> None:
    parser.add_argument("--seed", type=int, default=default, help="random seed (default 0)")
    parser.add_argument("--threads", type=_positive, default=default,
                        help=f"worker threads (default ${THREADS_ENV} or core count)")
    parser.add_argument("--verbose", "-v", action="store_true", default=default)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pqii", description=__doc__)
    _global_flags(p, argparse.SUPPRESS)
    p.set_defaults(seed=0, threads=None, verbose=False)
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps subcommand defaults from clobbering flags given before the subcommand
    _global_flags(common, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--rows", type=_positive, required=True)
    g.add_argument("--dims", type=_positive, required=True)
    g.add_argument("--clusters", type=_positive, default=64)
    g.add_argument("--spread", type=float, default=1.0)
    g.add_argument("--out", required=True, help=".fvecs or native matrix path")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", parents=[common], help="train a PQ codebook")
    f.add_argument("--data", required=True)
    f.add_argument("--m", type=_positive, default=8)
    f.add_argument("--ks", type=_positive, default=256)
    f.add_argument("--iters", type=_positive, default=DEFAULT_MAX_ITERS)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("encode", parents=[common], help="encode data, report reconstruction RMSE")
    e.add_argument("--data", required=True)
    e.add_argument("--codebook", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    b = sub.add_parser("build", parents=[common], help="build an inverted index from codes")
    b.add_argument("--codes", required=True)
    b.add_argument("--codebook", required=True)
    b.add_argument("--nlist", type=_positive, default=None)
    b.add_argument("--iters", type=_positive, default=DEFAULT_MAX_ITERS)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("query", parents=[common], help="top-k search; prints id<TAB>distance")
    q.add_argument("--index", required=True)
    q.add_argument("--queries", required=True, help="matrix file holding query vectors")
    q.add_argument("--row", type=int, default=None, help="only query this row")
    q.add_argument("--k", type=_positive, default=10)
    q.add_argument("--nprobe", type=_positive, default=None)
    q.add_argument("--subset", default=None, help="comma-separated ids to restrict the search to")
    q.add_argument("--threshold", type=float, default=None, help="max squared distance")
    q.set_defaults(func=cmd_query)

    bb = sub.add_parser("bench", parents=[common], help="run the case studies, emit CSV")
    bb.add_argument("--data", required=True)
    bb.add_argument("--modes", type=lambda s: s.split(","), default=list(MODES))
    bb.add_argument("--m", type=_int_list, default=[8])
    bb.add_argument("--ks", type=_int_list, default=[256])
    bb.add_argument("--chunks", type=_int_list, default=[16])
    bb.add_argument("--threads-list", type=_int_list, default=None,
                    help="comma-separated thread counts (overrides --threads)")
    bb.add_argument("--nlist", type=_positive, default=None)
    bb.add_argument("--iters", type=_positive, default=DEFAULT_MAX_ITERS)
    bb.add_argument("--seeds", type=_positive, default=1, help="seeds per point; medians reported")
    bb.add_argument("--sweep", choices=sorted(bench_mod.SWEEPS), default=None)
    bb.add_argument("--phases", action="store_true", help="also emit one row per phase")
    bb.add_argument("--out", default=None, help="CSV path (default stdout)")
    bb.add_argument("--append", action="store_true")
    bb.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", parents=[common], help="render bench CSV as SVG charts")
    r.add_argument("--csv", required=True)
    r.add_argument("--out", required=True, help="output prefix; writes PREFIX-<chart>.svg")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "bench":
        for mode in args.modes:
            if mode not in MODES:
                parser.error(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
