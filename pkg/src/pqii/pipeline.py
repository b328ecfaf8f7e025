"""Chunked-parallel PQ training and index construction.

The data is split row-wise into chunks. Each chunk gets its own local PQ
model; every local model returns only its ``Ks`` decoded codeword rows.
Those rows from all chunks form a small representative dataset on which a
global PQ model is trained, and the global model then encodes the full
original data. Optionally the encoded chunks are filed into per-chunk
inverted indexes sharing one set of coarse centroids and merged.

Three modes are supported:

``single``
    one ``pq_fit`` over the full data, no parallelism.
``parallel_pq``
    local fits run on a pool of ``n_threads`` workers; encode is serial.
``parallel_pq_index``
    as above, plus parallel per-chunk encode and index build, then merge.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence, TypeVar

import numpy as np

from .dataset import RowRange, as_matrix, chunk_rows
from .ivf import InvertedIndex, default_nlist, merge_all
from .kmeans import DEFAULT_MAX_ITERS, DEFAULT_TOL, kmeans_fit
from .pq import Codebook, pq_decode, pq_encode, pq_fit, reconstruction_rmse, rmse

__all__ = [
    "MODES",
    "PipelineError",
    "PipelineConfig",
    "ChunkOutput",
    "PipelineReport",
    "train_chunk",
    "aggregate_representatives",
    "fit_global",
    "run_pipeline",
    "build_index_serial",
]

log = logging.getLogger(__name__)

MODES = ("single", "parallel_pq", "parallel_pq_index")

T = TypeVar("T")
R = TypeVar("R")


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    n_chunks: int = 1
    m: int = 8
    ks: int = 256
    nlist: int | None = None
    kmeans_iters: int = DEFAULT_MAX_ITERS
    seed: int = 0
    n_threads: int = 1
    mode: str = "parallel_pq"
    tol: float = DEFAULT_TOL
    compare_single: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise PipelineError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_chunks < 1:
            raise PipelineError(f"n_chunks must be >= 1, got {self.n_chunks}")
        if self.n_threads < 1:
            raise PipelineError(f"n_threads must be >= 1, got {self.n_threads}")
        if self.kmeans_iters < 1:
            raise PipelineError(f"kmeans_iters must be >= 1, got {self.kmeans_iters}")


@dataclass(frozen=True)
class ChunkOutput:
    chunk_id: int
    representatives: np.ndarray  # (Ks, D) decoded local codewords
    local_rmse: float
    wall_time: float
    codebook: Codebook | None = field(default=None, repr=False)


@dataclass
class PipelineReport:
    config: PipelineConfig
    global_codebook: Codebook
    global_rmse: float
    phase_timings: dict[str, float]
    single_rmse: float | None = None
    codes: np.ndarray | None = field(default=None, repr=False)
    coarse_centroids: np.ndarray | None = field(default=None, repr=False)
    index: InvertedIndex | None = field(default=None, repr=False)
    chunk_outputs: list[ChunkOutput] = field(default_factory=list, repr=False)
    n_rows: int = 0
    n_dims: int = 0

    @property
    def total_seconds(self) -> float:
        return sum(v for k, v in self.phase_timings.items() if k != "single_reference")

    def seconds(self, *phases: str) -> float:
        return sum(self.phase_timings.get(p, 0.0) for p in phases)

    def summary(self) -> str:
        c = self.config
        lines = [
            f"mode            {c.mode}",
            f"data            {self.n_rows} x {self.n_dims}",
            f"M / Ks          {c.m} / {c.ks}",
            f"chunks/threads  {c.n_chunks} / {c.n_threads}",
            f"global rmse     {self.global_rmse:.6f}",
        ]
        if self.single_rmse is not None:
            ratio = self.global_rmse / self.single_rmse if self.single_rmse > 0 else float("nan")
            lines.append(f"single rmse     {self.single_rmse:.6f}  (ratio {ratio:.4f})")
        if self.index is not None:
            lines.append(f"index           nlist={self.index.nlist} items={self.index.n_items}")
        for name, secs in self.phase_timings.items():
            lines.append(f"  {name:<16}{secs:10.3f} s")
        lines.append(f"  {'total':<16}{self.total_seconds:10.3f} s")
        return "\n".join(lines)


class _Timer:
    def __init__(self):
        self.phases: dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0


def _run_chunk_tasks(fn: Callable[[int, T], R], items: Sequence[T], n_threads: int) -> list[R]:
    """Run ``fn(chunk_id, item)`` for every item; results in chunk order.

    The first failure cancels tasks that have not started and is re-raised
    as a :class:`PipelineError` naming the chunk.
    """
    if n_threads == 1 or len(items) == 1:
        out = []
        for cid, item in enumerate(items):
            try:
                out.append(fn(cid, item))
            except Exception as exc:
                raise PipelineError(f"chunk {cid} failed: {exc}") from exc
        return out

    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        futures = {pool.submit(fn, cid, item): cid for cid, item in enumerate(items)}
        done, pending = wait(futures, return_when=FIRST_EXCEPTION)
        failed = sorted(
            (futures[f], f.exception()) for f in done if f.exception() is not None
        )
        if failed:
            for f in pending:
                f.cancel()
            cid, exc = failed[0]
            raise PipelineError(f"chunk {cid} failed: {exc}") from exc
        results = {futures[f]: f.result() for f in futures}
    return [results[cid] for cid in range(len(items))]


def _codeword_rows(codebook: Codebook) -> np.ndarray:
    j = np.arange(codebook.ks)
    return pq_decode(codebook, np.repeat(j[:, None], codebook.m, axis=1))


def train_chunk(
    chunk: np.ndarray,
    m: int,
    ks: int,
    iters: int = DEFAULT_MAX_ITERS,
    chunk_seed: int = 0,
    chunk_id: int = 0,
    tol: float = DEFAULT_TOL,
) -> ChunkOutput:
    """Fit a local PQ model on one chunk and return its decoded codewords."""
    t0 = time.perf_counter()
    if chunk.shape[0] < ks:
        raise PipelineError(f"chunk {chunk_id} has {chunk.shape[0]} rows, fewer than Ks={ks}")
    cb = pq_fit(chunk, m, ks, max_iters=iters, seed=chunk_seed, tol=tol)
    reps = _codeword_rows(cb)
    local = reconstruction_rmse(cb, chunk)
    return ChunkOutput(chunk_id, reps, local, time.perf_counter() - t0, cb)


def aggregate_representatives(outputs: Sequence[ChunkOutput]) -> np.ndarray:
    if not outputs:
        raise PipelineError("no chunk outputs to aggregate")
    ordered = sorted(outputs, key=lambda o: o.chunk_id)
    dims = {o.representatives.shape[1] for o in ordered}
    if len(dims) != 1:
        raise PipelineError(f"chunk outputs disagree on dimension: {sorted(dims)}")
    return np.concatenate([o.representatives for o in ordered], axis=0)


def fit_global(
    representatives: np.ndarray,
    m: int,
    ks: int,
    iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> Codebook:
    """Train the global PQ model on the aggregated representative rows."""
    reps = as_matrix(representatives, name="representatives")
    if reps.shape[1] % m:
        raise PipelineError(f"D={reps.shape[1]} is not divisible by M={m}")
    ds = reps.shape[1] // m
    for i in range(m):
        distinct = np.unique(reps[:, i * ds : (i + 1) * ds], axis=0).shape[0]
        if distinct < ks:
            raise PipelineError(
                f"subspace {i} has only {distinct} distinct representative slices, need Ks={ks}"
            )
    return pq_fit(reps, m, ks, max_iters=iters, seed=seed, tol=tol)


def build_index_serial(
    codebook: Codebook, coarse_centroids: np.ndarray, codes: np.ndarray, ids=None
) -> InvertedIndex:
    """Monolithic index over ``codes`` against fixed coarse centroids."""
    if ids is None:
        ids = np.arange(len(codes), dtype=np.uint64)
    return InvertedIndex(codebook, coarse_centroids).add(codes, ids)


def run_pipeline(data: np.ndarray, config: PipelineConfig) -> PipelineReport:
    data = as_matrix(data, name="data")
    n, d = data.shape
    c = config
    timer = _Timer()
    report_kwargs: dict = {}

    if c.mode == "single":
        with timer.phase("fit"):
            codebook = pq_fit(data, c.m, c.ks, max_iters=c.kmeans_iters, seed=c.seed, tol=c.tol)
        with timer.phase("encode"):
            codes = pq_encode(codebook, data)
        with timer.phase("rmse"):
            global_rmse = rmse(data, pq_decode(codebook, codes))
        return PipelineReport(
            c, codebook, global_rmse, timer.phases, single_rmse=global_rmse,
            codes=codes, n_rows=n, n_dims=d,
        )

    with timer.phase("chunking"):
        ranges = chunk_rows(n, c.n_chunks)
        chunks = [data[r.slice()] for r in ranges]

    def local(cid: int, chunk: np.ndarray) -> ChunkOutput:
        return train_chunk(chunk, c.m, c.ks, c.kmeans_iters, c.seed + cid, cid, c.tol)

    with timer.phase("local_fit"):
        outputs = _run_chunk_tasks(local, chunks, c.n_threads)
    log.debug("local fits done: %d chunks", len(outputs))

    with timer.phase("global_fit"):
        reps = aggregate_representatives(outputs)
        codebook = fit_global(reps, c.m, c.ks, c.kmeans_iters, c.seed, c.tol)

    if c.mode == "parallel_pq":
        with timer.phase("encode"):
            codes = pq_encode(codebook, data)
    else:
        # a defaulted nlist is capped by how many representatives exist
        nlist = c.nlist if c.nlist is not None else min(default_nlist(n), reps.shape[0])
        if not 1 <= nlist <= reps.shape[0]:
            raise PipelineError(f"nlist must be in [1, {reps.shape[0]}], got {nlist}")
        with timer.phase("coarse_fit"):
            coarse = kmeans_fit(reps, nlist, max_iters=c.kmeans_iters, seed=c.seed, tol=c.tol).centroids
        with timer.phase("encode"):
            chunk_codes = _run_chunk_tasks(
                lambda cid, chunk: pq_encode(codebook, chunk), chunks, c.n_threads
            )

        def build(cid: int, r: RowRange) -> InvertedIndex:
            ids = np.arange(r.start, r.end, dtype=np.uint64)
            return build_index_serial(codebook, coarse, chunk_codes[cid], ids)

        with timer.phase("index_build"):
            parts = _run_chunk_tasks(build, ranges, c.n_threads)
        with timer.phase("merge"):
            index = merge_all(parts)
        codes = np.concatenate(chunk_codes, axis=0)
        report_kwargs.update(index=index, coarse_centroids=coarse)

    with timer.phase("rmse"):
        global_rmse = rmse(data, pq_decode(codebook, codes))

    single = None
    if c.compare_single:
        with timer.phase("single_reference"):
            ref = pq_fit(data, c.m, c.ks, max_iters=c.kmeans_iters, seed=c.seed, tol=c.tol)
            single = reconstruction_rmse(ref, data)

    return PipelineReport(
        c, codebook, global_rmse, timer.phases, single_rmse=single, codes=codes,
        chunk_outputs=outputs, n_rows=n, n_dims=d, **report_kwargs,
    )
