"""Benchmark harness: run the three pipeline modes over a parameter grid."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import statistics
from dataclasses import astuple, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .kmeans import DEFAULT_MAX_ITERS
from .pipeline import MODES, PipelineConfig, run_pipeline

__all__ = [
    "BENCH_SCHEMA",
    "BenchError",
    "BenchRow",
    "SWEEPS",
    "run_bench",
    "write_csv",
    "read_csv",
]

log = logging.getLogger(__name__)

BENCH_SCHEMA = "# pqii-bench v1"
SWEEPS = {
    "subspace": {"m": [2, 4, 8, 16], "ks": [256]},
    "codesize": {"m": [8], "ks": [16, 64, 256]},
}


class BenchError(ValueError):
    pass


@dataclass(frozen=True)
class BenchRow:
    case_label: str
    n_rows: int
    n_dims: int
    m: int
    ks: int
    chunks: int
    threads: int
    nlist: int
    rmse: float
    wall_seconds: float
    phase: str
    timestamp_iso8601: str


COLUMNS = [f.name for f in fields(BenchRow)]
_INT_COLUMNS = {"n_rows", "n_dims", "m", "ks", "chunks", "threads", "nlist"}


def _grid(modes, ms, kss, chunks_list, threads_list):
    seen = set()
    for mode, m, ks, c, t in itertools.product(modes, ms, kss, chunks_list, threads_list):
        if mode == "single":
            c, t = 1, 1
        key = (mode, m, ks, c, t)
        if key not in seen:
            seen.add(key)
            yield key


def run_bench(
    data: np.ndarray,
    modes: Sequence[str] = MODES,
    ms: Sequence[int] = (8,),
    kss: Sequence[int] = (256,),
    chunks: Sequence[int] = (16,),
    threads: Sequence[int] = (1,),
    seeds: int = 1,
    seed: int = 0,
    nlist: int | None = None,
    iters: int = DEFAULT_MAX_ITERS,
    phases: bool = False,
) -> list[BenchRow]:
    """One ``total`` row per (mode, parameter point); rmse and time are medians over seeds."""
    for mode in modes:
        if mode not in MODES:
            raise BenchError(f"unknown mode {mode!r}")
    if seeds < 1:
        raise BenchError(f"seeds must be >= 1, got {seeds}")
    n, d = data.shape
    rows: list[BenchRow] = []
    for mode, m, ks, c, t in _grid(modes, ms, kss, chunks, threads):
        rmses, walls, per_phase = [], [], {}
        used_nlist = 0
        for s in range(seed, seed + seeds):
            cfg = PipelineConfig(
                n_chunks=c, m=m, ks=ks, nlist=nlist, kmeans_iters=iters,
                seed=s, n_threads=t, mode=mode,
            )
            report = run_pipeline(data, cfg)
            rmses.append(report.global_rmse)
            walls.append(report.total_seconds)
            for name, secs in report.phase_timings.items():
                per_phase.setdefault(name, []).append(secs)
            if report.index is not None:
                used_nlist = report.index.nlist
            log.info("%s m=%d ks=%d C=%d T=%d seed=%d rmse=%.6f %.3fs",
                     mode, m, ks, c, t, s, report.global_rmse, report.total_seconds)
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        common = (mode, n, d, m, ks, c, t, used_nlist)
        rmse_med = statistics.median(rmses)
        rows.append(BenchRow(*common, rmse_med, statistics.median(walls), "total", stamp))
        if phases:
            for name, vals in per_phase.items():
                rows.append(BenchRow(*common, rmse_med, statistics.median(vals), name, stamp))
    return rows


def _format(row: BenchRow) -> list[str]:
    out = []
    for name, value in zip(COLUMNS, astuple(row)):
        if name == "rmse":
            out.append(f"{value:.9g}")
        elif name == "wall_seconds":
            out.append(f"{value:.3f}")
        else:
            out.append(str(value))
    return out


def write_csv(rows: Iterable[BenchRow], dest: str | Path | TextIO, append: bool = False) -> None:
    if isinstance(dest, (str, Path)):
        path = Path(dest)
        fresh = not (append and path.exists() and path.stat().st_size > 0)
        with open(path, "a" if append else "w", newline="") as fh:
            _write(rows, fh, header=fresh)
    else:
        _write(rows, dest, header=True)


def _write(rows, fh, header: bool) -> None:
    w = csv.writer(fh, lineterminator="\n")
    if header:
        fh.write(BENCH_SCHEMA + "\n")
        w.writerow(COLUMNS)
    for row in rows:
        w.writerow(_format(row))


def read_csv(source: str | Path | TextIO) -> list[BenchRow]:
    """Parse a bench CSV; malformed rows are reported with their line number."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    rows: list[BenchRow] = []
    header_seen = False
    for lineno, rec in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not rec or rec[0].startswith("#"):
            continue
        if not header_seen:
            if rec != COLUMNS:
                raise BenchError(f"line {lineno}: unexpected header {rec}")
            header_seen = True
            continue
        if len(rec) != len(COLUMNS):
            raise BenchError(f"line {lineno}: expected {len(COLUMNS)} fields, got {len(rec)}")
        try:
            values = [
                int(v) if name in _INT_COLUMNS else float(v) if name in ("rmse", "wall_seconds") else v
                for name, v in zip(COLUMNS, rec)
            ]
        except ValueError as exc:
            raise BenchError(f"line {lineno}: {exc}") from None
        row = BenchRow(*values)
        if row.case_label not in MODES:
            raise BenchError(f"line {lineno}: unknown case_label {row.case_label!r}")
        if row.rmse < 0 or row.wall_seconds < 0:
            raise BenchError(f"line {lineno}: negative rmse or wall_seconds")
        rows.append(row)
    if not header_seen:
        raise BenchError("missing header row")
    if not rows:
        raise BenchError("no data rows")
    return rows
