"""Vector dataset loading, generation, persistence, and row chunking.

Matrices are plain ``numpy`` arrays of shape ``(N, D)`` and dtype float32.
Three on-disk formats are understood:

* ``.fvecs``: repeated ``[int32 dim][dim x float32]`` records, little-endian.
* native ``PQIM``: a small header followed by the row-major float32 payload.
* CSV with a header row.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "RowRange",
    "SyntheticSpec",
    "as_matrix",
    "load_fvecs",
    "save_fvecs",
    "load_csv",
    "save_native",
    "load_native",
    "load_matrix",
    "save_matrix",
    "gen_synthetic",
    "chunk_rows",
]

NATIVE_MAGIC = b"PQIM"
NATIVE_VERSION = 1
_NATIVE_HEADER = struct.Struct("<4sIQI")


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid dataset parameters."""


class RowRange(NamedTuple):
    start: int
    end: int

    def __len__(self) -> int:  # type: ignore[override]
        return self.end - self.start

    def slice(self) -> slice:
        return slice(self.start, self.end)


@dataclass(frozen=True)
class SyntheticSpec:
    n_rows: int
    n_dims: int
    n_clusters: int = 64
    spread: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_rows < 1:
            raise DatasetError(f"n_rows must be >= 1, got {self.n_rows}")
        if self.n_dims < 1:
            raise DatasetError(f"n_dims must be >= 1, got {self.n_dims}")
        if self.n_clusters < 1:
            raise DatasetError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if not self.spread > 0:
            raise DatasetError(f"spread must be > 0, got {self.spread}")
        if not 0 <= self.seed < 2**64:
            raise DatasetError(f"seed must fit in 64 unsigned bits, got {self.seed}")


def as_matrix(values, *, name: str = "matrix") -> np.ndarray:
    """Validate and coerce ``values`` into a finite float32 ``(N, D)`` array."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise DatasetError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DatasetError(f"{name} must have at least one row and one column, got {arr.shape}")
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise DatasetError(f"{name} has non-finite value at row {bad[0]}, column {bad[1]}")
    return arr


# -- fvecs -------------------------------------------------------------------


def load_fvecs(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw:
        raise DatasetError(f"{path}: no records")
    if len(raw) < 4:
        raise DatasetError(f"{path}: truncated file")
    dim = int.from_bytes(raw[:4], "little", signed=True)
    if dim < 1:
        raise DatasetError(f"{path}: invalid dimension {dim} in record 0")
    rec = 4 * (dim + 1)
    if len(raw) % rec != 0:
        _locate_fvecs_fault(raw, dim, path)
    words = np.frombuffer(raw, dtype="<i4").reshape(-1, dim + 1)
    dims = words[:, 0]
    if (dims != dim).any():
        i = int(np.flatnonzero(dims != dim)[0])
        raise DatasetError(f"{path}: dimension mismatch in record {i}: {dims[i]} != {dim}")
    values = words[:, 1:].view("<f4").astype(np.float32)
    return as_matrix(values, name=str(path))


def _locate_fvecs_fault(raw: bytes, dim: int, path) -> None:
    offset, i = 0, 0
    while offset + 4 <= len(raw):
        d = int.from_bytes(raw[offset : offset + 4], "little", signed=True)
        if d != dim:
            raise DatasetError(f"{path}: dimension mismatch in record {i}: {d} != {dim}")
        offset += 4 * (dim + 1)
        i += 1
    raise DatasetError(f"{path}: truncated file (record {i} incomplete)")


def save_fvecs(matrix: np.ndarray, path: str | Path) -> None:
    m = as_matrix(matrix)
    n, d = m.shape
    out = np.empty((n, d + 1), dtype="<f4")
    out[:, 0] = np.full(n, d, dtype="<i4").view("<f4")
    out[:, 1:] = m
    Path(path).write_bytes(out.tobytes())


# -- CSV ---------------------------------------------------------------------


def load_csv(path: str | Path, columns: Sequence[str] | None = None) -> np.ndarray:
    """Read a headed CSV file into a matrix.

    With ``columns`` given, exactly those columns are read in that order and
    any unparseable cell is an error. Without it, every column whose cells
    all parse as finite numbers is kept, in file order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: missing header row") from None
        rows = [r for r in reader if r]

    header = [h.strip() for h in header]
    if columns is not None:
        missing = [c for c in columns if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {missing}")
        selected = [header.index(c) for c in columns]
    else:
        selected = [j for j, _ in enumerate(header) if all(_parses(r, j) for r in rows)]
    if not rows or not selected:
        raise DatasetError(f"{path}: selection is empty")

    out = np.empty((len(rows), len(selected)), dtype=np.float32)
    for i, r in enumerate(rows):
        for jj, j in enumerate(selected):
            cell = r[j] if j < len(r) else ""
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(
                    f"{path}: cannot parse {cell!r} at row {i + 1}, column {header[j]!r}"
                ) from None
            if not math.isfinite(v):
                raise DatasetError(
                    f"{path}: non-finite value {cell!r} at row {i + 1}, column {header[j]!r}"
                )
            out[i, jj] = v
    return out


def _parses(row: list[str], j: int) -> bool:
    if j >= len(row):
        return False
    try:
        return math.isfinite(float(row[j]))
    except ValueError:
        return False


# -- native ------------------------------------------------------------------


def save_native(matrix: np.ndarray, path: str | Path) -> None:
    m = as_matrix(matrix)
    n, d = m.shape
    with open(path, "wb") as fh:
        fh.write(_NATIVE_HEADER.pack(NATIVE_MAGIC, NATIVE_VERSION, n, d))
        fh.write(m.astype("<f4", copy=False).tobytes())


def load_native(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _NATIVE_HEADER.size:
        raise DatasetError(f"{path}: truncated header")
    magic, version, n, d = _NATIVE_HEADER.unpack_from(raw)
    if magic != NATIVE_MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != NATIVE_VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    payload = len(raw) - _NATIVE_HEADER.size
    if payload < 4 * n * d:
        raise DatasetError(f"{path}: truncated payload ({payload} bytes, expected {4 * n * d})")
    if payload > 4 * n * d:
        raise DatasetError(f"{path}: length mismatch ({payload} bytes, expected {4 * n * d})")
    values = np.frombuffer(raw, dtype="<f4", offset=_NATIVE_HEADER.size).reshape(n, d)
    return as_matrix(values.astype(np.float32), name=str(path))


def load_matrix(path: str | Path) -> np.ndarray:
    """Load by extension: ``.fvecs``, ``.csv``, anything else as native."""
    suffix = Path(path).suffix.lower()
    if suffix == ".fvecs":
        return load_fvecs(path)
    if suffix == ".csv":
        return load_csv(path)
    return load_native(path)


def save_matrix(matrix: np.ndarray, path: str | Path) -> None:
    if Path(path).suffix.lower() == ".fvecs":
        save_fvecs(matrix, path)
    else:
        save_native(matrix, path)


# -- generation and chunking -------------------------------------------------


def gen_synthetic(spec: SyntheticSpec) -> np.ndarray:
    """Equal-weight Gaussian mixture; component means uniform in [0, 10]^D."""
    rng = np.random.default_rng(spec.seed)
    means = rng.uniform(0.0, 1.0, size=(spec.n_clusters, spec.n_dims)) * 10.0
    component = rng.integers(0, spec.n_clusters, size=spec.n_rows)
    noise = rng.normal(0.0, spec.spread, size=(spec.n_rows, spec.n_dims))
    return (means[component] + noise).astype(np.float32)


def chunk_rows(n_rows: int, n_chunks: int) -> list[RowRange]:
    """Split ``[0, n_rows)`` into ``n_chunks`` contiguous ranges.

    Sizes differ by at most one; the first ``n_rows % n_chunks`` ranges get
    the extra row.
    """
    if n_chunks < 1 or n_chunks > n_rows:
        raise DatasetError(f"n_chunks must be in [1, {n_rows}], got {n_chunks}")
    base, extra = divmod(n_rows, n_chunks)
    ranges = []
    start = 0
    for c in range(n_chunks):
        end = start + base + (1 if c < extra else 0)
        ranges.append(RowRange(start, end))
        start = end
    return ranges
