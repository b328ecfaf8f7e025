"""Product quantization: codebook training, encode/decode, ADC, RMSE."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .kmeans import DEFAULT_MAX_ITERS, DEFAULT_TOL, assign, kmeans_fit

__all__ = [
    "PQError",
    "Codebook",
    "code_dtype",
    "pq_fit",
    "pq_encode",
    "pq_decode",
    "adc_table",
    "adc_lookup",
    "adc_distances",
    "rmse",
    "reconstruction_rmse",
    "save_codebook",
    "load_codebook",
    "save_codes",
    "load_codes",
]

MAX_KS = 65536
CODEBOOK_MAGIC = b"PQCB"
CODES_MAGIC = b"PQCD"
FORMAT_VERSION = 1
_CB_HEADER = struct.Struct("<4sIIII")
_CODES_HEADER = struct.Struct("<4sIQII")


class PQError(ValueError):
    pass


def code_dtype(ks: int) -> np.dtype:
    return np.dtype(np.uint8) if ks <= 256 else np.dtype(np.uint16)


@dataclass(frozen=True, eq=False)
class Codebook:
    """Per-subspace codeword tables, shape ``(M, Ks, Ds)``, float32."""

    tables: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tables, dtype=np.float32)
        if t.ndim != 3 or 0 in t.shape:
            raise PQError(f"codebook tables must be non-empty (M, Ks, Ds), got {t.shape}")
        if t.shape[1] > MAX_KS:
            raise PQError(f"Ks={t.shape[1]} exceeds {MAX_KS}")
        if not np.isfinite(t).all():
            raise PQError("codebook contains non-finite codewords")
        object.__setattr__(self, "tables", t)

    @property
    def m(self) -> int:
        return self.tables.shape[0]

    @property
    def ks(self) -> int:
        return self.tables.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.tables.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.sub_dim

    @property
    def code_dtype(self) -> np.dtype:
        return code_dtype(self.ks)

    def subspace(self, m: int) -> slice:
        return slice(m * self.sub_dim, (m + 1) * self.sub_dim)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.tables.shape == other.tables.shape and np.array_equal(
            self.tables, other.tables
        )

    __hash__ = None  # type: ignore[assignment]


def _check_data(codebook: Codebook, data) -> np.ndarray:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 1:
        data = data.reshape(1, -1)
    if data.ndim != 2 or data.shape[1] != codebook.dim:
        raise PQError(f"dimension mismatch: data {data.shape} vs codebook D={codebook.dim}")
    return data


def pq_fit(
    data: np.ndarray,
    m: int,
    ks: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> Codebook:
    """Train one k-means per contiguous column block; block ``i`` uses seed ``seed + i``."""
    data = np.asarray(data, dtype=np.float32)
    n, d = data.shape
    if m < 1 or d % m:
        raise PQError(f"D={d} is not divisible by M={m}")
    if ks < 1 or ks > MAX_KS:
        raise PQError(f"Ks must be in [1, {MAX_KS}], got {ks}")
    if ks > n:
        raise PQError(f"Ks={ks} exceeds number of training rows {n}")
    ds = d // m
    tables = np.empty((m, ks, ds), dtype=np.float32)
    for i in range(m):
        block = np.ascontiguousarray(data[:, i * ds : (i + 1) * ds])
        tables[i] = kmeans_fit(block, ks, max_iters=max_iters, seed=seed + i, tol=tol).centroids
    return Codebook(tables)


def pq_encode(codebook: Codebook, data: np.ndarray) -> np.ndarray:
    data = _check_data(codebook, data)
    codes = np.empty((data.shape[0], codebook.m), dtype=codebook.code_dtype)
    for i in range(codebook.m):
        labels, _ = assign(data[:, codebook.subspace(i)], codebook.tables[i])
        codes[:, i] = labels
    return codes


def _check_codes(codebook: Codebook, codes) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.ndim == 1:
        codes = codes.reshape(1, -1)
    if codes.ndim != 2 or codes.shape[1] != codebook.m:
        raise PQError(f"code shape {codes.shape} does not match M={codebook.m}")
    if codes.size and (codes.min() < 0 or codes.max() >= codebook.ks):
        raise PQError(f"code out of range [0, {codebook.ks})")
    return codes.astype(np.intp, copy=False)


def pq_decode(codebook: Codebook, codes: np.ndarray) -> np.ndarray:
    codes = _check_codes(codebook, codes)
    parts = [codebook.tables[i][codes[:, i]] for i in range(codebook.m)]
    return np.concatenate(parts, axis=1)


def adc_table(codebook: Codebook, query) -> np.ndarray:
    """``(M, Ks)`` float64 table of squared distances from query slices to codewords."""
    q = np.asarray(query, dtype=np.float32).reshape(-1)
    if q.shape[0] != codebook.dim:
        raise PQError(f"query dimension {q.shape[0]} != codebook D={codebook.dim}")
    q = q.astype(np.float64).reshape(codebook.m, 1, codebook.sub_dim)
    diff = codebook.tables.astype(np.float64) - q
    table = np.zeros((codebook.m, codebook.ks), dtype=np.float64)
    # ascending coordinate order, matching the k-means kernel
    for t in range(codebook.sub_dim):
        table += diff[:, :, t] * diff[:, :, t]
    return table


def adc_distances(table: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Vectorised ADC over many codes; sums subspaces in ascending order."""
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[1] != table.shape[0]:
        raise PQError(f"code shape {codes.shape} does not match M={table.shape[0]}")
    out = np.zeros(codes.shape[0], dtype=np.float64)
    for i in range(table.shape[0]):
        out += table[i][codes[:, i]]
    return out


def adc_lookup(table: np.ndarray, code) -> float:
    code = [int(c) for c in code]
    if len(code) != table.shape[0]:
        raise PQError(f"code length {len(code)} does not match M={table.shape[0]}")
    total = 0.0
    for i, c in enumerate(code):
        if not 0 <= c < table.shape[1]:
            raise PQError(f"code {c} out of range [0, {table.shape[1]}) in subspace {i}")
        total += float(table[i, c])
    return total


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    """Per-element root mean squared difference."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise PQError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.sqrt(np.einsum("ij,ij->", diff, diff) / diff.size))


def reconstruction_rmse(codebook: Codebook, data: np.ndarray) -> float:
    data = _check_data(codebook, data)
    return rmse(data, pq_decode(codebook, pq_encode(codebook, data)))


# -- serialization -----------------------------------------------------------


def write_codebook(codebook: Codebook, fh: BinaryIO) -> None:
    fh.write(_CB_HEADER.pack(CODEBOOK_MAGIC, FORMAT_VERSION, codebook.m, codebook.ks, codebook.sub_dim))
    fh.write(codebook.tables.astype("<f4").tobytes())


def read_codebook(fh: BinaryIO) -> Codebook:
    head = fh.read(_CB_HEADER.size)
    if len(head) < _CB_HEADER.size:
        raise PQError("truncated codebook header")
    magic, version, m, ks, ds = _CB_HEADER.unpack(head)
    if magic != CODEBOOK_MAGIC:
        raise PQError(f"bad codebook magic {magic!r}")
    if version != FORMAT_VERSION:
        raise PQError(f"unsupported codebook version {version}")
    nbytes = 4 * m * ks * ds
    payload = fh.read(nbytes)
    if len(payload) < nbytes:
        raise PQError("truncated codebook payload")
    return Codebook(np.frombuffer(payload, dtype="<f4").reshape(m, ks, ds).astype(np.float32))


def save_codebook(codebook: Codebook, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_codebook(codebook, fh)


def load_codebook(path: str | Path) -> Codebook:
    with open(path, "rb") as fh:
        cb = read_codebook(fh)
        if fh.read(1):
            raise PQError(f"{path}: trailing bytes after codebook")
    return cb


def save_codes(codes: np.ndarray, ks: int, path: str | Path) -> None:
    codes = np.asarray(codes)
    dt = code_dtype(ks).newbyteorder("<")
    with open(path, "wb") as fh:
        fh.write(_CODES_HEADER.pack(CODES_MAGIC, FORMAT_VERSION, codes.shape[0], codes.shape[1], ks))
        fh.write(codes.astype(dt).tobytes())


def load_codes(path: str | Path) -> tuple[np.ndarray, int]:
    """Returns ``(codes, ks)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _CODES_HEADER.size:
        raise PQError(f"{path}: truncated header")
    magic, version, n, m, ks = _CODES_HEADER.unpack_from(raw)
    if magic != CODES_MAGIC:
        raise PQError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise PQError(f"{path}: unsupported version {version}")
    dt = code_dtype(ks).newbyteorder("<")
    if len(raw) - _CODES_HEADER.size != n * m * dt.itemsize:
        raise PQError(f"{path}: payload length mismatch")
    codes = np.frombuffer(raw, dtype=dt, offset=_CODES_HEADER.size).reshape(n, m)
    return codes.astype(code_dtype(ks)), ks
