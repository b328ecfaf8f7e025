"""IVFPQ inverted index over PQ codes.

Items are ``(id, code)`` pairs filed under the coarse centroid nearest to
their decoded vector. Queries probe the ``nprobe`` closest posting lists and
rank candidates by asymmetric distance; results are ordered by
``(distance, id)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kmeans import DEFAULT_MAX_ITERS, DEFAULT_TOL, assign, kmeans_fit
from .pq import (
    Codebook,
    PQError,
    adc_distances,
    adc_table,
    pq_decode,
    read_codebook,
    write_codebook,
)

__all__ = [
    "IVFError",
    "QueryResult",
    "InvertedIndex",
    "default_nlist",
    "ivf_build",
    "ivf_add",
    "ivf_merge",
    "merge_all",
    "ivf_query",
    "ivf_query_subset",
    "flat_scan",
    "save_index",
    "load_index",
]

INDEX_MAGIC = b"PQII"
INDEX_VERSION = 1
_HEADER = struct.Struct("<4sI")


class IVFError(ValueError):
    """Invalid index construction, mutation, or query."""


@dataclass(frozen=True, eq=False)
class QueryResult:
    ids: np.ndarray  # uint64, ascending by (distance, id)
    distances: np.ndarray  # float64 squared distances
    k_requested: int

    @property
    def hits(self) -> list[tuple[int, float]]:
        return [(int(i), float(d)) for i, d in zip(self.ids, self.distances)]

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QueryResult):
            return NotImplemented
        return (
            self.k_requested == other.k_requested
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.distances, other.distances)
        )

    __hash__ = None  # type: ignore[assignment]


def default_nlist(n_items: int) -> int:
    return min(max(1, round(math.sqrt(n_items))), max(1, n_items))


def _as_ids(ids, n: int) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim != 1 or ids.shape[0] != n:
        raise IVFError(f"expected {n} ids, got shape {ids.shape}")
    if ids.size and (np.issubdtype(ids.dtype, np.signedinteger) and ids.min() < 0):
        raise IVFError("ids must be non-negative")
    ids = ids.astype(np.uint64)
    uniq, counts = np.unique(ids, return_counts=True)
    if (counts > 1).any():
        raise IVFError(f"duplicate id {int(uniq[counts > 1][0])}")
    return ids


def _top_k(ids: np.ndarray, dists: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    if dists.shape[0] > 4 * k:
        kth = np.partition(dists, k - 1)[k - 1]
        keep = dists <= kth
        ids, dists = ids[keep], dists[keep]
    order = np.lexsort((ids, dists))[:k]
    return ids[order], dists[order]


class InvertedIndex:
    """Coarse centroids plus one posting list of ``(ids, codes)`` per centroid."""

    def __init__(self, codebook: Codebook, coarse_centroids: np.ndarray):
        coarse = np.asarray(coarse_centroids, dtype=np.float32)
        if coarse.ndim != 2 or coarse.shape[0] < 1 or coarse.shape[1] != codebook.dim:
            raise IVFError(
                f"coarse centroids {coarse.shape} incompatible with codebook D={codebook.dim}"
            )
        self.codebook = codebook
        self.coarse_centroids = coarse
        empty_codes = np.empty((0, codebook.m), dtype=codebook.code_dtype)
        self.list_ids: list[np.ndarray] = [np.empty(0, np.uint64) for _ in range(self.nlist)]
        self.list_codes: list[np.ndarray] = [empty_codes.copy() for _ in range(self.nlist)]

    @property
    def nlist(self) -> int:
        return self.coarse_centroids.shape[0]

    @property
    def n_items(self) -> int:
        return sum(len(x) for x in self.list_ids)

    def __len__(self) -> int:
        return self.n_items

    def all_ids(self) -> np.ndarray:
        return np.concatenate(self.list_ids) if self.nlist else np.empty(0, np.uint64)

    def posting_list(self, i: int) -> list[tuple[int, tuple[int, ...]]]:
        return [
            (int(a), tuple(int(c) for c in row))
            for a, row in zip(self.list_ids[i], self.list_codes[i])
        ]

    def compatible_with(self, other: "InvertedIndex") -> bool:
        return self.codebook == other.codebook and np.array_equal(
            self.coarse_centroids, other.coarse_centroids
        )

    def coarse_assign(self, codes: np.ndarray) -> np.ndarray:
        if len(codes) == 0:
            return np.empty(0, dtype=np.int64)
        labels, _ = assign(pq_decode(self.codebook, codes), self.coarse_centroids)
        return labels

    def add(self, codes, ids) -> "InvertedIndex":
        """Append items to their nearest existing posting lists, in input order."""
        codes = np.asarray(codes)
        if codes.ndim == 1 and codes.size == 0:
            codes = codes.reshape(0, self.codebook.m)
        if codes.ndim != 2 or codes.shape[1] != self.codebook.m:
            raise IVFError(f"code shape {codes.shape} does not match M={self.codebook.m}")
        ids = _as_ids(ids, codes.shape[0])
        if ids.size == 0:
            return self
        clash = np.intersect1d(ids, self.all_ids())
        if clash.size:
            raise IVFError(f"id collision: {int(clash[0])}")
        try:
            labels = self.coarse_assign(codes)
        except PQError as exc:
            raise IVFError(str(exc)) from exc
        codes = codes.astype(self.codebook.code_dtype)
        order = np.argsort(labels, kind="stable")
        bounds = np.searchsorted(labels[order], np.arange(self.nlist + 1))
        for i in range(self.nlist):
            sel = order[bounds[i] : bounds[i + 1]]
            if sel.size:
                self.list_ids[i] = np.concatenate([self.list_ids[i], ids[sel]])
                self.list_codes[i] = np.concatenate([self.list_codes[i], codes[sel]])
        return self

    def _candidates(self, probe: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
        probe = list(probe)
        ids = np.concatenate([self.list_ids[p] for p in probe])
        codes = np.concatenate([self.list_codes[p] for p in probe])
        return ids, codes

    def probe_order(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float32).reshape(1, -1)
        if q.shape[1] != self.codebook.dim:
            raise IVFError(f"query dimension {q.shape[1]} != D={self.codebook.dim}")
        diff = self.coarse_centroids.astype(np.float64) - q.astype(np.float64)
        d = np.zeros(self.nlist)
        for t in range(diff.shape[1]):
            d += diff[:, t] * diff[:, t]
        return np.argsort(d, kind="stable")

    def query(
        self,
        query,
        k: int,
        nprobe: int,
        subset: Sequence[int] | np.ndarray | None = None,
        threshold: float | None = None,
    ) -> QueryResult:
        """Top-``k`` search over the ``nprobe`` nearest posting lists.

        ``subset`` (sorted, unique ids) restricts the candidates; ``threshold``
        drops hits whose squared distance exceeds it.
        """
        if k < 1:
            raise IVFError(f"k must be >= 1, got {k}")
        if not 1 <= nprobe <= self.nlist:
            raise IVFError(f"nprobe must be in [1, {self.nlist}], got {nprobe}")
        probe = self.probe_order(query)[:nprobe]
        ids, codes = self._candidates(probe)
        if subset is not None:
            keep = np.isin(ids, _check_subset(subset))
            ids, codes = ids[keep], codes[keep]
        table = adc_table(self.codebook, query)
        dists = adc_distances(table, codes)
        if threshold is not None:
            keep = dists <= threshold
            ids, dists = ids[keep], dists[keep]
        top_ids, top_d = _top_k(ids, dists, k)
        return QueryResult(top_ids, top_d, k)

    def copy(self) -> "InvertedIndex":
        out = InvertedIndex(self.codebook, self.coarse_centroids)
        out.list_ids = [a.copy() for a in self.list_ids]
        out.list_codes = [c.copy() for c in self.list_codes]
        return out


def _check_subset(subset) -> np.ndarray:
    s = np.asarray(subset)
    if s.ndim != 1:
        raise IVFError("subset must be a 1-D id sequence")
    if s.size and (np.issubdtype(s.dtype, np.signedinteger) and s.min() < 0):
        raise IVFError("subset ids must be non-negative")
    s = s.astype(np.uint64)
    if s.size > 1 and not (s[1:] > s[:-1]).all():
        raise IVFError("subset must be sorted ascending without duplicates")
    return s


def ivf_build(
    codebook: Codebook,
    codes,
    ids,
    nlist: int | None = None,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> InvertedIndex:
    """Cluster the decoded codes into ``nlist`` coarse cells and file every item."""
    codes = np.asarray(codes)
    n = len(codes)
    if n == 0:
        raise IVFError("cannot build an index from zero items")
    ids = _as_ids(ids, n)
    if nlist is None:
        nlist = default_nlist(n)
    if not 1 <= nlist <= n:
        raise IVFError(f"nlist must be in [1, {n}], got {nlist}")
    decoded = pq_decode(codebook, codes)
    coarse = kmeans_fit(decoded, nlist, max_iters=max_iters, seed=seed, tol=tol).centroids
    return InvertedIndex(codebook, coarse).add(codes, ids)


def ivf_add(index: InvertedIndex, codes, ids) -> InvertedIndex:
    return index.add(codes, ids)


def merge_all(indexes: Sequence[InvertedIndex]) -> InvertedIndex:
    """Concatenate posting lists of compatible indexes, list by list, in order."""
    if not indexes:
        raise IVFError("nothing to merge")
    first = indexes[0]
    for other in indexes[1:]:
        if not first.compatible_with(other):
            raise IVFError("cannot merge indexes with different codebooks or coarse centroids")
    out = InvertedIndex(first.codebook, first.coarse_centroids)
    for i in range(first.nlist):
        out.list_ids[i] = np.concatenate([ix.list_ids[i] for ix in indexes])
        out.list_codes[i] = np.concatenate([ix.list_codes[i] for ix in indexes])
    uniq, counts = np.unique(out.all_ids(), return_counts=True)
    if (counts > 1).any():
        raise IVFError(f"id collision: {int(uniq[counts > 1][0])}")
    return out


def ivf_merge(a: InvertedIndex, b: InvertedIndex) -> InvertedIndex:
    return merge_all([a, b])


def ivf_query(index: InvertedIndex, query, k: int, nprobe: int, threshold: float | None = None) -> QueryResult:
    return index.query(query, k, nprobe, threshold=threshold)


def ivf_query_subset(index: InvertedIndex, query, k: int, subset, nprobe: int) -> QueryResult:
    return index.query(query, k, nprobe, subset=subset)


def flat_scan(codebook: Codebook, codes, ids, query, k: int, threshold: float | None = None) -> QueryResult:
    """Exhaustive ADC over every code; the exactness baseline for ``ivf_query``."""
    if k < 1:
        raise IVFError(f"k must be >= 1, got {k}")
    codes = np.asarray(codes)
    ids = np.asarray(ids).astype(np.uint64)
    if codes.ndim != 2 or codes.shape[1] != codebook.m or ids.shape != (codes.shape[0],):
        raise IVFError(f"shape mismatch: codes {codes.shape}, ids {ids.shape}")
    dists = adc_distances(adc_table(codebook, query), codes)
    if threshold is not None:
        keep = dists <= threshold
        ids, dists = ids[keep], dists[keep]
    top_ids, top_d = _top_k(ids, dists, k)
    return QueryResult(top_ids, top_d, k)


# -- serialization -----------------------------------------------------------


def _entry_dtype(codebook: Codebook) -> np.dtype:
    code = codebook.code_dtype.newbyteorder("<")
    return np.dtype([("id", "<u8"), ("code", code, (codebook.m,))])


def save_index(index: InvertedIndex, path: str | Path) -> None:
    entry = _entry_dtype(index.codebook)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION))
        write_codebook(index.codebook, fh)
        fh.write(struct.pack("<I", index.nlist))
        fh.write(index.coarse_centroids.astype("<f4").tobytes())
        for ids, codes in zip(index.list_ids, index.list_codes):
            fh.write(struct.pack("<Q", len(ids)))
            rec = np.empty(len(ids), dtype=entry)
            rec["id"] = ids
            rec["code"] = codes
            fh.write(rec.tobytes())


def load_index(path: str | Path) -> InvertedIndex:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise IVFError(f"{path}: truncated header")
        magic, version = _HEADER.unpack(head)
        if magic != INDEX_MAGIC:
            raise IVFError(f"{path}: bad magic {magic!r}")
        if version != INDEX_VERSION:
            raise IVFError(f"{path}: unsupported version {version}")
        codebook = read_codebook(fh)
        nlist = struct.unpack("<I", _read_exact(fh, 4, path))[0]
        coarse = np.frombuffer(_read_exact(fh, 4 * nlist * codebook.dim, path), dtype="<f4")
        index = InvertedIndex(codebook, coarse.reshape(nlist, codebook.dim))
        entry = _entry_dtype(codebook)
        for i in range(nlist):
            n = struct.unpack("<Q", _read_exact(fh, 8, path))[0]
            rec = np.frombuffer(_read_exact(fh, n * entry.itemsize, path), dtype=entry)
            index.list_ids[i] = rec["id"].astype(np.uint64)
            index.list_codes[i] = rec["code"].astype(codebook.code_dtype).reshape(n, codebook.m)
        if fh.read(1):
            raise IVFError(f"{path}: trailing bytes")
    return index


def _read_exact(fh, n: int, path) -> bytes:
    buf = fh.read(n)
    if len(buf) < n:
        raise IVFError(f"{path}: truncated file")
    return buf
