"""Fixed-capacity FIFO store of unit-norm pattern vectors with exact top-K
retrieval by inner product.

One instance serves one hierarchy level. Writes are single-threaded; reads
return value copies, so callers can never alias the ring buffer into a
computation graph.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"HMPMEM01"
_VERSION = 1
_ZERO_NORM = 1e-12


def normalize_pattern(x: np.ndarray) -> np.ndarray | None:
    """Scale to unit L2 norm; a (near-)zero vector returns None as a skip flag."""
    x = np.asarray(x, dtype=np.float64)
    n = float(np.linalg.norm(x))
    if n < _ZERO_NORM:
        return None
    return x / n


@dataclass
class RetrievalResult:
    """Top-K snapshot: value copies, sorted by similarity (ties: lower slot)."""

    patterns: np.ndarray  # [k_eff, d]
    similarities: np.ndarray  # [k_eff], non-increasing
    indices: np.ndarray  # [k_eff] buffer slots
    effective_k: int


class PatternMemory:
    """Ring buffer of ``capacity`` unit-norm rows of dimension ``dim``.

    Insertion normalizes each row, skips zero vectors, writes at the cursor
    and advances it modulo capacity, so the store always holds the most
    recent ``capacity`` non-degenerate patterns.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ValueError(f"capacity and dim must be positive, got {capacity}, {dim}")
        self.capacity = capacity
        self.dim = dim
        self.buffer = np.zeros((capacity, dim), dtype=np.float64)
        self.cursor = 0
        self.count = 0

    # ------------------------------------------------------------------ write

    def insert(self, patterns: np.ndarray) -> int:
        """Insert rows in order; returns how many were stored (zeros skipped)."""
        arr = np.asarray(patterns, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise ValueError(f"expected patterns of dim {self.dim}, got shape {arr.shape}")
        norms = np.linalg.norm(arr, axis=1)
        keep = norms >= _ZERO_NORM
        rows = arr[keep] / norms[keep, None]
        n = rows.shape[0]
        if n == 0:
            return 0
        m = self.capacity
        if n >= m:
            start = (self.cursor + (n - m)) % m
            write = rows[n - m:]
        else:
            start = self.cursor
            write = rows
        end = start + write.shape[0]
        if end <= m:
            self.buffer[start:end] = write
        else:
            split = m - start
            self.buffer[start:] = write[:split]
            self.buffer[: end - m] = write[split:]
        self.cursor = (self.cursor + n) % m
        self.count = min(self.count + n, m)
        return n

    def clear(self) -> None:
        self.buffer[:] = 0.0
        self.cursor = 0
        self.count = 0

    def clone(self) -> "PatternMemory":
        other = PatternMemory(self.capacity, self.dim)
        other.buffer = self.buffer.copy()
        other.cursor = self.cursor
        other.count = self.count
        return other

    # ------------------------------------------------------------------- read

    def top_k(self, query: np.ndarray, k: int) -> RetrievalResult:
        """Exact top-K by inner product; empty memory yields an empty result."""
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query must have shape ({self.dim},), got {q.shape}")
        if self.count == 0:
            empty = np.zeros((0, self.dim))
            return RetrievalResult(empty, np.zeros(0), np.zeros(0, dtype=np.int64), 0)
        patterns, sims, idx = self.top_k_batch(q[None, :], k)
        return RetrievalResult(
            patterns=patterns[0],
            similarities=sims[0],
            indices=idx[0],
            effective_k=int(idx.shape[1]),
        )

    def top_k_batch(
        self, queries: np.ndarray, k: int, chunk: int = 2048
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row-wise exact top-K for many queries.

        Returns (patterns [Q,k_eff,d], similarities [Q,k_eff], indices
        [Q,k_eff]) with the same ordering contract as ``top_k``.
        """
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != self.dim:
            raise ValueError(f"queries must be [Q,{self.dim}], got {q.shape}")
        nq = q.shape[0]
        count = self.count
        k_eff = min(k, count)
        if k_eff == 0:
            return (
                np.zeros((nq, 0, self.dim)),
                np.zeros((nq, 0)),
                np.zeros((nq, 0), dtype=np.int64),
            )
        idx_out = np.empty((nq, k_eff), dtype=np.int64)
        sim_out = np.empty((nq, k_eff), dtype=np.float64)
        store = self.buffer[:count]
        for lo in range(0, nq, chunk):
            hi = min(lo + chunk, nq)
            sims = q[lo:hi] @ store.T
            idx, vals = self._topk_rows(sims, k_eff)
            idx_out[lo:hi] = idx
            sim_out[lo:hi] = vals
        return self.buffer[idx_out].copy(), sim_out, idx_out

    @staticmethod
    def _topk_rows(sims: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        count = sims.shape[1]
        if k >= count:
            idx = np.argsort(-sims, axis=1, kind="stable")
        else:
            # partition k+1 candidates: the top-k SET is unique iff the k-th
            # and (k+1)-th largest values differ
            cand = np.argpartition(-sims, k, axis=1)[:, : k + 1]
            # order candidates by slot, then stable-sort by similarity so
            # equal values keep ascending slot order
            cand = np.sort(cand, axis=1)
            cvals = np.take_along_axis(sims, cand, axis=1)
            order = np.argsort(-cvals, axis=1, kind="stable")
            cand = np.take_along_axis(cand, order, axis=1)
            cvals = np.take_along_axis(cvals, order, axis=1)
            idx = np.ascontiguousarray(cand[:, :k])
            # rows where ties straddle the cut need the lowest-slot subset
            for r in np.flatnonzero(cvals[:, k - 1] == cvals[:, k]):
                row = sims[r]
                v = cvals[r, k - 1]
                gt = np.flatnonzero(row > v)
                eq = np.flatnonzero(row == v)
                sel = np.concatenate([gt, eq[: k - gt.size]])
                sel.sort()
                idx[r] = sel[np.argsort(-row[sel], kind="stable")]
        vals = np.take_along_axis(sims, idx, axis=1)
        return idx, vals

    # ------------------------------------------------------------- checkpoint

    def save(self, path) -> None:
        """Binary snapshot: magic, version, capacity, dim, cursor, count,
        then the raw little-endian float64 buffer."""
        header = _MAGIC + struct.pack(
            "<IQQQQ", _VERSION, self.capacity, self.dim, self.cursor, self.count
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.buffer.astype("<f8", copy=False).tobytes())

    @classmethod
    def load(cls, path) -> "PatternMemory":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != _MAGIC:
                raise ValueError(f"not a pattern-memory snapshot: bad magic {magic!r}")
            version, cap, dim, cursor, count = struct.unpack("<IQQQQ", fh.read(36))
            if version != _VERSION:
                raise ValueError(f"unsupported snapshot version {version}")
            raw = fh.read(cap * dim * 8)
        mem = cls(int(cap), int(dim))
        mem.buffer = np.frombuffer(raw, dtype="<f8").reshape(cap, dim).astype(np.float64)
        mem.cursor = int(cursor)
        mem.count = int(count)
        return mem
