"""Vector database of (embedding, report) pairs with exact cosine top-k.

The store is immutable after ingest. Retrieval is an exhaustive scan over
raw embeddings (no centering, no approximation): at desk scale exactness
is cheap and keeps results testable against a naive oracle.

Persistence formats
-------------------
JSONL: one object per line, ``{"id": str, "vector": [float x d],
"report": str | null}``.

Binary (little-endian throughout)::

    magic  b"CEMB"
    u32    version = 1
    u32    dim
    u64    count
    f32    count x dim vector rows, in id-sorted order
    u64    blob length
    bytes  UTF-8 blob of concatenated id/report strings
    u64[4] per record (id-sorted): id offset, id length,
           report offset, report length; report offset == 2**64 - 1
           marks an absent report

Vectors are held as float32 so a write/read cycle is lossless.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import StoreError

_MAGIC = b"CEMB"
_VERSION = 1
_NO_REPORT = 2**64 - 1


@dataclass(frozen=True)
class EmbeddingRecord:
    """One stored case: id, float32 embedding, optional report text."""

    id: str
    vector: np.ndarray
    report: str | None = None


@dataclass(frozen=True)
class RetrievalResult:
    """Top-k hits sorted by similarity descending, ties by id ascending."""

    hits: tuple[tuple[str, float, str | None], ...]
    k_requested: int

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(h[0] for h in self.hits)

    @property
    def reports(self) -> tuple[str | None, ...]:
        return tuple(h[2] for h in self.hits)


class EmbeddingStore:
    """Immutable collection of embedding records sharing one dimension."""

    def __init__(self, dimension: int, records: list[EmbeddingRecord]):
        if dimension <= 0:
            raise StoreError(f"dimension must be positive, got {dimension}")
        self._dimension = dimension
        self._records = list(records)
        self._ids = [r.id for r in self._records]
        self._index = {r.id: i for i, r in enumerate(self._records)}
        if self._records:
            self._matrix = np.stack([r.vector for r in self._records]).astype(
                np.float64
            )
            if self._matrix.shape[1] != dimension:
                raise StoreError(
                    f"records have dimension {self._matrix.shape[1]}, expected {dimension}"
                )
        else:
            self._matrix = np.zeros((0, dimension), dtype=np.float64)
        self._norms = np.linalg.norm(self._matrix, axis=1)

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def records(self) -> tuple[EmbeddingRecord, ...]:
        return tuple(self._records)

    @property
    def norms(self) -> np.ndarray:
        return self._norms.copy()

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._index

    def get(self, record_id: str) -> EmbeddingRecord:
        try:
            return self._records[self._index[record_id]]
        except KeyError:
            raise StoreError(f"unknown record id {record_id!r}") from None

    def top_k(
        self, query: np.ndarray, k: int, exclude_id: str | None = None
    ) -> RetrievalResult:
        """Exact top-k by cosine similarity over a full scan.

        ``exclude_id`` drops one record before ranking (self-retrieval
        guard for queries drawn from the store itself).
        """
        if len(self._records) == 0:
            raise StoreError("cannot query an empty store")
        if k <= 0:
            raise StoreError(f"k must be positive, got {k}")
        query = np.asarray(query, dtype=np.float64).reshape(-1)
        if query.shape[0] != self._dimension:
            raise StoreError(
                f"query dimension {query.shape[0]} != store dimension {self._dimension}"
            )
        if not np.all(np.isfinite(query)):
            raise StoreError("query vector has non-finite components")
        query_norm = float(np.linalg.norm(query))
        if query_norm == 0.0:
            raise StoreError("query vector has zero norm")

        sims = (self._matrix @ query) / (self._norms * query_norm)
        scored = [
            (record.id, float(sims[i]), record.report)
            for i, record in enumerate(self._records)
            if record.id != exclude_id
        ]
        scored.sort(key=lambda hit: (-hit[1], hit[0]))
        return RetrievalResult(hits=tuple(scored[:k]), k_requested=k)


def _validate_vector(record_id: str, raw, expected_dim: int) -> np.ndarray:
    try:
        vector = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise StoreError(f"record {record_id!r}: vector is not numeric ({exc})") from None
    if vector.ndim != 1 or vector.shape[0] != expected_dim:
        raise StoreError(
            f"record {record_id!r}: vector has dimension "
            f"{vector.shape[0] if vector.ndim == 1 else vector.shape}, expected {expected_dim}"
        )
    vector = vector.astype(np.float32)
    if not np.all(np.isfinite(vector)):
        raise StoreError(f"record {record_id!r}: vector has non-finite components")
    if float(np.linalg.norm(vector)) == 0.0:
        raise StoreError(f"record {record_id!r}: vector has zero norm")
    return vector


def ingest(source: Iterable[Mapping], expected_dim: int) -> EmbeddingStore:
    """Build a store from parsed records, validating as it goes.

    Rejects dimension mismatches (naming the offending id), duplicate ids,
    non-finite components, and zero-norm vectors. Ingestion order is kept.
    """
    if expected_dim <= 0:
        raise StoreError(f"expected_dim must be positive, got {expected_dim}")
    records: list[EmbeddingRecord] = []
    seen: set[str] = set()
    for row in source:
        try:
            record_id = row["id"]
            raw_vector = row["vector"]
        except KeyError as exc:
            raise StoreError(f"record missing required field {exc}") from None
        if not isinstance(record_id, str) or not record_id:
            raise StoreError(f"record id {record_id!r} is not a non-empty string")
        if record_id in seen:
            raise StoreError(f"duplicate record id {record_id!r}")
        seen.add(record_id)
        vector = _validate_vector(record_id, raw_vector, expected_dim)
        report = row.get("report")
        if report is not None and not isinstance(report, str):
            raise StoreError(f"record {record_id!r}: report is not text")
        records.append(EmbeddingRecord(record_id, vector, report))
    return EmbeddingStore(expected_dim, records)


def top_k(
    store: EmbeddingStore, query: np.ndarray, k: int, exclude_id: str | None = None
) -> RetrievalResult:
    return store.top_k(query, k, exclude_id=exclude_id)


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    """Yield one parsed object per non-empty line."""
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise StoreError(f"{path}:{lineno}: invalid JSON ({exc})") from None


def ingest_jsonl(path: str | Path, expected_dim: int) -> EmbeddingStore:
    return ingest(iter_jsonl(path), expected_dim)


def write_store(store: EmbeddingStore, path: str | Path) -> None:
    """Serialize to the binary format; rows and table are id-sorted."""
    ordered = sorted(store.records, key=lambda r: r.id)
    blob = bytearray()
    table = bytearray()
    for record in ordered:
        id_bytes = record.id.encode("utf-8")
        id_off, id_len = len(blob), len(id_bytes)
        blob.extend(id_bytes)
        if record.report is None:
            rep_off, rep_len = _NO_REPORT, 0
        else:
            rep_bytes = record.report.encode("utf-8")
            rep_off, rep_len = len(blob), len(rep_bytes)
            blob.extend(rep_bytes)
        table.extend(struct.pack("<QQQQ", id_off, id_len, rep_off, rep_len))

    with open(path, "wb") as handle:
        handle.write(_MAGIC)
        handle.write(struct.pack("<IIQ", _VERSION, store.dimension, len(ordered)))
        for record in ordered:
            handle.write(record.vector.astype("<f4").tobytes())
        handle.write(struct.pack("<Q", len(blob)))
        handle.write(bytes(blob))
        handle.write(bytes(table))


def read_store(path: str | Path) -> EmbeddingStore:
    """Load a binary store file written by write_store."""
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise StoreError(f"{path}: bad magic bytes {data[:4]!r}")
    version, dim, count = struct.unpack_from("<IIQ", data, 4)
    if version != _VERSION:
        raise StoreError(f"{path}: unsupported version {version}")
    offset = 4 + struct.calcsize("<IIQ")
    vec_bytes = count * dim * 4
    vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
    vectors = vectors.reshape(count, dim) if count else vectors.reshape(0, dim)
    offset += vec_bytes
    (blob_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    blob = data[offset : offset + blob_len]
    offset += blob_len

    records = []
    for i in range(count):
        id_off, id_len, rep_off, rep_len = struct.unpack_from("<QQQQ", data, offset + 32 * i)
        record_id = blob[id_off : id_off + id_len].decode("utf-8")
        if rep_off == _NO_REPORT:
            report = None
        else:
            report = blob[rep_off : rep_off + rep_len].decode("utf-8")
        records.append(EmbeddingRecord(record_id, vectors[i].copy(), report))
    return EmbeddingStore(dim, records)
