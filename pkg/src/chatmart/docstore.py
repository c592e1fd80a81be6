"""Schemaless session-document store: one JSON file per document.

Documents live under <root>/documents/<session_id>.json; the document
ID doubles as the session ID. An append-only manifest (one ID per line)
records commit order and accelerates watermark reads: a document is
visible to readers exactly when its manifest line is written. IDs are
time-prefixed and lexicographically sortable, so ID order approximates
insertion order and a stored watermark (the last processed ID) lets the
ETL pipeline read incrementally.

Concurrency contract: any number of readers, one writer per collection.
"""

from __future__ import annotations

import json
import os
import threading
import time
from pathlib import Path
from typing import Any, Iterable

EPOCH_WATERMARK = ""

# Crockford base32: lexicographic order equals numeric order.
_B32 = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"
_ID_LEN = 26  # 128 bits: 48-bit millisecond timestamp + 80 random bits

_id_lock = threading.Lock()
_last_id_int = 0


class DocumentStoreError(Exception):
    pass


class DuplicateSessionIdError(DocumentStoreError):
    pass


class DocumentNotFoundError(DocumentStoreError):
    pass


class InvalidDocumentError(DocumentStoreError):
    pass


def _encode_b32(value: int) -> str:
    chars = []
    for _ in range(_ID_LEN):
        chars.append(_B32[value & 31])
        value >>= 5
    return "".join(reversed(chars))


def format_session_id(timestamp_ms: int, random_bits: int) -> str:
    """Deterministic ID encoding: 48-bit millisecond timestamp prefix
    plus 80 caller-chosen bits, rendered in sortable base-32."""
    value = ((timestamp_ms & (1 << 48) - 1) << 80) | (random_bits & (1 << 80) - 1)
    return _encode_b32(value)


def new_session_id(timestamp_ms: int | None = None, random_bits: int | None = None) -> str:
    """Time-prefixed 128-bit identifier in sortable base-32 text form.

    Strictly increasing within a process even when the clock stalls or
    steps backwards, so freshly written IDs never fall behind a
    watermark taken from an earlier write.
    """
    global _last_id_int
    if timestamp_ms is None:
        timestamp_ms = time.time_ns() // 1_000_000
    if random_bits is None:
        random_bits = int.from_bytes(os.urandom(10), "big")
    value = ((timestamp_ms & (1 << 48) - 1) << 80) | (random_bits & (1 << 80) - 1)
    with _id_lock:
        if value <= _last_id_int:
            value = _last_id_int + 1
        _last_id_int = value
    return _encode_b32(value)


def validate_document_fields(fields: dict[str, Any]) -> None:
    """Check the value domain: text, boolean, list of text (no
    duplicates), or None."""
    if not isinstance(fields, dict):
        raise InvalidDocumentError("document must be a field-value mapping")
    for name, value in fields.items():
        if not isinstance(name, str) or not name:
            raise InvalidDocumentError(f"bad field name {name!r}")
        if value is None or isinstance(value, (str, bool)):
            continue
        if isinstance(value, list):
            if not all(isinstance(v, str) for v in value):
                raise InvalidDocumentError(f"field {name!r}: list values must be text")
            if len(set(value)) != len(value):
                raise InvalidDocumentError(f"field {name!r}: duplicate list values")
            continue
        raise InvalidDocumentError(
            f"field {name!r}: unsupported value type {type(value).__name__}"
        )


class DocumentStore:
    """File-backed collection of session documents."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.documents_dir = self.root / "documents"
        self.manifest_path = self.root / "manifest.log"
        self.documents_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path.touch(exist_ok=True)
        self._ids: list[str] = []
        self._id_set: set[str] = set()
        self._manifest_size = -1
        self._refresh_index()

    # -- index maintenance ------------------------------------------------

    def _refresh_index(self) -> None:
        size = self.manifest_path.stat().st_size
        if size == self._manifest_size:
            return
        with open(self.manifest_path, "r", encoding="utf-8") as f:
            ids = [line.strip() for line in f if line.strip()]
        ids.sort()
        self._ids = ids
        self._id_set = set(ids)
        self._manifest_size = size

    def __len__(self) -> int:
        self._refresh_index()
        return len(self._ids)

    def all_ids(self) -> list[str]:
        self._refresh_index()
        return list(self._ids)

    # -- writes -----------------------------------------------------------

    def _doc_path(self, session_id: str) -> Path:
        return self.documents_dir / f"{session_id}.json"

    def _prepare(self, document: dict[str, Any]) -> tuple[str, bytes]:
        validate_document_fields(document)
        session_id = document.get("session_id")
        if session_id is None:
            session_id = new_session_id()
        elif not isinstance(session_id, str) or not session_id:
            raise InvalidDocumentError("session_id must be a non-empty string")
        if session_id in self._id_set:
            raise DuplicateSessionIdError(session_id)
        ordered = {"session_id": session_id}
        ordered.update((k, v) for k, v in document.items() if k != "session_id")
        payload = json.dumps(ordered, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
        return session_id, payload

    def _commit_ids(self, ids: list[str]) -> None:
        with open(self.manifest_path, "a", encoding="utf-8") as f:
            f.write("".join(f"{i}\n" for i in ids))
            f.flush()
            os.fsync(f.fileno())
        for session_id in ids:
            self._insort(session_id)
        self._manifest_size = self.manifest_path.stat().st_size

    def _insort(self, session_id: str) -> None:
        import bisect

        bisect.insort(self._ids, session_id)
        self._id_set.add(session_id)

    def put_document(self, document: dict[str, Any]) -> str:
        """Durably store one document; returns its (possibly assigned)
        session ID. Rejects duplicates and invalid field values."""
        self._refresh_index()
        session_id, payload = self._prepare(document)
        tmp = self._doc_path(session_id).with_suffix(".tmp")
        with open(tmp, "wb") as f:
            f.write(payload)
        os.replace(tmp, self._doc_path(session_id))
        self._commit_ids([session_id])
        return session_id

    def put_documents(self, documents: Iterable[dict[str, Any]]) -> list[str]:
        """Bulk ingest: documents become visible in one manifest append."""
        self._refresh_index()
        ids: list[str] = []
        batch_seen: set[str] = set()
        for document in documents:
            session_id, payload = self._prepare(document)
            if session_id in batch_seen:
                raise DuplicateSessionIdError(session_id)
            with open(self._doc_path(session_id), "wb") as f:
                f.write(payload)
            ids.append(session_id)
            batch_seen.add(session_id)
        if ids:
            self._commit_ids(ids)
        return ids

    # -- reads ------------------------------------------------------------

    def get_document(self, session_id: str) -> dict[str, Any]:
        self._refresh_index()
        if session_id not in self._id_set:
            raise DocumentNotFoundError(session_id)
        with open(self._doc_path(session_id), "r", encoding="utf-8") as f:
            return json.load(f)

    def list_since(
        self, watermark: str = EPOCH_WATERMARK, limit: int | None = None
    ) -> tuple[list[dict[str, Any]], str]:
        """Documents with ID strictly greater than the watermark, in ID
        order, at most limit of them; plus the new watermark (the last
        returned ID, or the input watermark when nothing qualified)."""
        import bisect

        self._refresh_index()
        start = bisect.bisect_right(self._ids, watermark)
        selected = self._ids[start:] if limit is None else self._ids[start:start + limit]
        documents = [self.get_document(i) for i in selected]
        new_watermark = selected[-1] if selected else watermark
        return documents, new_watermark

    def iter_since(self, watermark: str = EPOCH_WATERMARK, batch_size: int = 2000):
        """Yield batches of (documents, watermark) until exhausted."""
        current = watermark
        while True:
            documents, current = self.list_since(current, batch_size)
            if not documents:
                return
            yield documents, current
