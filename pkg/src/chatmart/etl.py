"""Extract-transform-load pipeline: stored documents to star-schema rows.

The pipeline is a fixed three-node DAG (extract, then transform, then
load) run by a small explicit executor. Extraction reads the document
store incrementally past a persisted watermark; transformation groups
document fields by their name prefix into the pertinent tables and
splits multi-valued fields into one yes / no / don't know column per
enumerated reference value; loading inserts the rows atomically per
session and persists a fresh schema snapshot.

Runs are idempotent: re-running incrementally with no new documents
loads nothing, and a full rebuild produces a schema whose query results
match the incremental one. Rejected documents are quarantined to a side
file with reasons, never silently dropped.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

from .docstore import EPOCH_WATERMARK, DocumentStore
from .lexicon import DONT_KNOW
from .warehouse import (
    MultiValueSpec,
    SchemaManifest,
    StarSchemaStore,
    create_schema,
)

logger = logging.getLogger(__name__)


class EtlError(Exception):
    pass


class ConcurrentRunError(EtlError):
    """Another pipeline run holds the writer lock."""


class MissingSessionIdError(EtlError):
    pass


@dataclass(frozen=True)
class FieldReject:
    field: str
    value: Any
    reason: str


@dataclass
class TransformOutput:
    fact_row: dict[str, Any]
    dimension_rows: dict[str, dict[str, Any]]
    rejects: list[FieldReject]


@dataclass
class PipelineRun:
    run_id: str
    mode: str
    started_at: str
    finished_at: str | None = None
    watermark_before: str = EPOCH_WATERMARK
    watermark_after: str = EPOCH_WATERMARK
    documents_extracted: int = 0
    sessions_loaded: int = 0
    documents_rejected: int = 0
    rows_loaded: dict[str, int] = field(default_factory=dict)
    reject_reasons: dict[str, int] = field(default_factory=dict)
    field_anomalies: int = 0
    stage_seconds: dict[str, float] = field(default_factory=dict)
    status: str = "running"
    error: str | None = None

    def conservation_ok(self) -> bool:
        return self.documents_extracted == self.sessions_loaded + self.documents_rejected

    def to_dict(self) -> dict:
        return asdict(self)


# -- field mapping and splitting -------------------------------------------


def map_fields(
    document: dict[str, Any], manifest: SchemaManifest
) -> tuple[dict[str, list[tuple[str, Any]]], dict[str, Any], list[FieldReject]]:
    """Group document fields by their longest matching declared prefix.

    Returns (table -> ordered (field, value) pairs, metadata fields,
    rejects). Anomalies are data, not failures: a field with no prefix
    mapping lands in rejects.
    """
    groups: dict[str, list[tuple[str, Any]]] = {}
    metadata: dict[str, Any] = {}
    rejects: list[FieldReject] = []
    for name, value in document.items():
        if name in manifest.metadata_fields:
            metadata[name] = value
            continue
        table = manifest.table_for_field(name)
        if table is None:
            rejects.append(FieldReject(name, value, "no prefix mapping"))
            continue
        groups.setdefault(table, []).append((name, value))
    return groups, metadata, rejects


def split_multivalue(
    field_name: str, value: Any, spec: MultiValueSpec
) -> tuple[list[tuple[str, str]], list[FieldReject]]:
    """Split one multi-valued field into (column, yes|no|don't know) pairs.

    Listed reference values become yes and the rest of the enumeration
    no; the no-answer marker turns every column don't know; None (the
    gate question was answered no) turns every column no. A listed value
    outside the enumeration is rejected individually, the rest is kept.
    """
    columns = [col for _, col in spec.members]
    if isinstance(value, str) and value == DONT_KNOW:
        return [(c, DONT_KNOW) for c in columns], []
    if value is None:
        return [(c, "no") for c in columns], []
    items = value if isinstance(value, list) else [value]
    rejects = []
    present: set[str] = set()
    for item in items:
        column = spec.column_for(item) if isinstance(item, str) else None
        if column is None:
            rejects.append(FieldReject(field_name, item, "value not in enumeration"))
        else:
            present.add(column)
    pairs = [(c, "yes" if c in present else "no") for c in columns]
    return pairs, rejects


def _convert_scalar(kind: str, value: Any) -> tuple[Any, str | None]:
    """Coerce a document value for a scalar column; (value, reject reason)."""
    if kind == "enum":
        if value is None:
            return "no", None
        if value in ("yes", "no", DONT_KNOW):
            return value, None
        if value is True:
            return "yes", None
        if value is False:
            return "no", None
        return None, f"not a yes/no/don't know answer: {value!r}"
    if kind == "int":
        if value is None:
            return None, None
        try:
            parsed = int(str(value))
        except ValueError:
            return None, f"not an integer: {value!r}"
        if parsed < 0:
            return None, f"negative: {value!r}"
        return parsed, None
    if kind == "bool":
        if value is None or isinstance(value, bool):
            return value, None
        return None, f"not a boolean: {value!r}"
    if value is None or isinstance(value, str):
        return value, None
    return None, f"not text: {value!r}"


def transform(document: dict[str, Any], manifest: SchemaManifest) -> TransformOutput:
    """Deterministic composition of prefix grouping plus multi-value
    splitting plus scalar conversion. Every document field ends up
    mapped to a column, mapped to metadata, or listed in rejects. The
    surrogate keys are placeholders here; the load stage assigns them.
    """
    session_id = document.get("session_id")
    if not isinstance(session_id, str) or not session_id:
        raise MissingSessionIdError("document has no session_id")

    groups, metadata, rejects = map_fields(document, manifest)
    dimension_rows: dict[str, dict[str, Any]] = {}
    for table, pairs in groups.items():
        dim = manifest.dimension(table)
        row: dict[str, Any] = {}
        for field_name, value in pairs:
            mv = manifest.multi_value_for(field_name)
            if mv is not None and mv.table == table:
                split, mv_rejects = split_multivalue(field_name, value, mv)
                row.update(split)
                rejects.extend(mv_rejects)
                continue
            scalar = manifest.scalar_for(field_name)
            if scalar is not None and scalar.table == table:
                kind = dim.column(scalar.column).kind
                converted, reason = _convert_scalar(kind, value)
                if reason is not None:
                    rejects.append(FieldReject(field_name, value, reason))
                else:
                    row[scalar.column] = converted
                continue
            rejects.append(FieldReject(field_name, value, "no column mapping"))
        if row:
            dimension_rows[table] = row

    return TransformOutput(
        fact_row={manifest.fact_key: session_id},
        dimension_rows=dimension_rows,
        rejects=rejects,
    )


# -- minimal DAG executor ----------------------------------------------------


@dataclass
class DagNode:
    name: str
    fn: Callable[[dict], None]
    upstream: tuple[str, ...] = ()


class Dag:
    """Tiny explicit DAG: named nodes, declared edges, topological run."""

    def __init__(self):
        self.nodes: dict[str, DagNode] = {}

    def add(self, name: str, fn: Callable[[dict], None], upstream: tuple[str, ...] = ()):
        if name in self.nodes:
            raise EtlError(f"duplicate DAG node {name!r}")
        for up in upstream:
            if up not in self.nodes:
                raise EtlError(f"node {name!r} depends on undeclared {up!r}")
        self.nodes[name] = DagNode(name, fn, upstream)

    def order(self) -> list[str]:
        done: list[str] = []
        pending = dict(self.nodes)
        while pending:
            ready = [n for n, node in pending.items() if all(u in done for u in node.upstream)]
            if not ready:
                raise EtlError("DAG has a cycle")
            for name in ready:
                done.append(name)
                del pending[name]
        return done

    def run(self, context: dict) -> dict[str, float]:
        durations = {}
        for name in self.order():
            t0 = time.perf_counter()
            self.nodes[name].fn(context)
            durations[name] = time.perf_counter() - t0
        return durations


# -- the pipeline -------------------------------------------------------------


class _Timed:
    """Wrap an iterator, accumulating the seconds spent producing items.

    The three stages hand batches to each other lazily; this keeps the
    per-stage timing honest without materializing the whole store.
    """

    def __init__(self, inner: Iterator, sink: dict[str, float], key: str):
        self.inner = inner
        self.sink = sink
        self.key = key

    def __iter__(self):
        return self

    def __next__(self):
        t0 = time.perf_counter()
        try:
            return next(self.inner)
        finally:
            self.sink[self.key] = self.sink.get(self.key, 0.0) + time.perf_counter() - t0


class EtlPipeline:
    """Owns the watermark, the writer lock, the quarantine file, and the
    run history for one document store plus schema snapshot pair."""

    def __init__(
        self,
        store: DocumentStore,
        manifest: SchemaManifest,
        state_dir: str | Path,
        snapshot_path: str | Path,
        batch_size: int = 2000,
    ):
        self.store = store
        self.manifest = manifest
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.snapshot_path = Path(snapshot_path)
        self.batch_size = batch_size
        self.state_path = self.state_dir / "etl_state.json"
        self.runs_path = self.state_dir / "runs.jsonl"
        self.quarantine_path = self.state_dir / "quarantine.jsonl"
        self.lock_path = self.state_dir / "etl.lock"

    # -- state ----------------------------------------------------------

    def watermark(self) -> str:
        if self.state_path.exists():
            with open(self.state_path, "r", encoding="utf-8") as f:
                return json.load(f).get("watermark", EPOCH_WATERMARK)
        return EPOCH_WATERMARK

    def _write_state(self, watermark: str) -> None:
        tmp = self.state_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump({"watermark": watermark}, f)
        os.replace(tmp, self.state_path)

    def status(self, limit: int | None = None) -> list[dict]:
        if not self.runs_path.exists():
            return []
        with open(self.runs_path, "r", encoding="utf-8") as f:
            runs = [json.loads(line) for line in f if line.strip()]
        return runs[-limit:] if limit else runs

    def _append_run(self, run: PipelineRun) -> None:
        with open(self.runs_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(run.to_dict()) + "\n")

    def _quarantine(self, entries: Iterable[dict]) -> None:
        entries = list(entries)
        if not entries:
            return
        with open(self.quarantine_path, "a", encoding="utf-8") as f:
            for entry in entries:
                f.write(json.dumps(entry, ensure_ascii=False) + "\n")

    # -- locking ----------------------------------------------------------

    def _acquire_lock(self) -> None:
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = self.lock_path.read_text(encoding="utf-8").strip() or "?"
            if holder.isdigit() and not _pid_alive(int(holder)):
                # Stale lock from a dead process; steal it.
                self.lock_path.unlink(missing_ok=True)
                return self._acquire_lock()
            raise ConcurrentRunError(f"pipeline already running (pid {holder})") from None
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))

    def _release_lock(self) -> None:
        self.lock_path.unlink(missing_ok=True)

    # -- the run ----------------------------------------------------------

    def run(self, mode: str = "incremental") -> PipelineRun:
        """Execute the DAG once. Incremental mode processes only
        documents past the watermark into the existing schema; full mode
        rebuilds everything from the epoch into a fresh schema and swaps
        the snapshot atomically. Returns the run report; on failure the
        report is marked failed and the watermark stays unchanged.
        """
        if mode not in ("incremental", "full"):
            raise EtlError(f"unknown mode {mode!r}")
        self._acquire_lock()
        run = PipelineRun(
            run_id=uuid.uuid4().hex[:12],
            mode=mode,
            started_at=_now(),
            watermark_before=self.watermark() if mode == "incremental" else EPOCH_WATERMARK,
        )
        quarantined: list[dict] = []
        try:
            context: dict[str, Any] = {"timing": {}}
            schema_holder: dict[str, StarSchemaStore] = {}

            def extract(ctx: dict) -> None:
                start = run.watermark_before
                ctx["batches"] = _Timed(
                    self.store.iter_since(start, self.batch_size), ctx["timing"], "extract"
                )

            def do_transform(ctx: dict) -> None:
                def gen():
                    for documents, batch_watermark in ctx["batches"]:
                        out = []
                        for document in documents:
                            run.documents_extracted += 1
                            try:
                                out.append((transform(document, self.manifest), document))
                            except MissingSessionIdError as exc:
                                run.documents_rejected += 1
                                _count(run.reject_reasons, "missing session_id")
                                quarantined.append(
                                    {"kind": "document", "reason": str(exc), "document": document}
                                )
                        yield out, batch_watermark

                ctx["transformed"] = _Timed(gen(), ctx["timing"], "transform")

            def load(ctx: dict) -> None:
                if mode == "full" or not self.snapshot_path.exists():
                    schema = create_schema(self.manifest)
                else:
                    schema, header = StarSchemaStore.load_snapshot(self.snapshot_path)
                    if header["manifest"] != self.manifest.raw:
                        raise EtlError(
                            "schema manifest changed since the last load; run a full rebuild"
                        )
                max_id = run.watermark_before
                for batch, batch_watermark in ctx["transformed"]:
                    for output, document in batch:
                        session_id = output.fact_row[self.manifest.fact_key]
                        if schema.has_session(session_id):
                            run.documents_rejected += 1
                            _count(run.reject_reasons, "duplicate session_id")
                            quarantined.append(
                                {
                                    "kind": "document",
                                    "reason": "duplicate session_id",
                                    "session_id": session_id,
                                }
                            )
                            continue
                        schema.insert_session(output.fact_row, output.dimension_rows)
                        run.sessions_loaded += 1
                        _count(run.rows_loaded, self.manifest.fact_table)
                        for table in output.dimension_rows:
                            _count(run.rows_loaded, table)
                        for reject in output.rejects:
                            run.field_anomalies += 1
                            _count(run.reject_reasons, reject.reason)
                            quarantined.append(
                                {
                                    "kind": "field",
                                    "session_id": session_id,
                                    "field": reject.field,
                                    "value": reject.value,
                                    "reason": reject.reason,
                                }
                            )
                    max_id = max(max_id, batch_watermark)
                schema.snapshot_to(self.snapshot_path)
                schema_holder["schema"] = schema
                ctx["watermark_after"] = max_id

            dag = Dag()
            dag.add("extract", extract)
            dag.add("transform", do_transform, upstream=("extract",))
            dag.add("load", load, upstream=("transform",))
            node_seconds = dag.run(context)

            run.watermark_after = context.get("watermark_after", run.watermark_before)
            if run.watermark_after < self.watermark() and mode == "incremental":
                raise EtlError("watermark would move backwards")
            self._write_state(run.watermark_after)
            self._quarantine(quarantined)
            # The stages stream into each other, so the raw counters nest:
            # extract time is inside the transform counter, and both are
            # inside the load node's wall time. Unnest before reporting.
            extract_s = context["timing"].get("extract", 0.0)
            transform_s = max(0.0, context["timing"].get("transform", 0.0) - extract_s)
            load_s = max(0.0, node_seconds["load"] - extract_s - transform_s)
            run.stage_seconds = {
                "extract": extract_s,
                "transform": transform_s,
                "load": load_s,
            }
            run.status = "succeeded"
        except Exception as exc:  # storage failures leave the watermark alone
            run.status = "failed"
            run.error = f"{type(exc).__name__}: {exc}"
            logger.error("etl run %s failed: %s", run.run_id, run.error)
        finally:
            run.finished_at = _now()
            self._append_run(run)
            self._release_lock()
        logger.info("etl run %s", json.dumps(run.to_dict()))
        return run


class EtlScheduler:
    """Interval scheduler: kicks an incremental run every N seconds.
    Failures are logged and the loop keeps going."""

    def __init__(self, pipeline: EtlPipeline, interval_seconds: float = 600.0):
        self.pipeline = pipeline
        self.interval_seconds = interval_seconds
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        if self._thread is not None:
            return
        self._thread = threading.Thread(target=self._loop, daemon=True, name="etl-scheduler")
        self._thread.start()

    def _loop(self) -> None:
        while not self._stop.wait(self.interval_seconds):
            try:
                self.pipeline.run("incremental")
            except ConcurrentRunError:
                logger.warning("scheduled etl run skipped: already running")
            except Exception:
                logger.exception("scheduled etl run crashed")

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None


def _count(counter: dict[str, int], key: str) -> None:
    counter[key] = counter.get(key, 0) + 1


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True
