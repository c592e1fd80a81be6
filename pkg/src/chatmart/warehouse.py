"""Star-schema store: one fact table plus dimension tables, held in
column-oriented in-memory buffers with an on-disk snapshot file.

The fact table is keyed by session ID and carries one surrogate foreign
key per dimension table; dimension rows get per-table monotonically
increasing 64-bit surrogate keys assigned at insertion (dense, starting
at 1, so key k lives at row k-1). Answer columns hold the three-valued
yes / no / don't know domain and are stored as small integer codes for
cache-friendly scans; a zero code is the absent answer.

Concurrency: many readers or one writer. Inserts become visible by
bumping the fact table's committed row count last, so a reader never
observes a torn session.
"""

from __future__ import annotations

import io
import json
import uuid
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

ENUM_NULL, ENUM_YES, ENUM_NO, ENUM_DONT_KNOW = 0, 1, 2, 3
ENUM_VALUES = {None: ENUM_NULL, "yes": ENUM_YES, "no": ENUM_NO, "don't know": ENUM_DONT_KNOW}
ENUM_LABELS = {ENUM_NULL: None, ENUM_YES: "yes", ENUM_NO: "no", ENUM_DONT_KNOW: "don't know"}

INT_NULL = -1
BOOL_NULL, BOOL_FALSE, BOOL_TRUE = 255, 0, 1

SNAPSHOT_FORMAT = "chatmart-star-snapshot"
SNAPSHOT_VERSION = 1

COLUMN_KINDS = ("enum", "text", "int", "bool")


class SchemaError(ValueError):
    """Invalid manifest or insert violating the schema."""


class DuplicateSessionError(SchemaError):
    pass


class DomainError(SchemaError):
    """Value outside a column's declared domain."""


class UnknownTableError(KeyError):
    pass


class UnknownColumnError(KeyError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # enum | text | int | bool
    display: str = ""


@dataclass(frozen=True)
class DimensionSpec:
    name: str
    surrogate_key: str
    columns: tuple[ColumnSpec, ...]

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise UnknownColumnError(f"{self.name}.{name}")


@dataclass(frozen=True)
class MultiValueSpec:
    """A multi-valued document field split into one enum column per
    enumerated reference value."""

    field: str
    table: str
    members: tuple[tuple[str, str], ...]  # (reference value, column name)
    display: str = ""

    def values(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.members)

    def column_for(self, value: str) -> str | None:
        for v, col in self.members:
            if v == value:
                return col
        return None


@dataclass(frozen=True)
class ScalarFieldSpec:
    field: str
    table: str
    column: str


@dataclass(frozen=True)
class SchemaManifest:
    fact_table: str
    fact_key: str
    dimensions: tuple[DimensionSpec, ...]
    prefix_map: tuple[tuple[str, str], ...]  # (field prefix, table)
    multi_value: tuple[MultiValueSpec, ...]
    scalar_fields: tuple[ScalarFieldSpec, ...]
    metadata_fields: tuple[str, ...]
    demographics: dict[str, tuple[str, str]]  # "age"/"sex" -> (table, column)
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def dimension(self, name: str) -> DimensionSpec:
        for d in self.dimensions:
            if d.name == name:
                return d
        raise UnknownTableError(name)

    def multi_value_for(self, field_name: str) -> MultiValueSpec | None:
        for mv in self.multi_value:
            if mv.field == field_name:
                return mv
        return None

    def scalar_for(self, field_name: str) -> ScalarFieldSpec | None:
        for sf in self.scalar_fields:
            if sf.field == field_name:
                return sf
        return None

    def table_for_field(self, field_name: str) -> str | None:
        """Longest declared prefix wins; None means no mapping."""
        best: tuple[int, str] | None = None
        for prefix, table in self.prefix_map:
            if field_name.startswith(prefix):
                if best is None or len(prefix) > best[0]:
                    best = (len(prefix), table)
        return best[1] if best else None

    def resolve_column(self, column: str) -> tuple[str, ColumnSpec]:
        """Find the dimension owning a column name (column names are
        unique across the shipped schema)."""
        for dim in self.dimensions:
            for c in dim.columns:
                if c.name == column:
                    return dim.name, c
        raise UnknownColumnError(column)


def parse_manifest(data: dict) -> SchemaManifest:
    fact = data.get("fact")
    if fact is None:
        raise SchemaError("manifest is missing the fact table")
    if isinstance(fact, list):
        if len(fact) != 1:
            raise SchemaError(f"manifest must declare exactly one fact table, got {len(fact)}")
        fact = fact[0]

    dims = []
    for ddata in data.get("dimensions", []):
        cols = []
        seen = set()
        for cdata in ddata.get("columns", []):
            if cdata["name"] in seen:
                raise SchemaError(
                    f"dimension {ddata['name']!r}: duplicate column {cdata['name']!r}"
                )
            seen.add(cdata["name"])
            kind = cdata.get("kind", "enum")
            if kind not in COLUMN_KINDS:
                raise SchemaError(
                    f"dimension {ddata['name']!r}: column {cdata['name']!r} "
                    f"has unknown kind {kind!r}"
                )
            cols.append(ColumnSpec(cdata["name"], kind, cdata.get("display", cdata["name"])))
        key = ddata.get("surrogate_key")
        if not key:
            raise SchemaError(f"dimension {ddata['name']!r} has no surrogate key")
        dims.append(DimensionSpec(ddata["name"], key, tuple(cols)))
    if not dims:
        raise SchemaError("a star schema needs at least one dimension table")
    if len({d.name for d in dims}) != len(dims):
        raise SchemaError("duplicate dimension table names")

    manifest = SchemaManifest(
        fact_table=fact["name"],
        fact_key=fact.get("key", "session_id"),
        dimensions=tuple(dims),
        prefix_map=tuple((p["prefix"], p["table"]) for p in data.get("prefix_map", [])),
        multi_value=tuple(
            MultiValueSpec(
                field=mv["field"],
                table=mv["table"],
                members=tuple((m["value"], m["column"]) for m in mv["members"]),
                display=mv.get("display", mv["field"]),
            )
            for mv in data.get("multi_value", [])
        ),
        scalar_fields=tuple(
            ScalarFieldSpec(sf["field"], sf["table"], sf["column"])
            for sf in data.get("scalar_fields", [])
        ),
        metadata_fields=tuple(data.get("metadata_fields", ["session_id"])),
        demographics={
            k: (v["table"], v["column"]) for k, v in data.get("demographics", {}).items()
        },
        raw=data,
    )

    dim_names = {d.name for d in dims}
    if manifest.fact_table in dim_names:
        raise SchemaError(f"fact table {manifest.fact_table!r} clashes with a dimension")
    for prefix, table in manifest.prefix_map:
        if table not in dim_names:
            raise SchemaError(f"prefix {prefix!r} maps to unknown table {table!r}")
    column_owner: dict[str, str] = {}
    for dim in dims:
        for c in dim.columns:
            if c.name in column_owner:
                raise SchemaError(
                    f"column {c.name!r} declared in both {column_owner[c.name]!r} "
                    f"and {dim.name!r}"
                )
            column_owner[c.name] = dim.name
    for mv in manifest.multi_value:
        if mv.table not in dim_names:
            raise SchemaError(f"multi-value field {mv.field!r}: unknown table {mv.table!r}")
        dim = manifest.dimension(mv.table)
        seen_cols: set[str] = set()
        for value, col in mv.members:
            if col in seen_cols:
                raise SchemaError(f"multi-value field {mv.field!r}: duplicate column {col!r}")
            seen_cols.add(col)
            if dim.column(col).kind != "enum":
                raise SchemaError(
                    f"multi-value field {mv.field!r}: column {col!r} must be enum"
                )
    for sf in manifest.scalar_fields:
        manifest.dimension(sf.table).column(sf.column)
    for name, (table, column) in manifest.demographics.items():
        manifest.dimension(table).column(column)
    return manifest


def load_manifest(source: str) -> SchemaManifest:
    return parse_manifest(json.loads(source))


def load_manifest_file(path) -> SchemaManifest:
    with open(path, "r", encoding="utf-8") as f:
        return load_manifest(f.read())


class _Buffer:
    """Growable typed column. Appends are amortized O(1); reads take a
    zero-copy view of the committed prefix."""

    __slots__ = ("arr", "n")

    def __init__(self, dtype):
        self.arr = np.zeros(1024, dtype=dtype)
        self.n = 0

    def append(self, value) -> None:
        if self.n == len(self.arr):
            grown = np.zeros(len(self.arr) * 2, dtype=self.arr.dtype)
            grown[: self.n] = self.arr
            self.arr = grown
        self.arr[self.n] = value
        self.n += 1

    def view(self, n: int) -> np.ndarray:
        return self.arr[:n]


_BUFFER_DTYPES = {"enum": np.uint8, "int": np.int64, "bool": np.uint8}


def _encode(kind: str, value: Any, where: str):
    if kind == "enum":
        if isinstance(value, str) or value is None:
            try:
                return ENUM_VALUES[value]
            except KeyError:
                pass
        raise DomainError(f"{where}: {value!r} is not yes, no, don't know, or null")
    if kind == "int":
        if value is None:
            return INT_NULL
        if isinstance(value, bool) or not isinstance(value, int):
            raise DomainError(f"{where}: {value!r} is not an integer")
        if value < 0:
            raise DomainError(f"{where}: negative values are reserved")
        return value
    if kind == "bool":
        if value is None:
            return BOOL_NULL
        if not isinstance(value, bool):
            raise DomainError(f"{where}: {value!r} is not a boolean")
        return BOOL_TRUE if value else BOOL_FALSE
    # text
    if value is None:
        return ""
    if not isinstance(value, str):
        raise DomainError(f"{where}: {value!r} is not text")
    return value


def _decode(kind: str, value):
    if kind == "enum":
        return ENUM_LABELS[int(value)]
    if kind == "int":
        v = int(value)
        return None if v == INT_NULL else v
    if kind == "bool":
        v = int(value)
        return None if v == BOOL_NULL else bool(v)
    return value if value != "" else None


class _DimensionTable:
    def __init__(self, spec: DimensionSpec):
        self.spec = spec
        self.columns: dict[str, Any] = {}
        for c in spec.columns:
            if c.kind == "text":
                self.columns[c.name] = []
            else:
                self.columns[c.name] = _Buffer(_BUFFER_DTYPES[c.kind])
        self.committed = 0
        self.next_key = 1

    _NULL_CODES = {"enum": ENUM_NULL, "int": INT_NULL, "bool": BOOL_NULL, "text": ""}

    def append_row(self, encoded: dict[str, Any]) -> int:
        key = self.next_key
        for c in self.spec.columns:
            value = encoded.get(c.name)
            if value is None:
                value = self._NULL_CODES[c.kind]
            self.columns[c.name].append(value)
        self.next_key += 1
        self.committed += 1
        return key

    def column_view(self, name: str):
        col = self.columns[name]
        if isinstance(col, list):
            return col[: self.committed]
        return col.view(self.committed)


class StarSchemaStore:
    """Schema handle returned by create_schema: empty typed tables plus
    insert, scan and snapshot operations."""

    def __init__(self, manifest: SchemaManifest):
        self.manifest = manifest
        self.dimensions = {d.name: _DimensionTable(d) for d in manifest.dimensions}
        self.fact_session_ids: list[str] = []
        self.fact_fks = {d.name: _Buffer(np.int64) for d in manifest.dimensions}
        self.fact_committed = 0
        self._session_set: set[str] = set()

    # -- writes -----------------------------------------------------------

    def insert_session(
        self, fact_row: dict[str, Any], dimension_rows: dict[str, dict[str, Any]]
    ) -> dict[str, int | str]:
        """Insert one session atomically: every row becomes visible
        together or the call raises before touching anything.

        dimension_rows maps table name to its column values; tables with
        no answers for this session are simply omitted and their foreign
        key stays null. Returns the assigned keys.
        """
        session_id = fact_row.get(self.manifest.fact_key)
        if not isinstance(session_id, str) or not session_id:
            raise SchemaError("fact row needs a non-empty session id")
        if session_id in self._session_set:
            raise DuplicateSessionError(session_id)

        encoded_rows: dict[str, dict[str, Any]] = {}
        for table, values in dimension_rows.items():
            if table not in self.dimensions:
                raise UnknownTableError(table)
            spec = self.dimensions[table].spec
            declared = {c.name: c for c in spec.columns}
            encoded: dict[str, Any] = {}
            for col, value in values.items():
                if col not in declared:
                    raise UnknownColumnError(f"{table}.{col}")
                encoded[col] = _encode(declared[col].kind, value, f"{table}.{col}")
            encoded_rows[table] = encoded

        keys: dict[str, int | str] = {self.manifest.fact_key: session_id}
        for table, encoded in encoded_rows.items():
            dim = self.dimensions[table]
            keys[dim.spec.surrogate_key] = dim.append_row(encoded)
        self.fact_session_ids.append(session_id)
        for name, dim in self.dimensions.items():
            fk = keys.get(dim.spec.surrogate_key, 0)
            self.fact_fks[name].append(fk)
        self._session_set.add(session_id)
        self.fact_committed += 1  # commit point: the session is now visible
        return keys

    # -- reads ------------------------------------------------------------

    @property
    def session_count(self) -> int:
        return self.fact_committed

    def has_session(self, session_id: str) -> bool:
        return session_id in self._session_set

    def scan_join(
        self,
        dimension_names: list[str],
        columns: list[str],
        predicate: dict[str, Any] | None = None,
        chunk_size: int = 8192,
    ) -> Iterator[tuple]:
        """Stream (session_id, *column values) over the fact table joined
        with the named dimensions, filtered by column = value equality
        conjunctions. Bounded memory: works in fixed-size chunks.

        Column and predicate names are bare column names (unique across
        the schema); each must belong to one of the joined dimensions. A
        session with no row in a joined dimension yields None for that
        dimension's columns and never satisfies an equality predicate
        on them.
        """
        n = self.fact_committed
        for name in dimension_names:
            if name not in self.dimensions:
                raise UnknownTableError(name)

        def locate(col: str) -> tuple[str, ColumnSpec]:
            for name in dimension_names:
                spec = self.dimensions[name].spec
                for c in spec.columns:
                    if c.name == col:
                        return name, c
            raise UnknownColumnError(col)

        out_cols = [locate(c) for c in columns]
        preds = [(locate(c), v) for c, v in (predicate or {}).items()]

        for start in range(0, n, chunk_size):
            stop = min(start + chunk_size, n)
            ids = self.fact_session_ids[start:stop]
            fks = {
                name: self.fact_fks[name].view(n)[start:stop] for name in dimension_names
            }
            gathered: dict[tuple[str, str], list] = {}
            for (table, cspec) in set(out_cols) | {p[0] for p in preds}:
                col = self.dimensions[table].column_view(cspec.name)
                fk = fks[table]
                values = []
                for k in fk:
                    if k == 0:
                        values.append(None)
                    else:
                        raw = col[int(k) - 1]
                        values.append(_decode(cspec.kind, raw))
                gathered[(table, cspec.name)] = values
            for i, session_id in enumerate(ids):
                ok = True
                for (table, cspec), expected in preds:
                    if gathered[(table, cspec.name)][i] != expected:
                        ok = False
                        break
                if ok:
                    yield (session_id, *(gathered[(t, c.name)][i] for t, c in out_cols))

    def audit(self) -> list[str]:
        """Full referential-integrity scan; empty list means healthy."""
        problems = []
        n = self.fact_committed
        if len(set(self.fact_session_ids[:n])) != n:
            problems.append("duplicate session ids in fact table")
        for name, dim in self.dimensions.items():
            fks = self.fact_fks[name].view(n)
            bad = np.count_nonzero(fks > dim.committed)
            if bad:
                problems.append(f"{bad} fact rows reference missing {name} rows")
            if np.count_nonzero(fks < 0):
                problems.append(f"negative foreign keys for {name}")
            if dim.next_key != dim.committed + 1:
                problems.append(f"{name}: surrogate counter out of step")
        return problems

    # -- snapshots ----------------------------------------------------------

    def snapshot_to(self, path: str | Path) -> str:
        """Write a point-in-time snapshot; returns its snapshot id. The
        write goes to a temporary file first and replaces the target
        atomically, so readers always load a complete snapshot."""
        import os

        path = Path(path)
        snapshot_id = uuid.uuid4().hex
        header = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "snapshot_id": snapshot_id,
            "built_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "sessions": self.fact_committed,
            "tables": {name: dim.committed for name, dim in self.dimensions.items()},
            "manifest": self.manifest.raw,
        }
        tmp = path.with_suffix(path.suffix + ".tmp")
        n = self.fact_committed
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("header.json", json.dumps(header))
            self._write_array(zf, "fact/session_id", np.array(self.fact_session_ids[:n]))
            for name in self.dimensions:
                self._write_array(zf, f"fact/fk_{name}", self.fact_fks[name].view(n).copy())
            for name, dim in self.dimensions.items():
                for c in dim.spec.columns:
                    col = dim.column_view(c.name)
                    arr = np.array(col) if isinstance(col, list) else col.copy()
                    self._write_array(zf, f"dim/{name}/{c.name}", arr)
        os.replace(tmp, path)
        return snapshot_id

    @staticmethod
    def _write_array(zf: zipfile.ZipFile, name: str, arr: np.ndarray) -> None:
        buf = io.BytesIO()
        np.save(buf, arr, allow_pickle=False)
        zf.writestr(f"{name}.npy", buf.getvalue())

    @classmethod
    def load_snapshot(cls, path: str | Path) -> tuple["StarSchemaStore", dict]:
        """Rebuild a store from a snapshot file; returns (store, header)."""
        with zipfile.ZipFile(path, "r") as zf:
            header = json.loads(zf.read("header.json"))
            if header.get("format") != SNAPSHOT_FORMAT:
                raise SchemaError(f"{path}: not a star-schema snapshot")
            if header.get("version") != SNAPSHOT_VERSION:
                raise SchemaError(f"{path}: unsupported snapshot version")
            manifest = parse_manifest(header["manifest"])
            store = cls(manifest)

            def read_array(name: str) -> np.ndarray:
                return np.load(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)

            session_ids = read_array("fact/session_id")
            store.fact_session_ids = [str(s) for s in session_ids]
            store._session_set = set(store.fact_session_ids)
            store.fact_committed = len(store.fact_session_ids)
            for name, dim in store.dimensions.items():
                fks = read_array(f"fact/fk_{name}").astype(np.int64)
                buf = _Buffer(np.int64)
                buf.arr = fks.copy() if len(fks) else buf.arr
                buf.n = len(fks)
                store.fact_fks[name] = buf
                rows = header["tables"][name]
                for c in dim.spec.columns:
                    arr = read_array(f"dim/{name}/{c.name}")
                    if c.kind == "text":
                        dim.columns[c.name] = [str(v) for v in arr]
                    else:
                        b = _Buffer(_BUFFER_DTYPES[c.kind])
                        data = arr.astype(_BUFFER_DTYPES[c.kind])
                        b.arr = data.copy() if len(data) else b.arr
                        b.n = len(data)
                        dim.columns[c.name] = b
                dim.committed = rows
                dim.next_key = rows + 1
        return store, header


def create_schema(manifest: SchemaManifest) -> StarSchemaStore:
    """Create empty tables per the manifest (the manifest has already
    been validated by parse_manifest)."""
    return StarSchemaStore(manifest)
