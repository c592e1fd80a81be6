"""OLAP engine: roll-up, drill-down, slice, and dice over the star schema.

Queries count sessions, grouped by demographic dimensions (age, sex, or
both) and filtered by demographic or response values, for one target
question. A target is either a single answer column (yes / no / don't
know) or a question group (the columns a multi-valued field was split
into, counted by their yes answers).

The engine serves queries from a cached columnar snapshot loaded from
the schema snapshot file, not from the live store: data freshness is
bounded by a configurable interval (default 12 hours) or an explicit
refresh after an ETL run. Snapshot swaps are atomic; a query never sees
a partially refreshed snapshot. Queries are pure reads and freely
concurrent; every result carries the snapshot provenance so clients can
display how fresh the numbers are.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .warehouse import (
    ENUM_DONT_KNOW,
    ENUM_NO,
    ENUM_NULL,
    ENUM_YES,
    INT_NULL,
    SchemaManifest,
    StarSchemaStore,
    UnknownColumnError,
)

UNKNOWN = "unknown"
RESPONSE_CATEGORIES = ("yes", "no", "don't know", UNKNOWN)
_RESPONSE_CODES = {"yes": ENUM_YES, "no": ENUM_NO, "don't know": ENUM_DONT_KNOW, UNKNOWN: ENUM_NULL}

GRANULARITIES = {
    "rolled-up": (),
    "age": ("age",),
    "sex": ("sex",),
    "age-then-sex": ("age", "sex"),
}

DEFAULT_FRESHNESS_SECONDS = 12 * 3600.0

PIE, BAR, STACKED_BAR = "pie", "bar", "stacked-bar"


class QueryError(ValueError):
    """Invalid query: unknown column, bad group-by, bad filter value."""


class SnapshotUnavailableError(RuntimeError):
    """No schema snapshot has been built yet."""


@dataclass(frozen=True)
class OlapQuery:
    target: str
    group_by: tuple[str, ...] = ()
    filters: tuple[tuple[str, str], ...] = ()  # (column or age/sex, value)


def drill_path(query: OlapQuery, level: str) -> OlapQuery:
    """Set the query's granularity to a named drill level. Rolling up
    from any level clears the grouping, so drill then roll-up is the
    identity on the query."""
    try:
        group_by = GRANULARITIES[level]
    except KeyError:
        raise QueryError(
            f"unknown drill level {level!r}; expected one of {sorted(GRANULARITIES)}"
        ) from None
    return replace(query, group_by=group_by)


@dataclass
class ResultCube:
    target: str
    kind: str  # "single" | "group"
    group_by: tuple[str, ...]
    categories: tuple[str, ...]
    cells: dict[tuple, dict[str, int]]  # group-by coordinates -> category counts
    totals: dict[tuple, int]  # coordinates -> sessions at that coordinate
    provenance: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "kind": self.kind,
            "group_by": list(self.group_by),
            "categories": list(self.categories),
            "cells": [
                {
                    "coords": {dim: v for dim, v in zip(self.group_by, coords)},
                    "counts": counts,
                    "total": self.totals[coords],
                }
                for coords, counts in self.cells.items()
            ],
            "provenance": self.provenance,
        }


@dataclass
class ChartSpec:
    kind: str  # pie | bar | stacked-bar
    title: str
    categories: tuple[str, ...]  # axis / slice labels, from manifest displays
    series: tuple[str, ...]  # one entry per group-by coordinate; empty when rolled up

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "title": self.title,
            "categories": list(self.categories),
            "series": list(self.series),
        }


def coord_label(coords: tuple) -> str:
    return " / ".join(str(c) for c in coords) if coords else "all"


class _Snapshot:
    """Columnar view over one loaded schema snapshot: per-session arrays
    for every answer column and demographic, ready for vectorized scans."""

    def __init__(self, store: StarSchemaStore, header: dict):
        self.header = header
        self.manifest: SchemaManifest = store.manifest
        n = store.session_count
        self.sessions = n
        self.columns: dict[str, np.ndarray] = {}
        for dim in self.manifest.dimensions:
            fk = store.fact_fks[dim.name].view(n)
            idx = fk.astype(np.int64) - 1
            has_row = fk > 0
            empty = store.dimensions[dim.name].committed == 0
            for c in dim.columns:
                if c.kind != "enum":
                    continue
                if empty:
                    self.columns[c.name] = np.full(n, ENUM_NULL, dtype=np.uint8)
                    continue
                raw = store.dimensions[dim.name].column_view(c.name)
                gathered = np.where(has_row, raw[np.where(has_row, idx, 0)], ENUM_NULL)
                self.columns[c.name] = gathered.astype(np.uint8)

        self.demographics: dict[str, tuple[np.ndarray, list]] = {}
        for demo, (table, column) in self.manifest.demographics.items():
            dim = self.manifest.dimension(table)
            fk = store.fact_fks[table].view(n)
            idx = fk.astype(np.int64) - 1
            has_row = fk > 0
            kind = dim.column(column).kind
            raw = store.dimensions[table].column_view(column)
            if store.dimensions[table].committed == 0:
                values = (
                    np.full(n, INT_NULL, dtype=np.int64)
                    if kind == "int"
                    else np.full(n, "", dtype=object)
                )
            elif kind == "int":
                values = np.where(has_row, raw[np.where(has_row, idx, 0)], INT_NULL)
                values = values.astype(np.int64)
            else:  # text
                arr = np.array(raw, dtype=object) if isinstance(raw, list) else raw
                values = np.where(has_row, arr[np.where(has_row, idx, 0)], "")
            codes, labels = self._codify(demo, values, kind)
            self.demographics[demo] = (codes, labels)

    def _codify(self, demo: str, values: np.ndarray, kind: str):
        """Map raw demographic values to dense codes plus labels; null
        values form their own 'unknown' coordinate rather than being
        dropped (dropping would break roll-up consistency)."""
        bands = (self.manifest.raw.get("age_bands") or []) if demo == "age" else []
        if kind == "int" and bands:
            labels = [b["label"] for b in bands] + [UNKNOWN]
            codes = np.full(len(values), len(bands), dtype=np.int64)
            for i, band in enumerate(bands):
                hit = (values >= band["min"]) & (values <= band["max"])
                codes[hit] = i
            return codes, labels
        if kind == "int":
            null = values == INT_NULL
            uniq = np.unique(values[~null]) if (~null).any() else np.array([], dtype=np.int64)
            lookup = {int(v): i for i, v in enumerate(uniq)}
            codes = np.array([lookup.get(int(v), len(uniq)) for v in values], dtype=np.int64)
            labels = [int(v) for v in uniq] + [UNKNOWN]
            return codes, labels
        null = values == ""
        uniq = sorted({str(v) for v in values[~null]}) if (~null).any() else []
        lookup = {v: i for i, v in enumerate(uniq)}
        codes = np.array(
            [lookup.get(str(v), len(uniq)) for v in values], dtype=np.int64
        )
        return codes, list(uniq) + [UNKNOWN]

    def demographic_filter_code(self, demo: str, value) -> int | None:
        codes, labels = self.demographics[demo]
        if isinstance(value, str) and value != UNKNOWN:
            # HTTP query params arrive as text; ages are integers.
            try:
                value = int(value)
            except ValueError:
                pass
        for i, label in enumerate(labels):
            if label == value:
                return i
        return None


class OlapEngine:
    def __init__(
        self,
        snapshot_path: str | Path,
        freshness_seconds: float = DEFAULT_FRESHNESS_SECONDS,
        clock=time.time,
    ):
        self.snapshot_path = Path(snapshot_path)
        self.freshness_seconds = freshness_seconds
        self.clock = clock
        self._lock = threading.Lock()
        self._snapshot: _Snapshot | None = None
        self._loaded_at: float | None = None
        self._stale = False

    # -- cache ------------------------------------------------------------

    def refresh_cache(self, force: bool = False) -> dict[str, Any]:
        """Reload the snapshot when forced or older than the freshness
        interval. If the file is unreadable the previous snapshot keeps
        serving and the cache is flagged stale."""
        with self._lock:
            age = None if self._loaded_at is None else self.clock() - self._loaded_at
            needs = force or self._snapshot is None or age >= self.freshness_seconds
            if needs:
                try:
                    store, header = StarSchemaStore.load_snapshot(self.snapshot_path)
                    self._snapshot = _Snapshot(store, header)
                    self._loaded_at = self.clock()
                    self._stale = False
                except FileNotFoundError:
                    if self._snapshot is None:
                        raise SnapshotUnavailableError(
                            f"no schema snapshot at {self.snapshot_path}; run the ETL first"
                        ) from None
                    self._stale = True
                except Exception:
                    if self._snapshot is None:
                        raise
                    self._stale = True
            return self.cache_info()

    def cache_info(self) -> dict[str, Any]:
        snap = self._snapshot
        return {
            "snapshot_id": snap.header["snapshot_id"] if snap else None,
            "built_at": snap.header["built_at"] if snap else None,
            "loaded_at": self._loaded_at,
            "sessions": snap.sessions if snap else 0,
            "stale": self._stale,
        }

    def _ensure(self) -> _Snapshot:
        snap = self._snapshot
        age = None if self._loaded_at is None else self.clock() - self._loaded_at
        if snap is None or age is not None and age >= self.freshness_seconds:
            self.refresh_cache()
            snap = self._snapshot
        if snap is None:
            raise SnapshotUnavailableError(
                f"no schema snapshot at {self.snapshot_path}; run the ETL first"
            )
        return snap

    # -- query ------------------------------------------------------------

    def query(self, q: OlapQuery) -> ResultCube:
        """Count sessions per (group-by coordinates, response category).

        Single-column targets count every session once across yes, no,
        don't know, and unknown, so category counts sum to the
        coordinate total. Question-group targets count yes answers per
        member column (a child with two allergies appears under both);
        the coordinate total is still the number of sessions there.
        """
        snap = self._ensure()
        self._validate(q, snap)
        n = snap.sessions

        mask = np.ones(n, dtype=bool)
        for name, value in q.filters:
            mask &= self._filter_mask(snap, name, value)

        if q.group_by:
            group_codes = []
            group_labels = []
            for demo in q.group_by:
                codes, labels = snap.demographics[demo]
                group_codes.append(codes)
                group_labels.append(labels)
            sizes = [len(lbls) for lbls in group_labels]
            combined = np.zeros(n, dtype=np.int64)
            for codes, size in zip(group_codes, sizes):
                combined = combined * size + codes
            space = int(np.prod(sizes))
        else:
            combined = np.zeros(n, dtype=np.int64)
            sizes = []
            group_labels = []
            space = 1

        sel = combined[mask]
        totals_flat = np.bincount(sel, minlength=space)

        manifest = snap.manifest
        mv = manifest.multi_value_for(q.target)
        if mv is not None:
            kind = "group"
            categories = tuple(col for _, col in mv.members)
            counts_per_cat = {}
            for _, col in mv.members:
                yes_sel = sel[snap.columns[col][mask] == ENUM_YES]
                counts_per_cat[col] = np.bincount(yes_sel, minlength=space)
        else:
            kind = "single"
            categories = RESPONSE_CATEGORIES
            col = snap.columns[q.target]
            counts_per_cat = {}
            for label, code in _RESPONSE_CODES.items():
                cat_sel = sel[col[mask] == code]
                counts_per_cat[label] = np.bincount(cat_sel, minlength=space)

        cells: dict[tuple, dict[str, int]] = {}
        totals: dict[tuple, int] = {}
        for flat in range(space):
            total = int(totals_flat[flat])
            coords = self._unflatten(flat, sizes, group_labels)
            if q.group_by and total == 0 and all(
                int(counts_per_cat[c][flat]) == 0 for c in categories
            ):
                continue  # absent coordinate, not an observed zero
            cells[coords] = {c: int(counts_per_cat[c][flat]) for c in categories}
            totals[coords] = total

        return ResultCube(
            target=q.target,
            kind=kind,
            group_by=q.group_by,
            categories=categories,
            cells=cells,
            totals=totals,
            provenance=self.cache_info(),
        )

    @staticmethod
    def _unflatten(flat: int, sizes: list[int], group_labels: list[list]) -> tuple:
        if not sizes:
            return ()
        coords = []
        for size, labels in zip(reversed(sizes), reversed(group_labels)):
            coords.append(labels[flat % size])
            flat //= size
        return tuple(reversed(coords))

    def _validate(self, q: OlapQuery, snap: _Snapshot) -> None:
        if len(q.group_by) > 2 or len(set(q.group_by)) != len(q.group_by):
            raise QueryError(f"group_by must be at most two distinct levels, got {q.group_by}")
        for demo in q.group_by:
            if demo not in snap.demographics:
                raise QueryError(f"unknown demographic {demo!r}")
        manifest = snap.manifest
        if manifest.multi_value_for(q.target) is None and q.target not in snap.columns:
            raise QueryError(f"unknown column or question group {q.target!r}")
        for name, value in q.filters:
            if name in snap.demographics:
                continue
            if name not in snap.columns:
                raise QueryError(f"unknown filter column {name!r}")
            if value not in _RESPONSE_CODES:
                raise QueryError(
                    f"incompatible filter value {value!r} for {name!r}; "
                    f"expected one of {list(_RESPONSE_CODES)}"
                )

    def _filter_mask(self, snap: _Snapshot, name: str, value) -> np.ndarray:
        if name in snap.demographics:
            codes, _ = snap.demographics[name]
            code = snap.demographic_filter_code(name, value)
            if code is None:
                # A value that never occurs filters everything out, the
                # same as an equality predicate would.
                return np.zeros(snap.sessions, dtype=bool)
            return codes == code
        return snap.columns[name] == _RESPONSE_CODES[value]

    # -- charts -----------------------------------------------------------

    def chart_spec(self, q: OlapQuery, cube: ResultCube) -> ChartSpec:
        """Chart kind rules: pie for a single-response question rolled
        up, bar for a question group rolled up, stacked bar whenever the
        query is drilled down."""
        snap = self._ensure()
        manifest = snap.manifest
        mv = manifest.multi_value_for(q.target)
        if mv is not None:
            displays = tuple(
                manifest.dimension(mv.table).column(col).display for _, col in mv.members
            )
            title = mv.display
        else:
            table, cspec = manifest.resolve_column(q.target)
            displays = RESPONSE_CATEGORIES
            title = cspec.display
        if q.group_by:
            kind = STACKED_BAR
            series = tuple(coord_label(c) for c in cube.cells)
        elif mv is not None:
            kind = BAR
            series = ()
        else:
            kind = PIE
            series = ()
        return ChartSpec(kind=kind, title=title, categories=displays, series=series)

    # -- dashboard support --------------------------------------------------

    def manifest_info(self) -> dict[str, Any]:
        """Question groups, single questions, and the demographic values
        present in the snapshot; feeds the dashboard dropdowns."""
        snap = self._ensure()
        manifest = snap.manifest
        grouped_columns = {col for mv in manifest.multi_value for _, col in mv.members}
        questions = []
        for mv in manifest.multi_value:
            dim = manifest.dimension(mv.table)
            questions.append(
                {
                    "name": mv.field,
                    "kind": "group",
                    "display": mv.display,
                    "members": [
                        {
                            "value": value,
                            "column": col,
                            "display": dim.column(col).display,
                        }
                        for value, col in mv.members
                    ],
                }
            )
        for dim in manifest.dimensions:
            for c in dim.columns:
                if c.kind == "enum" and c.name not in grouped_columns:
                    questions.append(
                        {"name": c.name, "kind": "single", "display": c.display}
                    )
        demographics = {
            demo: [str(v) for v in labels]
            for demo, (_, labels) in snap.demographics.items()
        }
        return {
            "questions": questions,
            "demographics": demographics,
            "response_categories": list(RESPONSE_CATEGORIES),
            "provenance": self.cache_info(),
        }
