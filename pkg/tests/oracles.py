"""Independent reference implementations the tests check the package
against. These deliberately use different algorithms and data paths than
the code under test and must stay that way."""

from __future__ import annotations

from functools import lru_cache
from typing import Any


def levenshtein_oracle(a: str, b: str) -> int:
    """Recursive memoized edit distance (the package uses an iterative
    two-row table)."""

    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        cost = 0 if a[i - 1] == b[j - 1] else 1
        return min(go(i - 1, j) + 1, go(i, j - 1) + 1, go(i - 1, j - 1) + cost)

    return go(len(a), len(b))


def collision_oracle(scopes: list[list[tuple[str, str]]], max_distance: int) -> set[tuple]:
    """Brute-force pairwise scan over (synonym, reference) lists; one
    scope per entity type or question group. Returns unordered pairs as
    (distance, synonym_a, synonym_b) with synonym_a < synonym_b."""
    found = set()
    for scope in scopes:
        for i in range(len(scope)):
            for j in range(i + 1, len(scope)):
                (syn_a, ref_a), (syn_b, ref_b) = scope[i], scope[j]
                if ref_a == ref_b:
                    continue
                d = levenshtein_oracle(syn_a, syn_b)
                if 0 < d <= max_distance:
                    lo, hi = sorted([syn_a, syn_b])
                    found.add((d, lo, hi))
    return found


def nested_loop_join_oracle(
    fact_rows: list[dict[str, Any]],
    dimension_tables: dict[str, dict[int, dict[str, Any]]],
    dimension_names: list[str],
    columns: list[tuple[str, str]],
    predicate: dict[tuple[str, str], Any] | None = None,
) -> list[tuple]:
    """Naive join of fact rows against dimension tables keyed by
    surrogate key, then equality filtering."""
    out = []
    for fact in fact_rows:
        values = {}
        for name in dimension_names:
            key = fact.get(f"fk_{name}")
            row = dimension_tables[name].get(key) if key else None
            for col, v in (row or {}).items():
                values[(name, col)] = v
        ok = True
        for (table, col), expected in (predicate or {}).items():
            if values.get((table, col)) != expected:
                ok = False
                break
        if ok:
            out.append(
                (fact["session_id"], *(values.get((t, c)) for t, c in columns))
            )
    return out


# -- document-level OLAP counting oracle ------------------------------------

UNKNOWN = "unknown"
DONT_KNOW = "don't know"


def _age_label(document: dict[str, Any]):
    value = document.get("age")
    if value is None:
        return UNKNOWN
    try:
        parsed = int(str(value))
    except ValueError:
        return UNKNOWN
    return parsed if parsed >= 0 else UNKNOWN


def _sex_label(document: dict[str, Any]):
    value = document.get("sex")
    return value if isinstance(value, str) and value else UNKNOWN


def _demographic_label(document: dict[str, Any], demo: str):
    return _age_label(document) if demo == "age" else _sex_label(document)


def response_category(document: dict[str, Any], column: str, manifest) -> str:
    """What the warehouse should hold for one answer column of one
    document, derived straight from the raw field values and the
    None / don't-know semantics."""
    owner_field = None
    member_value = None
    for mv in manifest.multi_value:
        for value, col in mv.members:
            if col == column:
                owner_field, member_value = mv.field, value
    scalar = None
    for sf in manifest.scalar_fields:
        if sf.column == column:
            scalar = sf.field
    if owner_field is not None:
        if owner_field not in document:
            return UNKNOWN
        value = document[owner_field]
        if value is None:
            return "no"
        if value == DONT_KNOW:
            return DONT_KNOW
        items = value if isinstance(value, list) else [value]
        return "yes" if member_value in items else "no"
    if scalar is not None:
        if scalar not in document:
            return UNKNOWN
        value = document[scalar]
        if value is None:
            return "no"
        if value in ("yes", "no", DONT_KNOW):
            return value
        return UNKNOWN  # anomalous value, rejected by the ETL
    raise KeyError(column)


def olap_count_oracle(
    documents: list[dict[str, Any]],
    manifest,
    target: str,
    group_by: tuple[str, ...] = (),
    filters: tuple[tuple[str, str], ...] = (),
):
    """Brute-force counting over raw documents; returns (cells, totals)
    shaped like the engine's ResultCube."""
    mv = None
    for candidate in manifest.multi_value:
        if candidate.field == target:
            mv = candidate
    categories = (
        [col for _, col in mv.members] if mv else ["yes", "no", DONT_KNOW, UNKNOWN]
    )

    def passes(document: dict[str, Any]) -> bool:
        for name, value in filters:
            if name in ("age", "sex"):
                label = _demographic_label(document, name)
                wanted = value
                if name == "age" and isinstance(value, str) and value != UNKNOWN:
                    try:
                        wanted = int(value)
                    except ValueError:
                        pass
                if label != wanted:
                    return False
            else:
                if response_category(document, name, manifest) != value:
                    return False
        return True

    cells: dict[tuple, dict[str, int]] = {}
    totals: dict[tuple, int] = {}
    for document in documents:
        if not passes(document):
            continue
        coords = tuple(_demographic_label(document, demo) for demo in group_by)
        if coords not in cells:
            cells[coords] = {c: 0 for c in categories}
            totals[coords] = 0
        totals[coords] += 1
        if mv is not None:
            for value, col in mv.members:
                if response_category(document, col, manifest) == "yes":
                    cells[coords][col] += 1
        else:
            cells[coords][response_category(document, target, manifest)] += 1
    if not group_by and () not in cells:
        cells[()] = {c: 0 for c in categories}
        totals[()] = 0
    return cells, totals
