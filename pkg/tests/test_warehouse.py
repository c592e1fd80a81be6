import json
from random import Random

import pytest

from chatmart.warehouse import (
    DomainError,
    DuplicateSessionError,
    SchemaError,
    StarSchemaStore,
    UnknownColumnError,
    UnknownTableError,
    create_schema,
    load_manifest,
    parse_manifest,
)
from oracles import nested_loop_join_oracle


def test_shipped_manifest_shape(default_manifest):
    assert default_manifest.fact_table == "session"
    assert len(default_manifest.dimensions) >= 2
    schema = create_schema(default_manifest)
    assert schema.session_count == 0
    assert set(schema.dimensions) == {"child", "allergy"}


def test_two_fact_tables_rejected(default_manifest):
    raw = json.loads(json.dumps(default_manifest.raw))
    raw["fact"] = [raw["fact"], {"name": "other", "key": "k"}]
    with pytest.raises(SchemaError, match="exactly one fact"):
        parse_manifest(raw)


def test_zero_dimensions_rejected(default_manifest):
    raw = json.loads(json.dumps(default_manifest.raw))
    raw["dimensions"] = []
    with pytest.raises(SchemaError, match="at least one dimension"):
        parse_manifest(raw)


def test_duplicate_column_rejected(default_manifest):
    raw = json.loads(json.dumps(default_manifest.raw))
    raw["dimensions"][1]["columns"].append({"name": "allergic_to_nuts", "kind": "enum"})
    with pytest.raises(SchemaError, match="duplicate column"):
        parse_manifest(raw)


def test_missing_fact_rejected(default_manifest):
    raw = json.loads(json.dumps(default_manifest.raw))
    del raw["fact"]
    with pytest.raises(SchemaError, match="missing the fact"):
        parse_manifest(raw)


REFERENCE_SESSION = {
    "child": {"username": "juan-dela-cruz", "sex": "M"},
    "allergy": {
        "allergic_to_nuts": "no",
        "allergic_to_eggs": "yes",
        "allergic_to_seafood": "yes",
        "felt_difficulty_breathing": "yes",
        "felt_rashes": "yes",
        "intervention_applied_ointment": "yes",
        "intervention_away_from_allergens": "no",
    },
}


def test_insert_reference_session_wires_keys(default_manifest):
    schema = create_schema(default_manifest)
    keys = schema.insert_session({"session_id": "123456789"}, REFERENCE_SESSION)
    assert keys["session_id"] == "123456789"
    assert keys["child_id"] == 1 and keys["allergy_id"] == 1
    n = schema.fact_committed
    assert schema.fact_fks["child"].view(n)[0] == keys["child_id"]
    assert schema.fact_fks["allergy"].view(n)[0] == keys["allergy_id"]
    assert schema.audit() == []


def test_duplicate_session_rejected(default_manifest):
    schema = create_schema(default_manifest)
    schema.insert_session({"session_id": "a"}, REFERENCE_SESSION)
    with pytest.raises(DuplicateSessionError):
        schema.insert_session({"session_id": "a"}, REFERENCE_SESSION)
    assert schema.session_count == 1


def test_enum_domain_violation(default_manifest):
    schema = create_schema(default_manifest)
    with pytest.raises(DomainError, match="maybe"):
        schema.insert_session(
            {"session_id": "x"}, {"allergy": {"allergic_to_eggs": "maybe"}}
        )
    # failed insert leaves nothing behind
    assert schema.session_count == 0
    assert schema.audit() == []


def test_unknown_table_and_column(default_manifest):
    schema = create_schema(default_manifest)
    with pytest.raises(UnknownTableError):
        schema.insert_session({"session_id": "x"}, {"nope": {}})
    with pytest.raises(UnknownColumnError):
        schema.insert_session({"session_id": "x"}, {"allergy": {"nope": "yes"}})
    schema.insert_session({"session_id": "x"}, REFERENCE_SESSION)
    with pytest.raises(UnknownTableError):
        list(schema.scan_join(["nope"], []))
    with pytest.raises(UnknownColumnError):
        list(schema.scan_join(["allergy"], ["nope"]))


def test_scan_join_examples(default_manifest):
    schema = create_schema(default_manifest)
    assert list(schema.scan_join(["allergy", "child"], ["allergic_to_eggs"])) == []
    schema.insert_session({"session_id": "123456789"}, REFERENCE_SESSION)
    rows = list(schema.scan_join(["allergy", "child"], ["allergic_to_eggs"]))
    assert rows == [("123456789", "yes")]
    # predicate on a value no session has
    assert list(
        schema.scan_join(["child"], ["username"], predicate={"sex": "F"})
    ) == []


def test_partial_sessions_yield_null_columns(default_manifest):
    schema = create_schema(default_manifest)
    schema.insert_session({"session_id": "s1"}, {"child": {"username": "a", "sex": "F"}})
    rows = list(schema.scan_join(["child", "allergy"], ["sex", "allergic_to_eggs"]))
    assert rows == [("s1", "F", None)]
    # equality predicates never match the missing dimension
    assert list(
        schema.scan_join(["allergy"], [], predicate={"allergic_to_eggs": "no"})
    ) == []


def _random_sessions(rng: Random, count: int):
    sessions = []
    for i in range(count):
        dims = {}
        if rng.random() < 0.9:
            dims["child"] = {
                "username": f"u{i}",
                "sex": rng.choice(["M", "F"]),
                "age": rng.choice([6, 7, None]),
                "data_privacy_consent": rng.choice([True, False]),
            }
        if rng.random() < 0.8:
            dims["allergy"] = {
                "allergic_to_eggs": rng.choice(["yes", "no", "don't know", None]),
                "allergic_to_nuts": rng.choice(["yes", "no"]),
                "felt_rashes": rng.choice(["yes", "no", "don't know"]),
            }
        sessions.append((f"s{i:05d}", dims))
    return sessions


def test_scan_join_equals_nested_loop_oracle(default_manifest):
    rng = Random(7)
    sessions = _random_sessions(rng, 1000)
    schema = create_schema(default_manifest)
    fact_rows = []
    dim_tables = {"child": {}, "allergy": {}}
    for session_id, dims in sessions:
        keys = schema.insert_session({"session_id": session_id}, dims)
        fact = {"session_id": session_id}
        for name in dim_tables:
            key = keys.get(f"{name}_id")
            fact[f"fk_{name}"] = key
            if key:
                # decoded view of what the store should return
                row = {}
                for col, value in dims[name].items():
                    row[col] = value
                for col in [c.name for c in default_manifest.dimension(name).columns]:
                    row.setdefault(col, None)
                dim_tables[name][key] = row
        fact_rows.append(fact)

    cases = [
        (["child"], [("child", "sex")], None),
        (["allergy"], [("allergy", "allergic_to_eggs")], None),
        (["child", "allergy"], [("child", "age"), ("allergy", "felt_rashes")], None),
        (["child", "allergy"], [("allergy", "allergic_to_eggs")], {("child", "sex"): "F"}),
        (["allergy"], [("allergy", "allergic_to_nuts")], {("allergy", "allergic_to_eggs"): "yes"}),
    ]
    for dim_names, columns, predicate in cases:
        got = list(
            schema.scan_join(
                dim_names,
                [c for _, c in columns],
                predicate={c: v for (_, c), v in (predicate or {}).items()},
                chunk_size=97,
            )
        )
        expected = nested_loop_join_oracle(fact_rows, dim_tables, dim_names, columns, predicate)
        assert got == expected
    assert schema.audit() == []


def test_storage_growth_is_one_row_per_table(default_manifest):
    schema = create_schema(default_manifest)
    for i in range(50):
        schema.insert_session({"session_id": f"s{i}"}, REFERENCE_SESSION)
    assert schema.fact_committed == 50
    assert schema.dimensions["child"].committed == 50
    assert schema.dimensions["allergy"].committed == 50
    assert schema.dimensions["allergy"].next_key == 51


def test_snapshot_round_trip(default_manifest, tmp_path):
    schema = create_schema(default_manifest)
    schema.insert_session({"session_id": "a"}, REFERENCE_SESSION)
    schema.insert_session({"session_id": "b"}, {"child": {"username": "x", "sex": "F", "age": 7}})
    path = tmp_path / "snap"
    snapshot_id = schema.snapshot_to(path)

    loaded, header = StarSchemaStore.load_snapshot(path)
    assert header["snapshot_id"] == snapshot_id
    assert header["sessions"] == 2
    before = list(schema.scan_join(["child", "allergy"], ["sex", "allergic_to_eggs", "age"]))
    after = list(loaded.scan_join(["child", "allergy"], ["sex", "allergic_to_eggs", "age"]))
    assert before == after
    # surrogate counters continue, keys never reused
    keys = loaded.insert_session({"session_id": "c"}, REFERENCE_SESSION)
    assert keys["child_id"] == 3
    assert loaded.audit() == []


def test_snapshot_rejects_foreign_files(tmp_path):
    bad = tmp_path / "not_a_snapshot"
    import zipfile

    with zipfile.ZipFile(bad, "w") as zf:
        zf.writestr("header.json", json.dumps({"format": "something-else"}))
    with pytest.raises(SchemaError, match="not a star-schema snapshot"):
        StarSchemaStore.load_snapshot(bad)
