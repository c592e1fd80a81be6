import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles module

from chatmart.conversation import load_script_file
from chatmart.lexicon import load_lexicon_file
from chatmart.warehouse import load_manifest_file

DATA = Path(__file__).parent.parent / "src" / "chatmart" / "data"


@pytest.fixture(scope="session")
def default_lexicon():
    return load_lexicon_file(DATA / "lexicon.txt")


@pytest.fixture(scope="session")
def default_script(default_lexicon):
    return load_script_file(DATA / "script.json", default_lexicon)


@pytest.fixture(scope="session")
def default_manifest():
    return load_manifest_file(DATA / "manifest.json")


@pytest.fixture()
def reference_document():
    """The reference document: one full session with a food and symptom
    history, consent given, no animal-fur allergy."""
    return {
        "session_id": "123456789",
        "username": "juan-dela-cruz",
        "sex": "M",
        "data_privacy_consent": True,
        "allergy_food": ["seafood", "egg"],
        "allergy_animal_fur": None,
        "allergy_felt": ["difficulty breathing", "rashes"],
        "allergy_intervention": ["ointment"],
    }


@pytest.fixture()
def snapshot_factory(tmp_path, default_manifest):
    """Build a schema snapshot straight from documents and return an
    OLAP engine over it."""
    from chatmart.etl import transform
    from chatmart.olap import OlapEngine
    from chatmart.warehouse import create_schema

    counter = {"n": 0}

    def build(documents, **engine_kwargs):
        schema = create_schema(default_manifest)
        for document in documents:
            out = transform(document, default_manifest)
            schema.insert_session(out.fact_row, out.dimension_rows)
        counter["n"] += 1
        path = tmp_path / f"snapshot-{counter['n']}"
        schema.snapshot_to(path)
        return OlapEngine(path, **engine_kwargs)

    return build


@pytest.fixture(scope="session")
def reference_transcript():
    """The scripted session: child-info preamble, then the five allergy
    exchanges verbatim."""
    return [
        "Tagalog",
        "Juan Dela Cruz",
        "Lalaki",
        "7",
        "Oo",
        "Meron",
        "Hipon saka po itlog",
        "Wala po",
        "Hirap huminga saka po nagpapantal",
        "May nilalagay si Mommy na ointment",
    ]
