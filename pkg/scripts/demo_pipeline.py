#!/usr/bin/env python3
"""End-to-end demo: replay a scripted session, store the document, run
the ETL, and print OLAP summaries at every granularity.

    python scripts/demo_pipeline.py --workdir /tmp/chatmart-demo
"""

import argparse
import json
import tempfile
from pathlib import Path

from chatmart.bench import GeneratorConfig, generate
from chatmart.conversation import finish_session, load_script_file, replay
from chatmart.docstore import DocumentStore
from chatmart.etl import EtlPipeline
from chatmart.lexicon import load_lexicon_file
from chatmart.olap import OlapEngine, OlapQuery, coord_label, drill_path
from chatmart.warehouse import load_manifest_file

DATA = Path(__file__).parent.parent / "src" / "chatmart" / "data"

TRANSCRIPT = [
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


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", type=Path, default=None)
    parser.add_argument("--extra-sessions", type=int, default=200,
                        help="Synthetic sessions to add alongside the scripted one.")
    args = parser.parse_args()
    workdir = args.workdir or Path(tempfile.mkdtemp(prefix="chatmart-demo-"))

    lexicon = load_lexicon_file(DATA / "lexicon.txt")
    script = load_script_file(DATA / "script.json", lexicon)

    print("== scripted session ==")
    state, prompts = replay(script, lexicon, TRANSCRIPT)
    for prompt, utterance in zip(prompts, TRANSCRIPT):
        print(f"C: {prompt}\nU: {utterance}")
    document = finish_session(state)
    print("\n== stored document ==")
    print(json.dumps(document, ensure_ascii=False, indent=2))

    store = DocumentStore(workdir / "store")
    store.put_document({"session_id": state.session_id, **document})
    generate(GeneratorConfig(count=args.extra_sessions, seed=11), store)

    manifest = load_manifest_file(DATA / "manifest.json")
    pipeline = EtlPipeline(store, manifest, workdir / "etl", workdir / "schema.snapshot")
    run = pipeline.run("full")
    print(f"\n== etl run ==\nloaded {run.sessions_loaded} sessions, rows {run.rows_loaded}")

    engine = OlapEngine(workdir / "schema.snapshot")
    base = OlapQuery(target="allergy_food")
    for level in ("rolled-up", "age", "sex", "age-then-sex"):
        cube = engine.query(drill_path(base, level))
        print(f"\n== common food allergies, {level} ==")
        for coords, counts in cube.cells.items():
            print(f"  {coord_label(coords)}: {counts} (of {cube.totals[coords]})")
    print(f"\nworkdir kept at {workdir}")


if __name__ == "__main__":
    main()
