"""Command-line interface. One multiplexed entry point: chatmart <group> <command>."""

from __future__ import annotations

import csv as csv_module
import io
import json
import sys
import time
from pathlib import Path

import click

from . import bench as bench_module
from . import conversation
from .docstore import DocumentStore, DocumentStoreError
from .etl import ConcurrentRunError, EtlPipeline
from .lexicon import LexiconError, collision_report, load_lexicon_file
from .matching import integrate_answer
from .olap import GRANULARITIES, OlapEngine, OlapQuery, QueryError, SnapshotUnavailableError
from .warehouse import StarSchemaStore, create_schema, load_manifest_file

DATA = Path(__file__).parent / "data"
DEFAULT_LEXICON = DATA / "lexicon.txt"
DEFAULT_SCRIPT = DATA / "script.json"
DEFAULT_MANIFEST = DATA / "manifest.json"

EXIT_NO_MATCH = 1


def _parse_duration(text: str) -> float:
    units = {"s": 1, "m": 60, "h": 3600}
    if text and text[-1] in units:
        return float(text[:-1]) * units[text[-1]]
    return float(text)


class Workspace:
    """Paths under --data-dir shared by store, schema, and ETL commands."""

    def __init__(self, data_dir: str, manifest_path: str):
        self.data_dir = Path(data_dir)
        self.manifest_path = manifest_path

    @property
    def store(self) -> DocumentStore:
        return DocumentStore(self.data_dir / "store")

    @property
    def snapshot_path(self) -> Path:
        return self.data_dir / "schema.snapshot"

    def pipeline(self) -> EtlPipeline:
        manifest = load_manifest_file(self.manifest_path)
        return EtlPipeline(self.store, manifest, self.data_dir / "etl", self.snapshot_path)


@click.group()
@click.option(
    "--data-dir",
    default="chatmart-data",
    envvar="CHATMART_DATA_DIR",
    show_default=True,
    help="Directory holding the document store, schema snapshot, and ETL state.",
)
@click.option("--manifest", "manifest_path", default=str(DEFAULT_MANIFEST), show_default=False)
@click.pass_context
def main(ctx, data_dir, manifest_path):
    """Chatbot dialogues to a star-schema data mart with OLAP summaries."""
    ctx.obj = Workspace(data_dir, manifest_path)


# -- lexicon ------------------------------------------------------------------


@main.group("lexicon")
def lexicon_group():
    """Validate and inspect lexicon files."""


@lexicon_group.command("validate")
@click.argument("file", type=click.Path(exists=True))
def lexicon_validate(file):
    try:
        lex = load_lexicon_file(file)
    except LexiconError as exc:
        raise click.ClickException(str(exc))
    entries = sum(len(t.entries) for t in lex.entity_types.values())
    click.echo(f"ok: {len(lex.entity_types)} entity types, {entries} entries, version {lex.version}")


@lexicon_group.command("collisions")
@click.argument("file", type=click.Path(exists=True))
@click.option("--max-distance", default=1, show_default=True, type=int)
def lexicon_collisions(file, max_distance):
    try:
        lex = load_lexicon_file(file)
    except LexiconError as exc:
        raise click.ClickException(str(exc))
    pairs = collision_report(lex, max_distance)
    for p in pairs:
        click.echo(
            f"{p.distance}\t{p.synonym_a!r} ({p.type_a}:{p.reference_a}) ~ "
            f"{p.synonym_b!r} ({p.type_b}:{p.reference_b})"
        )
    click.echo(f"{len(pairs)} near-collision pair(s) within distance {max_distance}")


# -- answer integration ---------------------------------------------------------


@main.command("integrate")
@click.argument("utterance")
@click.option("--entity-type", "-t", required=True)
@click.option("--lexicon", "lexicon_path", default=str(DEFAULT_LEXICON))
def integrate(utterance, entity_type, lexicon_path):
    """Print the aggregated reference values, or NO_MATCH (exit code 1)."""
    lex = load_lexicon_file(lexicon_path)
    values = integrate_answer(utterance, entity_type, lex)
    if not values:
        click.echo("NO_MATCH")
        sys.exit(EXIT_NO_MATCH)
    for v in values:
        click.echo(v)


# -- chat ------------------------------------------------------------------------


@main.group("chat", invoke_without_command=True)
@click.option("--script", "script_path", default=str(DEFAULT_SCRIPT))
@click.option("--lexicon", "lexicon_path", default=str(DEFAULT_LEXICON))
@click.option("--save/--no-save", default=False, help="Persist the finished session document.")
@click.pass_context
def chat_group(ctx, script_path, lexicon_path, save):
    """Interactive terminal session (default) or batch replay."""
    ctx.obj = {"script": script_path, "lexicon": lexicon_path, "save": save, "ws": ctx.obj}
    if ctx.invoked_subcommand is not None:
        return
    lex = load_lexicon_file(lexicon_path)
    script = conversation.load_script_file(script_path, lex)
    state, prompt = conversation.start_session(script, lex)
    click.echo(f"C: {prompt}")
    while not state.ended:
        utterance = click.prompt("U", prompt_suffix=": ")
        result = conversation.advance(state, utterance)
        if result.prompt:
            click.echo(f"C: {result.prompt}")
    _finish_chat(ctx.obj, state)


def _finish_chat(opts, state):
    document = conversation.finish_session(state)
    click.echo(json.dumps(document, ensure_ascii=False, indent=2))
    if opts["save"]:
        doc = {"session_id": state.session_id, **document}
        session_id = opts["ws"].store.put_document(doc)
        click.echo(f"saved as {session_id}", err=True)


@chat_group.command("replay")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="Transcript file, one utterance per line.")
@click.pass_context
def chat_replay(ctx, input_path):
    opts = ctx.obj
    lex = load_lexicon_file(opts["lexicon"])
    script = conversation.load_script_file(opts["script"], lex)
    with open(input_path, "r", encoding="utf-8") as f:
        utterances = [line.rstrip("\n") for line in f if line.strip()]
    state, prompts = conversation.replay(script, lex, utterances)
    for prompt, utterance in zip(prompts, utterances):
        click.echo(f"C: {prompt}\nU: {utterance}")
    _finish_chat(opts, state)


# -- document store -----------------------------------------------------------------


@main.group("store")
def store_group():
    """Put, get, and list stored session documents."""


@store_group.command("put")
@click.argument("file", type=click.File("r"), default="-")
@click.pass_obj
def store_put(ws, file):
    document = json.load(file)
    try:
        session_id = ws.store.put_document(document)
    except DocumentStoreError as exc:
        raise click.ClickException(str(exc))
    click.echo(session_id)


@store_group.command("get")
@click.argument("session_id")
@click.pass_obj
def store_get(ws, session_id):
    try:
        document = ws.store.get_document(session_id)
    except DocumentStoreError as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(document, ensure_ascii=False, indent=2))


@store_group.command("list")
@click.option("--since", default="", help="Watermark: list only IDs greater than this.")
@click.option("--limit", type=int, default=None)
@click.pass_obj
def store_list(ws, since, limit):
    documents, watermark = ws.store.list_since(since, limit)
    for doc in documents:
        click.echo(doc["session_id"])
    click.echo(f"watermark: {watermark}", err=True)


# -- schema ---------------------------------------------------------------------------


@main.group("schema")
def schema_group():
    """Create and inspect the star-schema snapshot."""


@schema_group.command("init")
@click.pass_obj
def schema_init(ws):
    manifest = load_manifest_file(ws.manifest_path)
    store = create_schema(manifest)
    ws.data_dir.mkdir(parents=True, exist_ok=True)
    snapshot_id = store.snapshot_to(ws.snapshot_path)
    click.echo(f"initialized empty schema snapshot {snapshot_id} at {ws.snapshot_path}")


@schema_group.command("inspect")
@click.pass_obj
def schema_inspect(ws):
    store, header = StarSchemaStore.load_snapshot(ws.snapshot_path)
    click.echo(f"snapshot {header['snapshot_id']} built {header['built_at']}")
    click.echo(f"fact table {store.manifest.fact_table!r}: {store.session_count} sessions")
    for name, rows in header["tables"].items():
        cols = len(store.manifest.dimension(name).columns)
        click.echo(f"dimension {name!r}: {rows} rows, {cols} columns")


@schema_group.command("audit")
@click.pass_obj
def schema_audit(ws):
    store, _ = StarSchemaStore.load_snapshot(ws.snapshot_path)
    problems = store.audit()
    for problem in problems:
        click.echo(f"violation: {problem}")
    if problems:
        raise click.ClickException(f"{len(problems)} referential-integrity problem(s)")
    click.echo("ok: referential integrity holds")


# -- etl ----------------------------------------------------------------------------------


@main.group("etl")
def etl_group():
    """Run and schedule the extract-transform-load pipeline."""


@etl_group.command("run")
@click.option("--full", is_flag=True, help="Rebuild from the epoch into a fresh schema.")
@click.pass_obj
def etl_run(ws, full):
    try:
        run = ws.pipeline().run("full" if full else "incremental")
    except ConcurrentRunError as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(run.to_dict()))
    if run.status != "succeeded":
        raise click.ClickException(f"run {run.run_id} failed: {run.error}")


@etl_group.command("status")
@click.option("--limit", type=int, default=None)
@click.pass_obj
def etl_status(ws, limit):
    pipeline = ws.pipeline()
    for run in pipeline.status(limit):
        click.echo(json.dumps(run))
    click.echo(f"watermark: {pipeline.watermark() or '(epoch)'}", err=True)


@etl_group.command("schedule")
@click.option("--every", default="10m", show_default=True,
              help="Interval between incremental runs (e.g. 30s, 10m, 1h).")
@click.pass_obj
def etl_schedule(ws, every):
    """Run incremental loads forever at a fixed interval (Ctrl-C stops)."""
    interval = _parse_duration(every)
    pipeline = ws.pipeline()
    click.echo(f"scheduling incremental ETL every {interval:.0f}s", err=True)
    while True:
        try:
            run = pipeline.run("incremental")
            click.echo(json.dumps(run.to_dict()))
        except ConcurrentRunError as exc:
            click.echo(f"skipped: {exc}", err=True)
        time.sleep(interval)


# -- olap -----------------------------------------------------------------------------------


@main.group("olap")
def olap_group():
    """Query the OLAP engine from the command line."""


@olap_group.command("query")
@click.option("--target", required=True, help="Answer column or question group.")
@click.option("--group-by", default="", help="Comma list out of: age, sex.")
@click.option("--level", default=None, type=click.Choice(sorted(GRANULARITIES)), help="Named granularity (overrides --group-by).")
@click.option("--filter", "filters", multiple=True, help="column:value, repeatable.")
@click.option("--format", "fmt", default="table", type=click.Choice(["table", "csv", "json"]))
@click.pass_obj
def olap_query(ws, target, group_by, level, filters, fmt):
    engine = OlapEngine(ws.snapshot_path)
    groups = GRANULARITIES[level] if level else tuple(g for g in group_by.split(",") if g)
    parsed = []
    for item in filters:
        name, sep, value = item.partition(":")
        if not sep:
            raise click.ClickException(f"filter {item!r} must look like column:value")
        parsed.append((name, value))
    query = OlapQuery(target=target, group_by=groups, filters=tuple(parsed))
    try:
        cube = engine.query(query)
        chart = engine.chart_spec(query, cube)
    except (QueryError, SnapshotUnavailableError) as exc:
        raise click.ClickException(str(exc))

    if fmt == "json":
        click.echo(json.dumps({"cube": cube.to_json(), "chart": chart.to_json()}, ensure_ascii=False))
        return
    rows = []
    for coords, counts in cube.cells.items():
        base = {dim: str(v) for dim, v in zip(cube.group_by, coords)}
        for category, count in counts.items():
            rows.append({**base, "category": category, "count": count,
                         "total": cube.totals[coords]})
    headers = [*cube.group_by, "category", "count", "total"]
    if fmt == "csv":
        out = io.StringIO()
        writer = csv_module.DictWriter(out, fieldnames=headers)
        writer.writeheader()
        writer.writerows(rows)
        click.echo(out.getvalue(), nl=False)
        return
    widths = {h: max(len(h), *(len(str(r.get(h, ""))) for r in rows)) if rows else len(h) for h in headers}
    click.echo(f"{chart.title}  [{chart.kind}]")
    click.echo("  ".join(h.ljust(widths[h]) for h in headers))
    for r in rows:
        click.echo("  ".join(str(r.get(h, "")).ljust(widths[h]) for h in headers))
    click.echo(f"snapshot: {cube.provenance.get('snapshot_id')}", err=True)


# -- serve and bench ----------------------------------------------------------------------------


@main.command("serve")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def serve_cmd(config_path):
    """Serve the HTTP API and dashboard from a JSON config file."""
    from .api import ApiConfig, serve

    serve(ApiConfig.from_file(config_path))


@main.command("bench")
@click.option("--sizes", default="10,100,1000", show_default=True)
@click.option("--trials", default=5, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", default=None, type=click.Path(), help="Write the CSV here.")
@click.option("--stress-threads", default=0, show_default=True, type=int)
@click.option("--workdir", default=None, type=click.Path())
def bench_cmd(sizes, trials, seed, out_path, stress_threads, workdir):
    """Generate corpora, rebuild the schema, and time the OLAP operations."""
    import logging

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    size_list = [int(s) for s in sizes.split(",") if s]
    report = bench_module.bench(
        size_list, trials=trials, seed=seed, workdir=workdir, stress_threads=stress_threads
    )
    csv_text = report.to_csv()
    if out_path:
        Path(out_path).write_text(csv_text, encoding="utf-8")
        click.echo(f"wrote {out_path}", err=True)
    else:
        click.echo(csv_text, nl=False)
    click.echo(report.linear_log_table())


if __name__ == "__main__":
    main()
