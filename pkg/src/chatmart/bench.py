"""Synthetic corpus generation and OLAP loading-time measurement.

The generator writes schema-conformant session documents with seeded,
configurable answer and demographic distributions; the same seed always
produces a byte-identical corpus. The benchmark builds corpora at the
requested sizes, runs a full ETL rebuild, then times the snapshot load
(the initial-loading analogue) and five interactive operations: roll-up,
drill-down by age, drill-down by age then sex, filter by response, and
filter by age and sex.

Timings cover the engine only (snapshot build plus query execution),
measured with a monotonic wall clock; one warm-up pass per operation is
discarded and the reported number is the mean over the counted trials.
Benchmarks run single-threaded by default for stable numbers; an
optional stress mode reports concurrent-query latency separately.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import shutil
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Any

from .docstore import DocumentStore, format_session_id
from .etl import EtlPipeline
from .lexicon import DONT_KNOW
from .olap import OlapEngine, OlapQuery
from .warehouse import SchemaManifest

logger = logging.getLogger(__name__)

# Fixed epoch for generated IDs so corpora are reproducible across runs.
_ID_BASE_MS = 1_000_000_000_000


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class QuestionDist:
    """Gate probabilities plus per-member inclusion probabilities.

    p_yes / p_no / p_dont_know must sum to 1. A yes draws each member
    independently; when nothing comes up, one member is picked so a yes
    never produces an empty answer.
    """

    p_yes: float
    p_no: float
    p_dont_know: float
    members: dict[str, float] = field(default_factory=dict)

    def validate(self, name: str) -> None:
        total = self.p_yes + self.p_no + self.p_dont_know
        if abs(total - 1.0) > 1e-9:
            raise GeneratorError(f"question {name!r}: probabilities sum to {total}, not 1")
        for p in (self.p_yes, self.p_no, self.p_dont_know, *self.members.values()):
            if not 0.0 <= p <= 1.0:
                raise GeneratorError(f"question {name!r}: probability {p} out of range")


def default_questions() -> dict[str, QuestionDist]:
    return {
        "allergy_food": QuestionDist(
            0.40, 0.45, 0.15,
            {"nuts": 0.30, "dairy": 0.30, "egg": 0.35, "seafood": 0.40},
        ),
        "allergy_animal_fur": QuestionDist(0.20, 0.70, 0.10),
        "allergy_felt": QuestionDist(
            0.45, 0.45, 0.10,
            {"difficulty breathing": 0.30, "rashes": 0.50, "swelling": 0.25, "itching": 0.30},
        ),
        "allergy_intervention": QuestionDist(
            0.55, 0.40, 0.05,
            {"ointment": 0.50, "away from allergens": 0.25, "medicine": 0.40, "vitamins": 0.20},
        ),
    }


@dataclass
class GeneratorConfig:
    count: int
    seed: int = 0
    ages: tuple[int, ...] = (6, 7)
    sexes: tuple[str, ...] = ("M", "F")
    p_consent_refused: float = 0.05
    p_missing_demographic: float = 0.0
    questions: dict[str, QuestionDist] = field(default_factory=default_questions)
    # Millisecond prefix for generated IDs. Bump it when adding a second
    # corpus to a store that already holds one, so the new IDs sort after
    # the existing watermark.
    id_epoch_ms: int = _ID_BASE_MS

    def validate(self) -> None:
        if self.count < 0:
            raise GeneratorError("count must be >= 0")
        if not self.ages or not self.sexes:
            raise GeneratorError("ages and sexes must be non-empty")
        for p in (self.p_consent_refused, self.p_missing_demographic):
            if not 0.0 <= p <= 1.0:
                raise GeneratorError(f"probability {p} out of range")
        for name, dist in self.questions.items():
            dist.validate(name)


def _draw_question(rng: Random, dist: QuestionDist):
    roll = rng.random()
    if roll < dist.p_yes:
        if not dist.members:
            return "yes"
        chosen = [m for m in dist.members if rng.random() < dist.members[m]]
        if not chosen:
            chosen = [rng.choice(sorted(dist.members))]
        return chosen
    if roll < dist.p_yes + dist.p_no:
        return None
    return DONT_KNOW


def iter_documents(config: GeneratorConfig):
    """Yield generated documents one by one. Deterministic per seed:
    document i carries a fixed-epoch ID, so two runs with the same
    config are byte-identical."""
    config.validate()
    rng = Random(config.seed)
    for i in range(config.count):
        doc: dict[str, Any] = {
            "session_id": format_session_id(config.id_epoch_ms + i, rng.getrandbits(80)),
            "username": f"child-{i + 1:07d}",
        }
        if rng.random() >= config.p_missing_demographic:
            doc["sex"] = rng.choice(config.sexes)
        if rng.random() >= config.p_missing_demographic:
            doc["age"] = str(rng.choice(config.ages))
        if rng.random() < config.p_consent_refused:
            doc["data_privacy_consent"] = False
            yield doc
            continue
        doc["data_privacy_consent"] = True
        for name, dist in config.questions.items():
            doc[name] = _draw_question(rng, dist)
        yield doc


def generate_documents(config: GeneratorConfig) -> list[dict[str, Any]]:
    return list(iter_documents(config))


def generate(config: GeneratorConfig, store: DocumentStore, batch_size: int = 10_000) -> int:
    """Write exactly config.count generated documents into the store,
    streaming so corpus size is not bounded by memory."""
    count = 0
    batch: list[dict[str, Any]] = []
    for doc in iter_documents(config):
        batch.append(doc)
        if len(batch) >= batch_size:
            store.put_documents(batch)
            count += len(batch)
            batch = []
    if batch:
        store.put_documents(batch)
        count += len(batch)
    return count


# -- the benchmark -----------------------------------------------------------

OPERATIONS: dict[str, OlapQuery] = {
    "roll_up": OlapQuery(target="allergy_food"),
    "drill_down_age": OlapQuery(target="allergy_food", group_by=("age",)),
    "drill_down_age_sex": OlapQuery(target="allergy_food", group_by=("age", "sex")),
    "filter_response": OlapQuery(
        target="allergy_food", filters=(("allergic_to_eggs", "yes"),)
    ),
    "filter_age_sex": OlapQuery(
        target="allergy_food", filters=(("age", "7"), ("sex", "F"))
    ),
}

CSV_COLUMNS = [
    "sessions",
    "initial_load_s",
    "roll_up_s",
    "drill_down_age_s",
    "drill_down_age_sex_s",
    "filter_response_s",
    "filter_age_sex_s",
]


@dataclass
class BenchRow:
    sessions: int
    initial_load_s: float
    op_means_s: dict[str, float]
    stress_means_s: dict[str, float] = field(default_factory=dict)


@dataclass
class BenchReport:
    sizes: tuple[int, ...]
    trials: int
    seed: int
    rows: list[BenchRow] = field(default_factory=list)
    stress_threads: int = 0

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow(
                [
                    row.sessions,
                    f"{row.initial_load_s:.6f}",
                    *(f"{row.op_means_s[op]:.6f}" for op in OPERATIONS),
                ]
            )
        return out.getvalue()

    def linear_log_table(self) -> str:
        """Loading times against log10 of the session count."""
        header = f"{'log10(n)':>9} {'sessions':>10} " + " ".join(
            f"{op:>20}" for op in ("initial_load", *OPERATIONS)
        )
        lines = [header, "-" * len(header)]
        for row in self.rows:
            log_n = math.log10(row.sessions) if row.sessions > 0 else float("-inf")
            cells = [f"{row.initial_load_s:>20.4f}"] + [
                f"{row.op_means_s[op]:>20.4f}" for op in OPERATIONS
            ]
            lines.append(f"{log_n:>9.1f} {row.sessions:>10} " + " ".join(cells))
        return "\n".join(lines)


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def bench(
    sizes: list[int],
    trials: int = 5,
    seed: int = 0,
    workdir: str | Path | None = None,
    manifest: SchemaManifest | None = None,
    stress_threads: int = 0,
    keep_corpora: bool = False,
) -> BenchReport:
    """Measure the five OLAP operations across ascending corpus sizes.

    For each size: generate a corpus, run a full ETL rebuild, time the
    snapshot load, then time each operation (one discarded warm-up, then
    the mean over the counted trials).
    """
    if sorted(sizes) != list(sizes):
        raise GeneratorError("sizes must be ascending")
    if trials < 1:
        raise GeneratorError("trials must be >= 1")
    if trials < 5:
        logger.warning("benchmark running with trials=%d; means below 5 trials are noisy", trials)
    if manifest is None:
        from importlib.resources import files

        from .warehouse import load_manifest

        manifest = load_manifest(files("chatmart.data").joinpath("manifest.json").read_text())

    report = BenchReport(
        sizes=tuple(sizes), trials=trials, seed=seed, stress_threads=stress_threads
    )
    base = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="chatmart-bench-"))
    base.mkdir(parents=True, exist_ok=True)
    try:
        for size in sizes:
            corpus_dir = base / f"n{size}"
            store = DocumentStore(corpus_dir / "store")
            t0 = time.perf_counter()
            generate(GeneratorConfig(count=size, seed=seed), store)
            logger.info("generated %d documents in %.1fs", size, time.perf_counter() - t0)

            pipeline = EtlPipeline(
                store, manifest, corpus_dir / "etl", corpus_dir / "schema.snapshot"
            )
            t0 = time.perf_counter()
            run = pipeline.run("full")
            if run.status != "succeeded":
                raise RuntimeError(f"ETL rebuild failed at size {size}: {run.error}")
            logger.info("etl full rebuild of %d in %.1fs", size, time.perf_counter() - t0)

            engine = OlapEngine(corpus_dir / "schema.snapshot")
            initial_load = _timed(lambda: engine.refresh_cache(force=True))

            for query in OPERATIONS.values():  # warm-up, discarded
                engine.query(query)
            means = {}
            for op, query in OPERATIONS.items():
                total = 0.0
                for _ in range(trials):
                    total += _timed(lambda: engine.query(query))
                means[op] = total / trials

            stress = {}
            if stress_threads > 0:
                with ThreadPoolExecutor(max_workers=stress_threads) as pool:
                    for op, query in OPERATIONS.items():
                        t0 = time.perf_counter()
                        list(
                            pool.map(
                                lambda _: engine.query(query),
                                range(stress_threads * trials),
                            )
                        )
                        elapsed = time.perf_counter() - t0
                        stress[op] = elapsed / (stress_threads * trials)

            report.rows.append(
                BenchRow(
                    sessions=size,
                    initial_load_s=initial_load,
                    op_means_s=means,
                    stress_means_s=stress,
                )
            )
            if not keep_corpora:
                shutil.rmtree(corpus_dir, ignore_errors=True)
    finally:
        if not keep_corpora and workdir is None:
            shutil.rmtree(base, ignore_errors=True)
    return report
