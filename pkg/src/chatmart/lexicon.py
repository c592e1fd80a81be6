"""Entity lexicon: entity types, entity entries, and synonym lists.

The lexicon is the data that drives entity extraction and answer
aggregation. Each entity type groups entries; each entry maps a set of
synonyms (misspellings, translations, hypernyms, elliptical phrases and
so on) to one canonical reference value. Lexicons are loaded from a
human-editable text file, validated, and immutable afterwards, so they
can be shared freely across concurrent readers. Reloading produces a
new object that consumers swap in atomically.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# Canonical answer values shared across the pipeline. DONT_KNOW doubles
# as the no-answer marker recorded when a child never gives a usable
# reply; it is a first-class answer, distinct from an explicit "no".
YES = "yes"
NO = "no"
DONT_KNOW = "don't know"

# Reference value reserved for "nothing applies" answers on list
# questions. The conversation engine maps a bare {NONE_VALUE} match to a
# None field value; it never reaches stored documents.
NONE_VALUE = "none"

MAX_REFERENCE_TOKENS = 5

_PUNCT_RE = re.compile(r"[^\w\s]+", re.UNICODE)
_SECTION_RE = re.compile(r"^\[(type|question_group)\s+([A-Za-z0-9_\-]+)\]$")


class LexiconError(ValueError):
    """Malformed lexicon file or invariant violation.

    The message always names the offending entity type and entry when
    one is involved.
    """


def normalize_tokens(text: str) -> tuple[str, ...]:
    """Normalize free text to the canonical token form used for matching.

    Lowercase, punctuation stripped (not replaced by spaces, so
    "don't" becomes "dont"), whitespace collapsed. Deterministic; empty
    or punctuation-only input yields an empty tuple.
    """
    cleaned = _PUNCT_RE.sub("", text.lower())
    return tuple(cleaned.split())


def edit_distance(a: str, b: str) -> int:
    """Unit-cost Levenshtein distance between two strings.

    Symmetric, zero iff the strings are equal. Two-row dynamic program,
    O(len(a) * len(b)).
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cost = 0 if ca == cb else 1
            cur.append(min(cur[-1] + 1, prev[j] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class EntityEntry:
    """One reference value plus the synonyms that aggregate to it."""

    reference_value: str
    synonyms: tuple[str, ...]
    # Normalized token sequences, reference value included, duplicates
    # removed. Derived at load time.
    synonym_norms: tuple[tuple[str, ...], ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class EntityType:
    name: str
    entries: tuple[EntityEntry, ...]
    matching_mode: str = "fuzzy"  # "fuzzy" | "exact"
    allows_multiple: bool = False

    def reference_values(self) -> tuple[str, ...]:
        return tuple(e.reference_value for e in self.entries)

    def synonym_lookup(self) -> dict[tuple[str, ...], str]:
        """Normalized synonym -> reference value. Lookup is a function:
        load validation guarantees no synonym maps to two values."""
        out: dict[tuple[str, ...], str] = {}
        for entry in self.entries:
            for norm in entry.synonym_norms:
                out[norm] = entry.reference_value
        return out

    def single_token_owners(self) -> dict[str, set[str]]:
        """Token -> reference values owning it as a one-token synonym.

        Used by the matcher to refuse skipping over tokens that are
        themselves answers of a different entry.
        """
        owners: dict[str, set[str]] = {}
        for entry in self.entries:
            for norm in entry.synonym_norms:
                if len(norm) == 1:
                    owners.setdefault(norm[0], set()).add(entry.reference_value)
        return owners


@dataclass(frozen=True)
class Lexicon:
    entity_types: dict[str, EntityType]
    version: int = 1
    # Entity types that feed the same question; collision reporting
    # scans synonym pairs across the members of each group.
    question_groups: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def entity_type(self, name: str) -> EntityType:
        try:
            return self.entity_types[name]
        except KeyError:
            raise LexiconError(f"unknown entity type {name!r}") from None


@dataclass(frozen=True, order=True)
class CollisionPair:
    """Two synonyms of distinct reference values within editing reach."""

    distance: int
    synonym_a: str
    synonym_b: str
    reference_a: str
    reference_b: str
    type_a: str
    type_b: str


def _parse_flag(value: str, *, type_name: str, key: str, line_no: int) -> bool:
    low = value.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise LexiconError(
        f"line {line_no}: entity type {type_name!r}: {key} must be true or false, got {value!r}"
    )


def load_lexicon(source: str) -> Lexicon:
    """Parse and validate lexicon file content.

    Format, one section per entity type::

        version = 1

        [type allergy_food]
        match = fuzzy
        multiple = true
        nuts: nuts, peanut, mani
        seafood: seafood, crab, shrimp, hipon

        [question_group allergy_screen]
        types = allergy_food, colds

    The reference value (left of the colon) is implicitly one of its own
    synonyms. Raises LexiconError on parse errors or invariant
    violations (duplicate synonyms, empty entries, bad references),
    naming the offending entity type and entry.
    """
    version = 1
    types: dict[str, EntityType] = {}
    groups: dict[str, tuple[str, ...]] = {}

    section_kind: str | None = None
    section_name: str | None = None
    cur_mode = "fuzzy"
    cur_multiple = False
    cur_entries: list[tuple[str, list[str], int]] = []
    cur_group_types: list[str] = []

    def close_section(line_no: int) -> None:
        nonlocal section_kind, section_name
        if section_kind == "type":
            assert section_name is not None
            types[section_name] = _build_entity_type(
                section_name, cur_entries, cur_mode, cur_multiple
            )
        elif section_kind == "question_group":
            assert section_name is not None
            if not cur_group_types:
                raise LexiconError(
                    f"line {line_no}: question group {section_name!r} lists no types"
                )
            groups[section_name] = tuple(cur_group_types)
        section_kind = None
        section_name = None

    for line_no, raw_line in enumerate(source.splitlines(), 1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        m = _SECTION_RE.match(line)
        if m:
            close_section(line_no)
            section_kind, section_name = m.group(1), m.group(2)
            if section_kind == "type" and section_name in types:
                raise LexiconError(f"line {line_no}: duplicate entity type {section_name!r}")
            cur_mode = "fuzzy"
            cur_multiple = False
            cur_entries = []
            cur_group_types = []
            continue
        if line.startswith("["):
            raise LexiconError(f"line {line_no}: malformed section header {line!r}")

        if section_kind is None:
            if "=" in line:
                key, _, value = line.partition("=")
                if key.strip() == "version":
                    try:
                        version = int(value.strip())
                    except ValueError:
                        raise LexiconError(
                            f"line {line_no}: version must be an integer, got {value.strip()!r}"
                        ) from None
                    if version < 1:
                        raise LexiconError(f"line {line_no}: version must be >= 1")
                    continue
            raise LexiconError(f"line {line_no}: content outside any section: {line!r}")

        if section_kind == "question_group":
            key, sep, value = line.partition("=")
            if not sep or key.strip() != "types":
                raise LexiconError(
                    f"line {line_no}: question group {section_name!r}: expected 'types = ...'"
                )
            cur_group_types = [t.strip() for t in value.split(",") if t.strip()]
            continue

        # Inside a [type ...] section: either a flag or an entry.
        key, eq_sep, eq_value = line.partition("=")
        if eq_sep and key.strip() in ("match", "multiple") and ":" not in key:
            flag = key.strip()
            if flag == "match":
                mode = eq_value.strip().lower()
                if mode not in ("fuzzy", "exact"):
                    raise LexiconError(
                        f"line {line_no}: entity type {section_name!r}: "
                        f"match must be fuzzy or exact, got {eq_value.strip()!r}"
                    )
                cur_mode = mode
            else:
                cur_multiple = _parse_flag(
                    eq_value, type_name=section_name or "?", key="multiple", line_no=line_no
                )
            continue

        ref, colon, syns = line.partition(":")
        if not colon:
            raise LexiconError(
                f"line {line_no}: entity type {section_name!r}: "
                f"expected 'reference: synonyms' entry, got {line!r}"
            )
        synonyms = [s.strip() for s in syns.split(",") if s.strip()]
        cur_entries.append((ref.strip(), synonyms, line_no))

    close_section(len(source.splitlines()) + 1)

    if not types:
        raise LexiconError("lexicon has no entity types")

    for group_name, members in groups.items():
        for member in members:
            if member not in types:
                raise LexiconError(
                    f"question group {group_name!r} references unknown entity type {member!r}"
                )
        _check_group_synonyms(group_name, [types[m] for m in members])

    return Lexicon(entity_types=types, version=version, question_groups=groups)


def _build_entity_type(
    name: str,
    raw_entries: list[tuple[str, list[str], int]],
    mode: str,
    multiple: bool,
) -> EntityType:
    if not raw_entries:
        raise LexiconError(f"entity type {name!r} has no entries")
    entries: list[EntityEntry] = []
    seen_refs: set[str] = set()
    norm_owner: dict[tuple[str, ...], str] = {}
    for ref, synonyms, line_no in raw_entries:
        ref_norm = normalize_tokens(ref)
        if not ref_norm:
            raise LexiconError(
                f"line {line_no}: entity type {name!r}: empty reference value"
            )
        if len(ref_norm) > MAX_REFERENCE_TOKENS:
            raise LexiconError(
                f"line {line_no}: entity type {name!r}: reference value {ref!r} "
                f"exceeds {MAX_REFERENCE_TOKENS} tokens"
            )
        if ref != ref.lower():
            raise LexiconError(
                f"line {line_no}: entity type {name!r}: reference value {ref!r} "
                "must be lowercase"
            )
        if ref in seen_refs:
            raise LexiconError(
                f"line {line_no}: entity type {name!r}: duplicate reference value {ref!r}"
            )
        seen_refs.add(ref)

        norms: list[tuple[str, ...]] = []
        for syn in [ref, *synonyms]:
            norm = normalize_tokens(syn)
            if not norm:
                raise LexiconError(
                    f"line {line_no}: entity type {name!r}, entry {ref!r}: "
                    f"synonym {syn!r} normalizes to nothing"
                )
            owner = norm_owner.get(norm)
            if owner is not None and owner != ref:
                raise LexiconError(
                    f"entity type {name!r}: synonym {' '.join(norm)!r} appears under "
                    f"both {owner!r} and {ref!r}"
                )
            norm_owner[norm] = ref
            if norm not in norms:
                norms.append(norm)
        entries.append(
            EntityEntry(
                reference_value=ref,
                synonyms=tuple(dict.fromkeys([ref, *synonyms])),
                synonym_norms=tuple(norms),
            )
        )
    return EntityType(
        name=name, entries=tuple(entries), matching_mode=mode, allows_multiple=multiple
    )


def _check_group_synonyms(group_name: str, members: list[EntityType]) -> None:
    """Within a question group the synonym -> reference mapping must stay
    a function, as it does within a single type."""
    owner: dict[tuple[str, ...], tuple[str, str]] = {}
    for etype in members:
        for entry in etype.entries:
            for norm in entry.synonym_norms:
                prev = owner.get(norm)
                if prev is not None and prev[1] != entry.reference_value:
                    raise LexiconError(
                        f"question group {group_name!r}: synonym {' '.join(norm)!r} maps "
                        f"to {prev[1]!r} in type {prev[0]!r} and to "
                        f"{entry.reference_value!r} in type {etype.name!r}"
                    )
                owner.setdefault(norm, (etype.name, entry.reference_value))


def load_lexicon_file(path) -> Lexicon:
    with open(path, "r", encoding="utf-8") as f:
        return load_lexicon(f.read())


def serialize_lexicon(lexicon: Lexicon) -> str:
    """Render a lexicon back to file form. load_lexicon(serialize(L))
    reproduces L for every valid L."""
    lines = [f"version = {lexicon.version}", ""]
    for etype in lexicon.entity_types.values():
        lines.append(f"[type {etype.name}]")
        lines.append(f"match = {etype.matching_mode}")
        lines.append(f"multiple = {'true' if etype.allows_multiple else 'false'}")
        for entry in etype.entries:
            extras = [s for s in entry.synonyms if s != entry.reference_value]
            lines.append(f"{entry.reference_value}: {', '.join([entry.reference_value, *extras])}")
        lines.append("")
    for name, members in lexicon.question_groups.items():
        lines.append(f"[question_group {name}]")
        lines.append(f"types = {', '.join(members)}")
        lines.append("")
    return "\n".join(lines)


def collision_report(lexicon: Lexicon, max_distance: int) -> list[CollisionPair]:
    """Surface near-collisions between synonyms of distinct reference values.

    Scans every synonym pair within one entity type, plus pairs across
    types belonging to the same declared question group, and reports the
    ones whose edit distance is within max_distance. Curators use this
    to spot words the fuzzy matcher could confuse and to add the
    confusable word as an exact entry under its true reference value.

    Pairs are unordered (each reported once, synonym_a < synonym_b) and
    sorted ascending by distance. max_distance 0 always yields an empty
    list since distinct synonyms are at distance >= 1.
    """
    if max_distance < 0:
        raise ValueError("max_distance must be >= 0")

    scopes: list[list[EntityType]] = [[t] for t in lexicon.entity_types.values()]
    for members in lexicon.question_groups.values():
        scopes.append([lexicon.entity_types[m] for m in members])

    found: set[CollisionPair] = set()
    for scope in scopes:
        flat: list[tuple[str, str, str]] = []  # (synonym text, reference, type)
        for etype in scope:
            for entry in etype.entries:
                for norm in entry.synonym_norms:
                    flat.append((" ".join(norm), entry.reference_value, etype.name))
        for i in range(len(flat)):
            syn_a, ref_a, type_a = flat[i]
            for j in range(i + 1, len(flat)):
                syn_b, ref_b, type_b = flat[j]
                if ref_a == ref_b:
                    continue
                if abs(len(syn_a) - len(syn_b)) > max_distance:
                    continue
                d = edit_distance(syn_a, syn_b)
                if d <= max_distance and d > 0:
                    if (syn_a, ref_a, type_a) <= (syn_b, ref_b, type_b):
                        pair = CollisionPair(d, syn_a, syn_b, ref_a, ref_b, type_a, type_b)
                    else:
                        pair = CollisionPair(d, syn_b, syn_a, ref_b, ref_a, type_b, type_a)
                    found.add(pair)
    return sorted(found)
