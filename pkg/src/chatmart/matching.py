"""Answer integration: fuzzy entity extraction and aggregation.

Extracts entity reference values from a raw utterance by matching its
normalized tokens against the synonym lists of one entity type, then
aggregates every matched synonym to its reference value. An empty
result is the no-match event that tells the conversation engine to
reprompt; it is never a silent empty success.

Matching rules:

* Tokens are compared by normalized character edit distance,
  distance / max(len(a), len(b)), accepted when <= the configured
  threshold (default 0.25: one edit in words of four or more
  characters, shorter words must match exactly).
* A synonym of k tokens matches k consecutive utterance tokens, or up
  to max_gap extra tokens may be skipped between matched ones (default
  2), so "hindi ko po alam" still reaches "hindi alam". A skipped token
  must not itself be a one-token synonym of a different entry of the
  same type.
* A synonym occurring verbatim scores 0 and pre-empts fuzzy candidates
  for the same span, which is how a guard entry like "sipon" under
  colds stops the false fuzzy match to "hipon".
* Each reference value is reported at most once. When the entity type
  takes a single answer, the best candidate wins; candidates are ranked
  by score, then by longer (more specific) synonym, then earliest span,
  then lexicographically smallest reference value.

All functions are pure over immutable inputs and safe for unlimited
concurrent callers.
"""

from __future__ import annotations

from dataclasses import dataclass

from .lexicon import EntityType, Lexicon, edit_distance, normalize_tokens

MAX_UTTERANCE_CHARS = 2000

MATCHED = "matched"
NO_MATCH = "no_match"


class UnknownEntityTypeError(KeyError):
    pass


class UtteranceTooLongError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    raw_text: str
    language_hint: str | None = None


@dataclass(frozen=True)
class MatcherConfig:
    threshold: float = 0.25
    max_gap: int = 2


@dataclass(frozen=True)
class Match:
    reference_value: str
    span: tuple[int, int]  # inclusive token indices into the utterance
    score: float  # worst per-token normalized distance, 0 = exact tokens
    synonym: str  # the synonym that matched, space-joined normalized form


@dataclass(frozen=True)
class MatchResult:
    matches: tuple[Match, ...]
    status: str  # MATCHED | NO_MATCH

    @property
    def reference_values(self) -> tuple[str, ...]:
        return tuple(m.reference_value for m in self.matches)


def normalize(utterance: Utterance) -> tuple[str, ...]:
    """Lowercase, punctuation-stripped, whitespace-split token sequence."""
    return normalize_tokens(utterance.raw_text)


def token_distance(a: str, b: str) -> float:
    """Edit distance between two tokens normalized to [0, 1] by the
    longer length. 0 iff equal."""
    if a == b:
        return 0.0
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return edit_distance(a, b) / longest


# Candidate ordering: best first. Lower score, then more synonym tokens
# (a longer phrase is more specific: "wala kabalo" must beat "wala"),
# then longer synonym text, then earlier and shorter span, then the
# lexicographically smallest reference value. Total, hence deterministic.
def _candidate_key(c: "_Candidate"):
    return (
        c.score,
        -c.syn_token_count,
        -c.syn_char_len,
        c.span[0],
        c.span[1],
        c.reference_value,
    )


@dataclass(frozen=True)
class _Candidate:
    reference_value: str
    span: tuple[int, int]
    score: float
    synonym: str
    syn_token_count: int
    syn_char_len: int
    contiguous_exact: bool


def _align(
    syn: tuple[str, ...],
    tokens: tuple[str, ...],
    start: int,
    config: MatcherConfig,
    blocked: dict[str, set[str]],
    reference_value: str,
) -> tuple[int, float, int] | None:
    """Best alignment of syn against tokens anchored at start.

    Returns (end index, score, gaps used) minimizing (score, gaps, end),
    or None. Gaps are skipped utterance tokens strictly between matched
    ones; a token owned as a one-token synonym by a different entry of
    this type must not be skipped.
    """
    best: tuple[float, int, int] | None = None  # (score, gaps, end)
    n = len(tokens)

    def walk(j: int, t: int, gaps: int, worst: float) -> None:
        nonlocal best
        if j == len(syn):
            cand = (worst, gaps, t - 1)
            if best is None or cand < best:
                best = cand
            return
        if t >= n:
            return
        d = token_distance(syn[j], tokens[t])
        if d <= config.threshold:
            walk(j + 1, t + 1, gaps, max(worst, d))
        # Skipping is only allowed between matched tokens.
        if j > 0 and gaps < config.max_gap:
            owners = blocked.get(tokens[t])
            if not owners or owners == {reference_value}:
                walk(j, t + 1, gaps + 1, worst)

    walk(0, start, 0, 0.0)
    if best is None:
        return None
    score, gaps, end = best
    return end, score, gaps


def fuzzy_match(
    tokens: tuple[str, ...],
    entity_type: EntityType,
    config: MatcherConfig | None = None,
) -> MatchResult:
    """Match an entity type's synonyms against a normalized token
    sequence; see the module docstring for the rules."""
    config = config or MatcherConfig()
    blocked = entity_type.single_token_owners()

    candidates: list[_Candidate] = []
    for entry in entity_type.entries:
        for syn in entry.synonym_norms:
            if len(syn) > len(tokens):
                continue
            for start in range(len(tokens) - len(syn) + 1):
                aligned = _align(syn, tokens, start, config, blocked, entry.reference_value)
                if aligned is None:
                    continue
                end, score, gaps = aligned
                candidates.append(
                    _Candidate(
                        reference_value=entry.reference_value,
                        span=(start, end),
                        score=score,
                        synonym=" ".join(syn),
                        syn_token_count=len(syn),
                        syn_char_len=sum(len(t) for t in syn),
                        contiguous_exact=(score == 0.0 and gaps == 0),
                    )
                )

    # A verbatim occurrence wins its span outright.
    exact_spans = {c.span for c in candidates if c.contiguous_exact}
    candidates = [c for c in candidates if c.score == 0.0 or c.span not in exact_spans]

    # One candidate per reference value: its best-ranked occurrence.
    best_per_ref: dict[str, _Candidate] = {}
    for cand in sorted(candidates, key=_candidate_key):
        best_per_ref.setdefault(cand.reference_value, cand)
    ranked = sorted(best_per_ref.values(), key=_candidate_key)

    if not ranked:
        return MatchResult(matches=(), status=NO_MATCH)

    if entity_type.allows_multiple:
        accepted: list[_Candidate] = []
        for cand in ranked:
            if all(
                cand.span[1] < got.span[0] or cand.span[0] > got.span[1]
                for got in accepted
            ):
                accepted.append(cand)
    else:
        accepted = [ranked[0]]

    accepted.sort(key=lambda c: c.span)
    return MatchResult(
        matches=tuple(
            Match(c.reference_value, c.span, c.score, c.synonym) for c in accepted
        ),
        status=MATCHED,
    )


def integrate_answer(
    utterance: Utterance | str,
    entity_type_name: str,
    lexicon: Lexicon,
    config: MatcherConfig | None = None,
) -> tuple[str, ...]:
    """Aggregated reference values for one utterance, in utterance order.

    An empty tuple is the no-match event (reprompt). Exact-mode entity
    types match only when the whole normalized utterance equals one
    synonym. Raises UnknownEntityTypeError / UtteranceTooLongError.
    """
    if isinstance(utterance, str):
        utterance = Utterance(utterance)
    if len(utterance.raw_text) > MAX_UTTERANCE_CHARS:
        raise UtteranceTooLongError(
            f"utterance of {len(utterance.raw_text)} characters exceeds "
            f"{MAX_UTTERANCE_CHARS}"
        )
    if entity_type_name not in lexicon.entity_types:
        raise UnknownEntityTypeError(entity_type_name)
    entity_type = lexicon.entity_types[entity_type_name]
    tokens = normalize(utterance)

    if entity_type.matching_mode == "exact":
        ref = entity_type.synonym_lookup().get(tokens)
        return (ref,) if ref is not None else ()

    result = fuzzy_match(tokens, entity_type, config)
    return result.reference_values
