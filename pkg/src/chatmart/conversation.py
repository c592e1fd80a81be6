"""Conversation engine: modular flows of pages driven as finite-state machines.

A script declares flows; each flow is an FSM whose states are pages
(questions) and whose transitions are keyed by the matched reference
value. Advancing a session integrates the child's utterance against the
page's entity type, records the aggregated answer into the page's
target field, and follows the transition. A no-match answer re-issues
the prompt up to a reprompt cap, after which the no-answer marker is
recorded and the FSM moves on, which guarantees progress.

The engine itself is stateless: all mutable state lives in the
SessionState owned by exactly one session. Scripts and lexicons are
immutable and shared.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .lexicon import DONT_KNOW, NONE_VALUE, Lexicon, normalize_tokens
from .matching import MatcherConfig, Utterance, integrate_answer

END = "end"
FLOW_PREFIX = "flow:"

# Recorded when the reprompt cap is exhausted without a usable answer.
# "don't know" is a first-class answer value, distinct from an explicit
# "no" (which gates record as None).
NO_ANSWER = DONT_KNOW


class ScriptError(ValueError):
    """Invalid conversation script."""


class SessionEndedError(RuntimeError):
    """advance() called on a session that already ended."""


@dataclass(frozen=True)
class Transition:
    on: str  # reference value, or "*" for the default / exhaustion path
    to: str  # page id, "flow:<name>", or "end"
    set_fields: tuple[tuple[str, Any], ...] = ()


@dataclass(frozen=True)
class Page:
    id: str
    prompts: Mapping[str, str]
    entity_type: str | None
    target_field: str | None
    transitions: tuple[Transition, ...]
    capture: str = "entity"  # "entity" | "text"
    value_map: Mapping[str, Any] | None = None
    sets_language: bool = False

    def prompt(self, language: str) -> str:
        if language in self.prompts:
            return self.prompts[language]
        if "en" in self.prompts:
            return self.prompts["en"]
        return next(iter(self.prompts.values()))

    def transition_for(self, value: str) -> Transition:
        for t in self.transitions:
            if t.on == value:
                return t
        for t in self.transitions:
            if t.on == "*":
                return t
        raise ScriptError(f"page {self.id!r}: no transition for {value!r}")


@dataclass(frozen=True)
class Flow:
    name: str
    pages: tuple[Page, ...]


@dataclass(frozen=True)
class ConversationScript:
    flows: tuple[Flow, ...]

    def first_page(self) -> Page:
        return self.flows[0].pages[0]

    def flow_of(self, page_id: str) -> Flow:
        for flow in self.flows:
            if any(p.id == page_id for p in flow.pages):
                return flow
        raise ScriptError(f"unknown page {page_id!r}")

    def page(self, page_id: str) -> Page:
        for flow in self.flows:
            for p in flow.pages:
                if p.id == page_id:
                    return p
        raise ScriptError(f"unknown page {page_id!r}")

    def flow(self, name: str) -> Flow:
        for f in self.flows:
            if f.name == name:
                return f
        raise ScriptError(f"unknown flow {name!r}")


@dataclass
class EngineConfig:
    max_reprompts: int = 2
    default_language: str = "en"
    matcher: MatcherConfig = field(default_factory=MatcherConfig)


@dataclass
class SessionState:
    """All mutable state of one running session."""

    session_id: str
    script: ConversationScript
    lexicon: Lexicon
    config: EngineConfig
    page_id: str
    fields: dict[str, Any] = field(default_factory=dict)
    reprompt_count: int = 0
    language: str = "en"
    ended: bool = False

    @property
    def flow_name(self) -> str:
        return self.script.flow_of(self.page_id).name


@dataclass(frozen=True)
class AdvanceResult:
    prompt: str | None  # next prompt, or None when the session ended
    ended: bool
    reprompted: bool = False


def parse_script(data: dict) -> ConversationScript:
    """Build a ConversationScript from its JSON form (not yet validated
    against a lexicon; see validate_script)."""
    try:
        flows_data = data["flows"]
    except (KeyError, TypeError):
        raise ScriptError("script must have a 'flows' list") from None
    flows = []
    for fdata in flows_data:
        pages = []
        for pdata in fdata.get("pages", []):
            transitions = tuple(
                Transition(
                    on=t["on"],
                    to=t["to"],
                    set_fields=tuple((k, v) for k, v in t.get("set", {}).items()),
                )
                for t in pdata.get("transitions", [])
            )
            pages.append(
                Page(
                    id=pdata["id"],
                    prompts=dict(pdata["prompts"]),
                    entity_type=pdata.get("entity_type"),
                    target_field=pdata.get("target_field"),
                    transitions=transitions,
                    capture=pdata.get("capture", "entity"),
                    value_map=pdata.get("value_map"),
                    sets_language=pdata.get("sets_language", False),
                )
            )
        flows.append(Flow(name=fdata["name"], pages=tuple(pages)))
    return ConversationScript(flows=tuple(flows))


def load_script(source: str, lexicon: Lexicon | None = None) -> ConversationScript:
    script = parse_script(json.loads(source))
    if lexicon is not None:
        validate_script(script, lexicon)
    return script


def load_script_file(path, lexicon: Lexicon | None = None) -> ConversationScript:
    with open(path, "r", encoding="utf-8") as f:
        return load_script(f.read(), lexicon)


def validate_script(script: ConversationScript, lexicon: Lexicon) -> None:
    """Check the FSM invariants; raises ScriptError naming the offender.

    Each flow must be a connected machine (every page reachable from its
    first page) with at least one terminal transition, transitions must
    point at declared pages or flows, no page may transition to itself,
    every entity page must name an entity type present in the lexicon,
    and target fields must be unique across the whole script.
    """
    if not script.flows or not script.flows[0].pages:
        raise ScriptError("script has no flows or the first flow has no pages")

    page_ids: set[str] = set()
    flow_names = {f.name for f in script.flows}
    for flow in script.flows:
        if not flow.pages:
            raise ScriptError(f"flow {flow.name!r} has no pages")
        for page in flow.pages:
            if page.id in page_ids:
                raise ScriptError(f"duplicate page id {page.id!r}")
            page_ids.add(page.id)

    seen_fields: set[str] = set()
    for flow in script.flows:
        for page in flow.pages:
            if page.capture not in ("entity", "text"):
                raise ScriptError(f"page {page.id!r}: unknown capture kind {page.capture!r}")
            if not page.prompts:
                raise ScriptError(f"page {page.id!r}: no prompts")
            if page.capture == "entity":
                if page.entity_type is None:
                    raise ScriptError(f"page {page.id!r}: entity page without entity_type")
                if page.entity_type not in lexicon.entity_types:
                    raise ScriptError(
                        f"page {page.id!r}: entity type {page.entity_type!r} "
                        "is not in the lexicon"
                    )
            if page.target_field is not None:
                if page.target_field in seen_fields:
                    raise ScriptError(
                        f"page {page.id!r}: target field {page.target_field!r} "
                        "already used by another page"
                    )
                seen_fields.add(page.target_field)
            if not any(t.on == "*" for t in page.transitions):
                raise ScriptError(f"page {page.id!r}: missing default '*' transition")
            refs = (
                set(lexicon.entity_type(page.entity_type).reference_values())
                if page.capture == "entity" and page.entity_type
                else set()
            )
            for t in page.transitions:
                if t.on != "*" and t.on not in refs:
                    raise ScriptError(
                        f"page {page.id!r}: transition on {t.on!r} is not a "
                        f"reference value of {page.entity_type!r}"
                    )
                if t.to == page.id:
                    raise ScriptError(f"page {page.id!r}: transition to itself")
                if t.to == END:
                    continue
                if t.to.startswith(FLOW_PREFIX):
                    if t.to[len(FLOW_PREFIX):] not in flow_names:
                        raise ScriptError(f"page {page.id!r}: unknown flow target {t.to!r}")
                elif t.to not in page_ids:
                    raise ScriptError(f"page {page.id!r}: unknown page target {t.to!r}")
            if page.value_map:
                for key in page.value_map:
                    if refs and key not in refs:
                        raise ScriptError(
                            f"page {page.id!r}: value_map key {key!r} is not a "
                            f"reference value of {page.entity_type!r}"
                        )

    # Per-flow reachability and termination.
    for flow in script.flows:
        ids_in_flow = {p.id for p in flow.pages}
        reachable = {flow.pages[0].id}
        frontier = [flow.pages[0].id]
        terminal_reachable = False
        while frontier:
            page = script.page(frontier.pop())
            for t in page.transitions:
                if t.to == END or t.to.startswith(FLOW_PREFIX):
                    terminal_reachable = True
                elif t.to in ids_in_flow and t.to not in reachable:
                    reachable.add(t.to)
                    frontier.append(t.to)
        unreachable = ids_in_flow - reachable
        if unreachable:
            raise ScriptError(
                f"flow {flow.name!r}: unreachable pages {sorted(unreachable)}"
            )
        if not terminal_reachable:
            raise ScriptError(f"flow {flow.name!r}: no terminal state reachable")

    # Every flow reachable from the first.
    reachable_flows = {script.flows[0].name}
    frontier_flows = [script.flows[0]]
    while frontier_flows:
        flow = frontier_flows.pop()
        for page in flow.pages:
            for t in page.transitions:
                if t.to.startswith(FLOW_PREFIX):
                    name = t.to[len(FLOW_PREFIX):]
                    if name not in reachable_flows:
                        reachable_flows.add(name)
                        frontier_flows.append(script.flow(name))
    unreachable_flows = flow_names - reachable_flows
    if unreachable_flows:
        raise ScriptError(f"unreachable flows {sorted(unreachable_flows)}")


def start_session(
    script: ConversationScript,
    lexicon: Lexicon,
    config: EngineConfig | None = None,
    session_id: str | None = None,
) -> tuple[SessionState, str]:
    """Validate the script and position a fresh session at its first page."""
    config = config or EngineConfig()
    validate_script(script, lexicon)
    if session_id is None:
        from .docstore import new_session_id

        session_id = new_session_id()
    first = script.first_page()
    state = SessionState(
        session_id=session_id,
        script=script,
        lexicon=lexicon,
        config=config,
        page_id=first.id,
        language=config.default_language,
    )
    return state, first.prompt(state.language)


def _mapped(page: Page, value: str) -> Any:
    if page.value_map is not None and value in page.value_map:
        return page.value_map[value]
    return value


def _record_answer(state: SessionState, page: Page, values: tuple[str, ...]) -> None:
    if page.target_field is None:
        return
    etype = (
        state.lexicon.entity_type(page.entity_type)
        if page.capture == "entity" and page.entity_type
        else None
    )
    if etype is not None and etype.allows_multiple:
        # A lone "nothing applies" answer becomes None (same meaning as
        # a gate answered no); mixed in with real answers it is dropped.
        real = [v for v in values if v != NONE_VALUE]
        if not real:
            state.fields[page.target_field] = None
        else:
            state.fields[page.target_field] = [_mapped(page, v) for v in real]
    else:
        state.fields[page.target_field] = _mapped(page, values[0])


def _follow(state: SessionState, transition: Transition) -> Page | None:
    """Apply a transition; returns the next page or None when the session
    ended. Field literals attached to the transition are written first."""
    for name, value in transition.set_fields:
        state.fields[name] = value
    if transition.to == END:
        state.ended = True
        return None
    if transition.to.startswith(FLOW_PREFIX):
        next_page = state.script.flow(transition.to[len(FLOW_PREFIX):]).pages[0]
    else:
        next_page = state.script.page(transition.to)
    state.page_id = next_page.id
    state.reprompt_count = 0
    return next_page


def advance(state: SessionState, utterance_text: str) -> AdvanceResult:
    """Feed one utterance to the session and move the FSM.

    On a match the target field is recorded and the matched value's
    transition is taken. On no-match the same prompt is re-issued until
    the reprompt cap, after which the no-answer marker is recorded and
    the default transition is taken, so any bounded utterance sequence
    terminates.
    """
    if state.ended:
        raise SessionEndedError(f"session {state.session_id} already ended")

    page = state.script.page(state.page_id)

    if page.capture == "text":
        tokens = normalize_tokens(utterance_text)
        values: tuple[str, ...] = ("-".join(tokens),) if tokens else ()
    else:
        assert page.entity_type is not None
        values = integrate_answer(
            Utterance(utterance_text),
            page.entity_type,
            state.lexicon,
            state.config.matcher,
        )

    if not values:
        if state.reprompt_count < state.config.max_reprompts:
            state.reprompt_count += 1
            return AdvanceResult(prompt=page.prompt(state.language), ended=False, reprompted=True)
        if page.target_field is not None:
            state.fields[page.target_field] = _mapped(page, NO_ANSWER)
        next_page = _follow(state, page.transition_for("*"))
        return AdvanceResult(
            prompt=None if next_page is None else next_page.prompt(state.language),
            ended=next_page is None,
        )

    if page.sets_language:
        state.language = str(_mapped(page, values[0]))
    _record_answer(state, page, values)
    next_page = _follow(state, page.transition_for(values[0]))
    return AdvanceResult(
        prompt=None if next_page is None else next_page.prompt(state.language),
        ended=next_page is None,
    )


def finish_session(state: SessionState) -> dict[str, Any]:
    """Return the session document for an ended session: all answered
    fields in ask order. The store stamps the session id on write."""
    if not state.ended:
        raise SessionEndedError(f"session {state.session_id} is still active")
    return dict(state.fields)


def replay(
    script: ConversationScript,
    lexicon: Lexicon,
    utterances: list[str],
    config: EngineConfig | None = None,
    session_id: str | None = None,
) -> tuple[SessionState, list[str]]:
    """Drive a whole session from a scripted utterance list; returns the
    final state and every prompt issued. Raises if utterances remain
    after the session ended or run out before it ends."""
    state, prompt = start_session(script, lexicon, config, session_id)
    prompts = [prompt]
    for i, utterance in enumerate(utterances):
        result = advance(state, utterance)
        if result.ended:
            leftover = utterances[i + 1:]
            if leftover:
                raise SessionEndedError(f"{len(leftover)} utterances left after session end")
            return state, prompts
        prompts.append(result.prompt)  # type: ignore[arg-type]
    raise SessionEndedError("utterances exhausted before the session ended")
