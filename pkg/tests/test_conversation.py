import json

import pytest

from chatmart.conversation import (
    NO_ANSWER,
    EngineConfig,
    ScriptError,
    SessionEndedError,
    advance,
    finish_session,
    load_script,
    parse_script,
    replay,
    start_session,
    validate_script,
)

MINI_SCRIPT = {
    "flows": [
        {
            "name": "only",
            "pages": [
                {
                    "id": "gate",
                    "prompts": {"en": "Any food allergy?"},
                    "entity_type": "yes_no_dont_know",
                    "transitions": [
                        {"on": "yes", "to": "detail"},
                        {"on": "no", "to": "end", "set": {"allergy_food": None}},
                        {"on": "*", "to": "end", "set": {"allergy_food": "don't know"}},
                    ],
                },
                {
                    "id": "detail",
                    "prompts": {"en": "Which food?"},
                    "entity_type": "allergy_food",
                    "target_field": "allergy_food",
                    "transitions": [{"on": "*", "to": "end"}],
                },
            ],
        }
    ]
}


def test_start_session_returns_first_prompt(default_script, default_lexicon):
    state, prompt = start_session(default_script, default_lexicon)
    assert prompt.startswith("What language")
    assert not state.ended


def test_unreachable_page_rejected(default_lexicon):
    bad = json.loads(json.dumps(MINI_SCRIPT))
    bad["flows"][0]["pages"].append(
        {
            "id": "orphan",
            "prompts": {"en": "?"},
            "entity_type": "yes_no_dont_know",
            "transitions": [{"on": "*", "to": "end"}],
        }
    )
    with pytest.raises(ScriptError, match="unreachable.*orphan"):
        validate_script(parse_script(bad), default_lexicon)


def test_missing_entity_type_names_page(default_lexicon):
    bad = json.loads(json.dumps(MINI_SCRIPT))
    bad["flows"][0]["pages"][1]["entity_type"] = "not_in_lexicon"
    with pytest.raises(ScriptError, match="detail"):
        validate_script(parse_script(bad), default_lexicon)


def test_duplicate_target_field_rejected(default_lexicon):
    bad = json.loads(json.dumps(MINI_SCRIPT))
    bad["flows"][0]["pages"][0]["target_field"] = "allergy_food"
    with pytest.raises(ScriptError, match="allergy_food"):
        validate_script(parse_script(bad), default_lexicon)


def test_self_transition_rejected(default_lexicon):
    bad = json.loads(json.dumps(MINI_SCRIPT))
    bad["flows"][0]["pages"][1]["transitions"] = [{"on": "*", "to": "detail"}]
    with pytest.raises(ScriptError, match="itself"):
        validate_script(parse_script(bad), default_lexicon)


def test_missing_default_transition_rejected(default_lexicon):
    bad = json.loads(json.dumps(MINI_SCRIPT))
    bad["flows"][0]["pages"][1]["transitions"] = [{"on": "egg", "to": "end"}]
    with pytest.raises(ScriptError, match="default"):
        validate_script(parse_script(bad), default_lexicon)


def test_no_terminal_rejected(default_lexicon):
    bad = {
        "flows": [
            {
                "name": "loop",
                "pages": [
                    {
                        "id": "a",
                        "prompts": {"en": "?"},
                        "entity_type": "yes_no_dont_know",
                        "transitions": [{"on": "*", "to": "b"}],
                    },
                    {
                        "id": "b",
                        "prompts": {"en": "?"},
                        "entity_type": "yes_no_dont_know",
                        "transitions": [{"on": "*", "to": "a"}],
                    },
                ],
            }
        ]
    }
    with pytest.raises(ScriptError, match="terminal"):
        validate_script(parse_script(bad), default_lexicon)


# -- full sessions -------------------------------------------------------------


def test_full_session_produces_reference_document(
    default_script, default_lexicon, reference_transcript, reference_document
):
    state, _ = replay(default_script, default_lexicon, reference_transcript)
    document = finish_session(state)
    expected = {k: v for k, v in reference_document.items() if k != "session_id"}
    restricted = {k: v for k, v in document.items() if k in expected}
    assert restricted == expected
    # relative field order matches the reference document
    order = [k for k in document if k in expected]
    assert order == list(expected)
    # the shipped script also asks age; nothing else is added
    assert set(document) - set(expected) == {"age"}
    assert document["age"] == "7"


def test_consent_refused_ends_session_immediately(default_script, default_lexicon):
    state, _ = replay(
        default_script, default_lexicon, ["English", "Ana Reyes", "girl", "6", "no"]
    )
    document = finish_session(state)
    assert document == {
        "username": "ana-reyes",
        "sex": "F",
        "age": "6",
        "data_privacy_consent": False,
    }


def test_reprompt_then_no_answer_marker(default_script, default_lexicon):
    config = EngineConfig(max_reprompts=2)
    state, _ = start_session(default_script, default_lexicon, config)
    # language page: three unusable answers exhaust the cap and move on
    for i in range(2):
        result = advance(state, "zzz qqq")
        assert result.reprompted and state.page_id == "language_select"
    result = advance(state, "zzz qqq")
    assert not result.reprompted
    assert state.page_id == "ask_username"

    # a page with a target field records the no-answer marker
    advance(state, "Ana")           # username
    advance(state, "girl")          # sex
    for _ in range(3):
        result = advance(state, "grmbl")  # age: exhaust reprompts
    assert state.fields["age"] == NO_ANSWER
    assert state.page_id == "ask_consent"


def test_consent_reprompt_exhaustion_is_refusal(default_script, default_lexicon):
    state, _ = replay(
        default_script,
        default_lexicon,
        ["English", "Ana", "girl", "6", "zzz", "zzz", "zzz"],
    )
    assert finish_session(state)["data_privacy_consent"] is False


def test_none_answer_on_list_question_becomes_null(default_script, default_lexicon):
    utterances = [
        "English", "Ana", "girl", "6", "yes",
        "no",            # food gate
        "yes",           # fur gate
        "wala po",       # felt: nothing applies
        "wala",          # intervention: nothing applies
    ]
    state, _ = replay(default_script, default_lexicon, utterances)
    document = finish_session(state)
    assert document["allergy_food"] is None
    assert document["allergy_animal_fur"] == "yes"
    assert document["allergy_felt"] is None
    assert document["allergy_intervention"] is None


def test_dont_know_gate_marks_whole_question(default_script, default_lexicon):
    utterances = [
        "English", "Ana", "girl", "6", "yes",
        "hindi ko po alam",  # food gate: don't know
        "no", "rashes", "ointment",
    ]
    state, _ = replay(default_script, default_lexicon, utterances)
    document = finish_session(state)
    assert document["allergy_food"] == "don't know"
    assert document["allergy_animal_fur"] is None


def test_prompts_switch_language(default_script, default_lexicon, reference_transcript):
    _, prompts = replay(default_script, default_lexicon, reference_transcript)
    assert prompts[1] == "Ano ang iyong username?"
    assert prompts[5] == "May allergy ka ba sa pagkain?"


def test_replay_determinism(default_script, default_lexicon, reference_transcript):
    state_a, prompts_a = replay(default_script, default_lexicon, reference_transcript)
    state_b, prompts_b = replay(default_script, default_lexicon, reference_transcript)
    assert finish_session(state_a) == finish_session(state_b)
    assert prompts_a == prompts_b


def test_advance_after_end_raises(default_script, default_lexicon):
    state, _ = replay(default_script, default_lexicon, ["English", "Ana", "girl", "6", "no"])
    with pytest.raises(SessionEndedError):
        advance(state, "hello")


def test_finish_active_session_raises(default_script, default_lexicon):
    state, _ = start_session(default_script, default_lexicon)
    with pytest.raises(SessionEndedError):
        finish_session(state)


def test_fsm_stays_on_declared_pages(default_script, default_lexicon, reference_transcript):
    state, _ = start_session(default_script, default_lexicon)
    known = {p.id for f in default_script.flows for p in f.pages}
    for utterance in reference_transcript:
        assert state.page_id in known
        flow = default_script.flow_of(state.page_id)
        assert any(p.id == state.page_id for p in flow.pages)
        advance(state, utterance)
    assert state.ended
