"""Verification engine: prompts, parsing, consensus rules, orchestration."""

import json
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GOLDEN_CROSSVAL_RESPONSE, GOLDEN_FORENSIC_RESPONSE
from mmverify.clients import FlakyLlmClient, StubLlmClient
from mmverify.errors import (
    BadCoordinates,
    BadDate,
    ExhaustedRetries,
    LlmRefusal,
    MissingBinding,
    NoJsonFound,
    SchemaViolation,
)
from mmverify.evidence import EvidenceBuffer
from mmverify.model import ConsensusLabel, DateSpan, GeoPoint, SourceDocument
from mmverify.verify import (
    call_llm,
    classify_consensus,
    format_coordinates,
    load_template,
    parse_coordinates,
    parse_date,
    parse_llm_json,
    render_prompt,
    run_cross_validation,
    run_forensic_analysis,
)


def buffer_with(n=3) -> EvidenceBuffer:
    docs = tuple(
        SourceDocument(f"https://src.example/{i}", "Not available", f"source {i}",
                       f"content {i}", i + 1, i == 0)
        for i in range(n)
    )
    return EvidenceBuffer("ID115", docs, "2025-01-01T00:00:00+00:00")


# -- templates and rendering -----------------------------------------------------

def test_templates_match_bundled_files():
    for template_id in ("cross_validation", "forensic"):
        template = load_template(template_id)
        assert template.body == load_template(template_id).body
        assert "{{" in template.body


def test_cross_validation_prompt_contains_rule_text_and_sources():
    prompt = render_prompt("cross_validation", {
        "sources": json.dumps([d.to_dict() for d in buffer_with(3).documents]),
    })
    assert "If the time frame is less than 1 month" in prompt
    assert '"concensus": "Yes"/"Partial"/"Non-verifiable"' in prompt
    for i in range(3):
        assert f"https://src.example/{i}" in prompt


def test_forensic_prompt_contains_synthetic_check():
    prompt = render_prompt("forensic", {"metadata": "{}", "images": 2})
    assert "Check if the content is synthetic" in prompt
    assert '"metadata-validation"' in prompt
    assert "2 image(s) attached" in prompt


def test_missing_binding_is_error():
    with pytest.raises(MissingBinding):
        render_prompt("cross_validation", {})


# -- call_llm -------------------------------------------------------------------

def ok_client(text="{}"):
    return StubLlmClient(responses={"default": {"text": text}})


def test_call_llm_happy_path():
    response = call_llm("prompt", [], ok_client('{"a": 1}'))
    assert not response.refusal
    assert response.raw_text == '{"a": 1}'


def test_call_llm_detects_phrase_refusal():
    response = call_llm("prompt", [],
                        ok_client("I'm sorry, I can't help with that."))
    assert response.refusal


def test_call_llm_detects_content_filter_flag():
    client = StubLlmClient(responses={"default": {
        "text": "", "finish_reason": "content_filter", "content_filtered": True,
    }})
    assert call_llm("prompt", [], client).refusal


def test_call_llm_retries_then_succeeds():
    client = FlakyLlmClient(ok_client('{"ok": true}'), fail_first=2)
    response = call_llm("prompt", [], client, sleep=lambda s: None)
    assert client.calls == 3
    assert not response.refusal


def test_call_llm_exhausts_retries():
    client = FlakyLlmClient(ok_client(), fail_first=10)
    with pytest.raises(ExhaustedRetries):
        call_llm("prompt", [], client, sleep=lambda s: None)
    assert client.calls == 3


# -- parse_llm_json ----------------------------------------------------------------

def test_parse_strips_code_fences():
    raw = '```json\n{"location": 1, "date": 2, "about": 3, "tag": []}\n```'
    assert parse_llm_json(raw, "cross_validation")["location"] == 1


def test_parse_missing_tag_names_the_key():
    raw = '{"location": 1, "date": 2, "about": 3}'
    with pytest.raises(SchemaViolation) as exc_info:
        parse_llm_json(raw, "cross_validation")
    assert exc_info.value.missing_keys == ["tag"]


def test_parse_object_wrapped_in_prose():
    raw = ('Sure! Here is the answer you asked for:\n'
           '{"location": {"location": "x"}, "date": {}, "about": {}, "tag": []}\n'
           'Let me know if you need anything else.')
    parsed = parse_llm_json(raw, "cross_validation")
    assert parsed["location"] == {"location": "x"}


def test_parse_skips_unparseable_brace_groups():
    raw = '{not json} then {"location": 1, "date": 1, "about": 1, "tag": 1}'
    assert parse_llm_json(raw, "cross_validation")["tag"] == 1


def test_parse_no_json_found():
    with pytest.raises(NoJsonFound):
        parse_llm_json("no braces here", "cross_validation")


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=400))
def test_parse_never_crashes_on_arbitrary_text(text):
    try:
        parse_llm_json(text, "forensic")
    except (NoJsonFound, SchemaViolation):
        pass


# -- date and consensus rules ---------------------------------------------------------

def test_parse_single_date():
    assert parse_date("28/05/2022") == date(2022, 5, 28)


def test_parse_date_span_normalized():
    span = parse_date("28/05/2022 - 02/10/2022")
    assert span == DateSpan(date(2022, 5, 28), date(2022, 10, 2))
    reversed_span = parse_date("02/10/2022 - 28/05/2022")
    assert reversed_span == span


def test_parse_date_rejects_bad_calendar():
    with pytest.raises(BadDate):
        parse_date("31/02/2022")
    with pytest.raises(BadDate):
        parse_date("2022-05-28")


CONSENSUS_TABLE = [
    (0, ConsensusLabel.CONSENSUS),
    (15, ConsensusLabel.CONSENSUS),
    (29, ConsensusLabel.CONSENSUS),
    (30, ConsensusLabel.PARTIAL),
    (45, ConsensusLabel.PARTIAL),
    (92, ConsensusLabel.PARTIAL),
    (93, ConsensusLabel.NON_VERIFIABLE),
    (127, ConsensusLabel.NON_VERIFIABLE),
    (400, ConsensusLabel.NON_VERIFIABLE),
]


@pytest.mark.parametrize("days,expected", CONSENSUS_TABLE)
def test_consensus_rule_table(days, expected):
    from datetime import timedelta
    start = date(2022, 5, 28)
    assert classify_consensus(DateSpan(start, start + timedelta(days=days))) == expected


def test_consensus_regions_partition_nonnegative_days():
    from datetime import timedelta
    start = date(2020, 1, 1)
    for days in range(0, 120):
        label = classify_consensus(DateSpan(start, start + timedelta(days=days)))
        if days <= 29:
            assert label is ConsensusLabel.CONSENSUS
        elif days <= 92:
            assert label is ConsensusLabel.PARTIAL
        else:
            assert label is ConsensusLabel.NON_VERIFIABLE


# -- coordinates -------------------------------------------------------------------------

def test_parse_demo_coordinates_exactly():
    point = parse_coordinates("48.9781° N, 37.8017° E")
    assert point == GeoPoint(48.9781, 37.8017)


def test_parse_southern_western_hemispheres():
    assert parse_coordinates("33.5° S, 70.6° W") == GeoPoint(-33.5, -70.6)


def test_parse_signed_decimal():
    assert parse_coordinates("-33.5, -70.6") == GeoPoint(-33.5, -70.6)


def test_parse_out_of_range():
    with pytest.raises(BadCoordinates):
        parse_coordinates("91° N, 0° E")


@settings(max_examples=1000, deadline=None)
@given(st.floats(min_value=-90, max_value=90, allow_nan=False),
       st.floats(min_value=-180, max_value=180, allow_nan=False))
def test_coordinate_round_trip_property(lat, lon):
    point = GeoPoint(lat, lon)
    assert parse_coordinates(format_coordinates(point)) == point


# -- run_cross_validation -------------------------------------------------------------

def golden_llm():
    return StubLlmClient(responses={
        "cross_validation": GOLDEN_CROSSVAL_RESPONSE,
        "forensic": GOLDEN_FORENSIC_RESPONSE,
    })


def test_cross_validation_golden_with_override():
    result = run_cross_validation(buffer_with(), golden_llm(), sleep=lambda s: None)
    assert result.location_name == ("Lyman (formerly Krasnyi Lyman), "
                                    "Donetsk Oblast, Ukraine")
    assert result.coordinates == GeoPoint(48.9781, 37.8017)
    assert result.date_span == DateSpan(date(2022, 5, 28), date(2022, 10, 2))
    # 127-day span: the deterministic rule overrides the model's 'Partial'
    assert result.consensus is ConsensusLabel.NON_VERIFIABLE
    assert "overridden" in result.notes
    assert "Ukraine War" in result.tags


def test_cross_validation_empty_buffer_marked():
    empty = EvidenceBuffer("c", (), "")
    result = run_cross_validation(empty, golden_llm(), sleep=lambda s: None)
    assert "no external sources" in result.notes


def test_cross_validation_refusal_raises():
    client = StubLlmClient(responses={
        "default": {"text": "I'm sorry, I can't help with that."}
    })
    with pytest.raises(LlmRefusal):
        run_cross_validation(buffer_with(), client, sleep=lambda s: None)


def test_cross_validation_agreeing_label_not_overridden():
    response = {"json": {
        "location": {"location": "Somewhere", "coordinates": ""},
        "date": {"date": "01/06/2022 - 15/06/2022", "concensus": "Yes",
                 "notes": "narrow window"},
        "about": {"consensus": "c", "conflicts": ""},
        "tag": ["X"],
    }}
    client = StubLlmClient(responses={"cross_validation": response})
    result = run_cross_validation(buffer_with(), client, sleep=lambda s: None)
    assert result.consensus is ConsensusLabel.CONSENSUS
    assert "overridden" not in result.notes


class SequencedLlm:
    """Returns scripted texts one call at a time."""

    def __init__(self, texts):
        self.texts = list(texts)
        self.calls = 0

    def complete(self, system, user, images):
        text = self.texts[min(self.calls, len(self.texts) - 1)]
        self.calls += 1
        return {"text": text, "finish_reason": "stop",
                "content_filtered": False, "usage": {}}


def test_cross_validation_reasks_once_then_succeeds():
    good = json.dumps(GOLDEN_CROSSVAL_RESPONSE["json"])
    client = SequencedLlm(["not json at all", good])
    result = run_cross_validation(buffer_with(), client, sleep=lambda s: None)
    assert client.calls == 2
    assert result.location_name.startswith("Lyman")


def test_cross_validation_gives_up_after_reask():
    client = SequencedLlm(["still not json", "also not json"])
    with pytest.raises(NoJsonFound):
        run_cross_validation(buffer_with(), client, sleep=lambda s: None)
    assert client.calls == 2


# -- run_forensic_analysis ---------------------------------------------------------------

def test_forensic_golden():
    result = run_forensic_analysis(["aW1n"], None, golden_llm(), sleep=lambda s: None)
    assert "appears authentic" in result.authenticity
    assert result.metadata_validation["location"].startswith("The images show")
    assert result.synt_type.startswith("No evidence")


def test_forensic_missing_synt_type_triggers_reask():
    incomplete = json.dumps({
        "metadata-validation": {}, "authenticity": "a",
        "auth-evidence": "b", "other": "c",
    })
    complete = json.dumps(GOLDEN_FORENSIC_RESPONSE["json"])
    client = SequencedLlm([incomplete, complete])
    result = run_forensic_analysis(["aW1n"], None, client, sleep=lambda s: None)
    assert client.calls == 2
    assert "appears authentic" in result.authenticity


def test_forensic_missing_key_eventually_fails_with_name():
    incomplete = json.dumps({
        "metadata-validation": {}, "authenticity": "a",
        "auth-evidence": "b", "other": "c",
    })
    client = SequencedLlm([incomplete, incomplete])
    with pytest.raises(SchemaViolation) as exc_info:
        run_forensic_analysis(["aW1n"], None, client, sleep=lambda s: None)
    assert exc_info.value.missing_keys == ["synt-type"]


def test_forensic_requires_images():
    with pytest.raises(ValueError):
        run_forensic_analysis([], None, golden_llm())
