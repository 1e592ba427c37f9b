"""Cross-validation and forensic analysis through a pluggable LLM client.

The prompt bodies are bundled verbatim template files; the engine renders
them, parses the JSON the model returns, and enforces the deterministic
rules the model is merely asked to follow: the consensus label is always
re-derived from the parsed date span and overrides the model's claim.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass
from datetime import date
from importlib import resources
from typing import Optional, Sequence, Union

from .errors import (
    BadCoordinates,
    BadDate,
    ExhaustedRetries,
    LlmRefusal,
    MissingBinding,
    NoJsonFound,
    QuotaExceeded,
    SchemaViolation,
    TransportError,
)
from .evidence import EvidenceBuffer
from .model import ConsensusLabel, CrossValidation, DateSpan, ForensicAnalysis, GeoPoint

TEMPLATE_IDS = ("cross_validation", "forensic")
_TEMPLATE_FILES = {"cross_validation": "prompt1.txt", "forensic": "prompt2.txt"}
_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")

# day thresholds for the calendar-month language of the consensus rule
CONSENSUS_MAX_DAYS = 29  # "less than 1 month"
PARTIAL_MAX_DAYS = 92  # "from one to three months"

REQUIRED_KEYS = {
    "cross_validation": ("location", "date", "about", "tag"),
    "forensic": ("metadata-validation", "authenticity", "auth-evidence",
                 "synt-type", "other"),
}

DEFAULT_SYSTEM_TEXT = (
    "You are a careful multimedia news-verification assistant. "
    "Answer strictly in the JSON format the task describes."
)

REASK_SUFFIX = "\n\nReturn only valid JSON."


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str


@dataclass(frozen=True)
class LlmResponse:
    raw_text: str
    parsed_json: Optional[dict] = None
    refusal: bool = False
    usage: dict = None  # token counts as reported by the client

    def __post_init__(self):
        if self.refusal and self.parsed_json is not None:
            raise ValueError("a refusal carries no parsed JSON")
        if self.usage is None:
            object.__setattr__(self, "usage", {})


def load_template(template_id: str) -> PromptTemplate:
    if template_id not in TEMPLATE_IDS:
        raise ValueError(f"unknown template {template_id!r}")
    body = (
        resources.files("mmverify")
        .joinpath(f"templates/{_TEMPLATE_FILES[template_id]}")
        .read_text(encoding="utf-8")
    )
    return PromptTemplate(template_id, body)


def render_prompt(template_id: str, bindings: dict) -> str:
    """Fill a bundled template; an unresolved placeholder is an error."""
    template = load_template(template_id)
    missing = [name for name in _PLACEHOLDER.findall(template.body)
               if name not in bindings]
    if missing:
        raise MissingBinding(f"unbound placeholders in {template_id}: {missing}")
    return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), template.body)


def _refusal_phrases() -> tuple:
    text = resources.files("mmverify").joinpath("data/refusal_phrases.txt").read_text()
    return tuple(line.strip().lower() for line in text.splitlines()
                 if line.strip() and not line.startswith("#"))

_REFUSAL_PHRASES = None


def refusal_phrases() -> tuple:
    global _REFUSAL_PHRASES
    if _REFUSAL_PHRASES is None:
        _REFUSAL_PHRASES = _refusal_phrases()
    return _REFUSAL_PHRASES


def looks_like_refusal(text: str) -> bool:
    lowered = text.lower()
    return any(phrase in lowered for phrase in refusal_phrases())


def call_llm(
    prompt: str,
    images: Sequence[str],
    client,
    attempts: int = 3,
    backoff_s: float = 0.5,
    sleep=time.sleep,
    system_text: str = DEFAULT_SYSTEM_TEXT,
) -> LlmResponse:
    """Send one prompt (plus Base64 image attachments) with retries.

    Transport and rate-limit errors are retried with exponential backoff;
    auth errors are fatal immediately. A refusal is detected from the
    API's content-filter signal or the bundled phrase list.
    """
    last_exc = None
    for attempt in range(attempts):
        try:
            reply = client.complete(system_text, prompt, list(images))
            break
        except (TransportError, QuotaExceeded) as exc:
            last_exc = exc
            if attempt == attempts - 1:
                raise ExhaustedRetries(f"llm call failed after {attempts} attempts: {exc}")
            sleep(backoff_s * (2 ** attempt))
    else:  # pragma: no cover - loop always breaks or raises
        raise ExhaustedRetries(str(last_exc))

    refused = bool(reply.get("content_filtered")) or looks_like_refusal(reply.get("text", ""))
    return LlmResponse(
        raw_text=reply.get("text", ""),
        refusal=refused,
        usage=dict(reply.get("usage", {})),
    )


# -- response parsing ----------------------------------------------------------

def _strip_code_fences(text: str) -> str:
    fenced = re.findall(r"```(?:json)?\s*(.*?)```", text, flags=re.DOTALL)
    return fenced[0] if fenced else text


def _balanced_objects(text: str):
    """Yield top-level {...} slices, respecting strings and escapes."""
    depth = 0
    start = None
    in_string = False
    escape = False
    for i, ch in enumerate(text):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            if depth > 0:
                in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    yield text[start:i + 1]


def parse_llm_json(raw_text: str, expected_schema: str) -> dict:
    """Extract and validate the first parseable JSON object in a response.

    Code fences and surrounding prose are tolerated. Raises NoJsonFound
    when nothing parses, SchemaViolation (naming the keys) when required
    keys for the template are absent.
    """
    if expected_schema not in REQUIRED_KEYS:
        raise ValueError(f"unknown schema {expected_schema!r}")
    text = _strip_code_fences(raw_text or "")
    parsed = None
    for candidate in _balanced_objects(text):
        try:
            value = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            parsed = value
            break
    if parsed is None:
        raise NoJsonFound("no balanced JSON object in response")

    missing = [key for key in REQUIRED_KEYS[expected_schema] if key not in parsed]
    if missing:
        raise SchemaViolation(missing)
    return parsed


_DATE_RE = re.compile(r"^\s*(\d{1,2})/(\d{1,2})/(\d{4})\s*$")
_SPAN_SEP = re.compile(r"\s*(?:-|–|to)\s*")


def parse_date(text: str) -> Union[date, DateSpan]:
    """Parse 'dd/mm/yyyy' (a date) or 'dd/mm/yyyy - dd/mm/yyyy' (a span)."""
    if not isinstance(text, str):
        raise BadDate(f"expected date text, got {type(text).__name__}")
    parts = _SPAN_SEP.split(text.strip())
    if len(parts) == 1:
        return _parse_single_date(parts[0])
    if len(parts) == 2:
        a = _parse_single_date(parts[0])
        b = _parse_single_date(parts[1])
        return DateSpan(min(a, b), max(a, b))
    raise BadDate(f"unrecognized date text {text!r}")


def _parse_single_date(text: str) -> date:
    match = _DATE_RE.match(text)
    if not match:
        raise BadDate(f"{text!r} does not match dd/mm/yyyy")
    day, month, year = (int(g) for g in match.groups())
    try:
        return date(year, month, day)
    except ValueError as exc:
        raise BadDate(f"{text!r}: {exc}") from exc


def classify_consensus(span: DateSpan) -> ConsensusLabel:
    """Deterministic label from the span width in days: <30 / 30..92 / >92."""
    if span.days <= CONSENSUS_MAX_DAYS:
        return ConsensusLabel.CONSENSUS
    if span.days <= PARTIAL_MAX_DAYS:
        return ConsensusLabel.PARTIAL
    return ConsensusLabel.NON_VERIFIABLE


_COORD_NUMBER = r"[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?"
_HEMI_RE = re.compile(
    rf"^\s*({_COORD_NUMBER})\s*°?\s*([NSns])\s*,\s*({_COORD_NUMBER})\s*°?\s*([EWew])\s*$"
)
_SIGNED_NUMBER = r"[+-]?[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?"
_SIGNED_RE = re.compile(rf"^\s*({_SIGNED_NUMBER})\s*°?\s*,\s*({_SIGNED_NUMBER})\s*°?\s*$")


def parse_coordinates(text: str) -> GeoPoint:
    """Parse hemisphere notation ('48.9781° N, 37.8017° E') or signed decimal."""
    if not isinstance(text, str):
        raise BadCoordinates(f"expected coordinate text, got {type(text).__name__}")
    match = _HEMI_RE.match(text)
    if match:
        lat = float(match.group(1)) * (1 if match.group(2).upper() == "N" else -1)
        lon = float(match.group(3)) * (1 if match.group(4).upper() == "E" else -1)
    else:
        match = _SIGNED_RE.match(text)
        if not match:
            raise BadCoordinates(f"unrecognized coordinate text {text!r}")
        lat, lon = float(match.group(1)), float(match.group(2))
    try:
        return GeoPoint(lat, lon)
    except ValueError as exc:
        raise BadCoordinates(str(exc)) from exc


def format_coordinates(point: GeoPoint) -> str:
    """Hemisphere notation; parse_coordinates(format_coordinates(p)) == p."""
    ns = "N" if point.lat >= 0 else "S"
    ew = "E" if point.lon >= 0 else "W"
    return f"{abs(point.lat)!r}° {ns}, {abs(point.lon)!r}° {ew}"


# -- orchestration -------------------------------------------------------------

def _ask_and_parse(prompt: str, images: Sequence[str], client, schema: str,
                   sleep, attempts: int, backoff_s: float) -> dict:
    """One call plus at most one 'Return only valid JSON' re-ask."""
    response = call_llm(prompt, images, client, attempts=attempts,
                        backoff_s=backoff_s, sleep=sleep)
    if response.refusal:
        raise LlmRefusal(response.raw_text[:200])
    try:
        return parse_llm_json(response.raw_text, schema)
    except (NoJsonFound, SchemaViolation):
        retry = call_llm(prompt + REASK_SUFFIX, images, client,
                         attempts=attempts, backoff_s=backoff_s, sleep=sleep)
        if retry.refusal:
            raise LlmRefusal(retry.raw_text[:200])
        return parse_llm_json(retry.raw_text, schema)


def sources_payload(buffer: EvidenceBuffer) -> str:
    docs = [{"link": d.link, "date": d.date, "title": d.title, "content": d.content}
            for d in buffer.documents]
    return json.dumps(docs, indent=1, ensure_ascii=False)


def run_cross_validation(
    buffer: EvidenceBuffer,
    client,
    sleep=time.sleep,
    attempts: int = 3,
    backoff_s: float = 0.5,
) -> CrossValidation:
    """Render the source-comparison prompt and rule-check the model's answer.

    The consensus label is re-derived from the parsed date span; when the
    model's own label disagrees, the derived one wins and the override is
    recorded in notes. Refusals raise LlmRefusal; unparseable responses
    (after one re-ask) propagate their parse error.
    """
    prompt = render_prompt("cross_validation", {"sources": sources_payload(buffer)})
    parsed = _ask_and_parse(prompt, [], client, "cross_validation",
                            sleep, attempts, backoff_s)
    notes_extra = []
    if not buffer.documents:
        notes_extra.append("no external sources")

    loc = parsed.get("location")
    if isinstance(loc, dict):
        location_name = str(loc.get("location", ""))
        coord_text = loc.get("coordinates")
    else:
        location_name = str(loc or "")
        coord_text = None
    coordinates = None
    if coord_text:
        try:
            coordinates = parse_coordinates(str(coord_text))
        except BadCoordinates:
            notes_extra.append(f"coordinates not parseable: {coord_text!r}")

    date_block = parsed.get("date")
    if not isinstance(date_block, dict):
        date_block = {"date": date_block}
    date_span = None
    date_text = date_block.get("date")
    if date_text:
        try:
            parsed_date = parse_date(str(date_text))
            date_span = (parsed_date if isinstance(parsed_date, DateSpan)
                         else DateSpan(parsed_date, parsed_date))
        except BadDate:
            notes_extra.append(f"date not parseable: {date_text!r}")

    claimed = ConsensusLabel.from_text(
        str(date_block.get("concensus") or date_block.get("consensus") or "")
    )
    if date_span is not None:
        consensus = classify_consensus(date_span)
        if claimed is not None and claimed != consensus:
            notes_extra.append(
                f"consensus overridden: model reported {claimed.value!r} but the "
                f"{date_span.days}-day span classifies as {consensus.value!r}"
            )
    else:
        consensus = claimed or ConsensusLabel.NON_VERIFIABLE

    about = parsed.get("about")
    if isinstance(about, dict):
        consensus_about = str(about.get("consensus", ""))
        conflicts = str(about.get("conflicts", ""))
    else:
        consensus_about, conflicts = str(about or ""), ""

    tags = parsed.get("tag")
    if isinstance(tags, str):
        tags = [t.strip() for t in tags.split(",") if t.strip()]
    elif not isinstance(tags, list):
        tags = []

    notes = str(date_block.get("notes", "") or "")
    if notes_extra:
        notes = "; ".join(filter(None, [notes] + notes_extra))

    return CrossValidation(
        location_name=location_name,
        coordinates=coordinates,
        date_span=date_span,
        consensus=consensus,
        notes=notes,
        consensus_about=consensus_about,
        conflicts=conflicts,
        tags=tuple(str(t) for t in tags),
    )


def run_forensic_analysis(
    images: Sequence[str],
    crossval: Optional[CrossValidation],
    client,
    sleep=time.sleep,
    attempts: int = 3,
    backoff_s: float = 0.5,
) -> ForensicAnalysis:
    """Check the selected keyframes against the cross-validated metadata."""
    if not images:
        raise ValueError("forensic analysis requires at least one image")
    metadata = crossval.to_dict() if crossval is not None else {}
    prompt = render_prompt("forensic", {
        "metadata": json.dumps(metadata, indent=1, ensure_ascii=False),
        "images": len(images),
    })
    parsed = _ask_and_parse(prompt, images, client, "forensic",
                            sleep, attempts, backoff_s)

    validation = parsed.get("metadata-validation")
    if not isinstance(validation, dict):
        validation = {"location": str(validation or "")}

    def text_of(key: str) -> str:
        value = parsed.get(key, "")
        return value if isinstance(value, str) else json.dumps(value, ensure_ascii=False)

    return ForensicAnalysis(
        metadata_validation=validation,
        authenticity=text_of("authenticity"),
        auth_evidence=text_of("auth-evidence"),
        synt_type=text_of("synt-type"),
        other=text_of("other"),
    )
