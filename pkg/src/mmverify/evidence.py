"""Evidence retrieval: keywords -> web search -> crawl -> local buffer.

Search and HTTP transports are injected so the whole module runs offline
against stubs; fetch failures never raise, they become documents whose
content is the exact failure marker the report format expects.
"""

from __future__ import annotations

import json
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from html.parser import HTMLParser
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence
from urllib.parse import urlparse

from .errors import NoKeywords, PersistFailure, QuotaExceeded, TransportError
from .model import FETCH_FAILURE_MARKER, SourceDocument

DEFAULT_K = 10
DEFAULT_TIMEOUT_S = 15.0
DEFAULT_MAX_BYTES = 2 * 1024 * 1024
MAX_KEYWORDS = 12
_TRAILING_SENTENCE_PUNCT = ",.;:!?"


def _stopwords() -> frozenset:
    text = resources.files("mmverify").joinpath("data/stopwords.txt").read_text()
    return frozenset(line.strip() for line in text.splitlines()
                     if line.strip() and not line.startswith("#"))

_STOPWORDS = None


def stopwords() -> frozenset:
    global _STOPWORDS
    if _STOPWORDS is None:
        _STOPWORDS = _stopwords()
    return _STOPWORDS


@dataclass(frozen=True)
class SearchQuery:
    keywords: tuple  # ordered, lowercased content words
    exact_phrase: Optional[str] = None  # source capitalization kept

    def __post_init__(self):
        if not self.keywords and not self.exact_phrase:
            raise ValueError("a query needs at least one keyword or a phrase")


@dataclass(frozen=True)
class RankedResult:
    """One search hit after exact-match promotion."""

    link: str
    title: str
    snippet: str
    date: str  # free text or "Not available"
    rank: int
    exact_match: bool


@dataclass(frozen=True)
class EvidenceBuffer:
    case_id: str
    documents: tuple  # of SourceDocument, sorted by rank
    fetched_at: str  # ISO timestamp

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "fetched_at": self.fetched_at,
            "documents": [d.to_dict() for d in self.documents],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvidenceBuffer":
        return cls(
            d["case_id"],
            tuple(SourceDocument.from_dict(x) for x in d["documents"]),
            d["fetched_at"],
        )


def _tokens(text: str) -> list:
    out = []
    for raw in text.split():
        ends_sentence = raw.rstrip()[-1:] in _TRAILING_SENTENCE_PUNCT
        word = raw.strip(string.punctuation + "’‘“”")
        if word:
            out.append((word, ends_sentence))
    return out


def extract_keywords(title: str, description: str) -> SearchQuery:
    """Turn title/description into a keyword query with an optional phrase.

    Capitalized multiword spans in the source text become phrase candidates
    (a span ends at sentence punctuation); the longest span is the exact
    phrase. Content words, title first and deduplicated, become keywords.
    """
    spans = []
    keywords = []
    seen = set()
    for text in (title, description):
        toks = _tokens(text)
        current = []
        for word, ends_sentence in toks:
            if word[0].isupper():
                current.append(word)
                if ends_sentence:
                    spans.append(current)
                    current = []
            else:
                if current:
                    spans.append(current)
                current = []
        if current:
            spans.append(current)
        for word, _ in toks:
            lower = word.lower()
            if lower in stopwords() or lower in seen:
                continue
            seen.add(lower)
            keywords.append(lower)

    phrases = [s for s in spans
               if len(s) >= 2 and not all(w.lower() in stopwords() for w in s)]
    exact_phrase = " ".join(max(phrases, key=len)) if phrases else None

    keywords = keywords[:MAX_KEYWORDS]
    if not keywords and not exact_phrase:
        raise NoKeywords("title and description reduce to nothing after stopword removal")
    return SearchQuery(tuple(keywords), exact_phrase)


def search(query: SearchQuery, k: int = DEFAULT_K, client=None,
           attempts: int = 3, backoff_s: float = 0.5, sleep=None) -> list[RankedResult]:
    """Fetch up to k results and promote exact-phrase matches to the front.

    Promotion is stable within both groups; ranks are rewritten 1..n after
    it. Transport/quota errors are retried with exponential backoff; when
    all attempts fail the caller proceeds with zero results.
    """
    if client is None:
        raise ValueError("a search client is required")
    if sleep is None:
        import time
        sleep = time.sleep

    raw = []
    for attempt in range(attempts):
        try:
            raw = client.search(list(query.keywords), query.exact_phrase, k)
            break
        except (QuotaExceeded, TransportError):
            if attempt == attempts - 1:
                return []
            sleep(backoff_s * (2 ** attempt))

    phrase = (query.exact_phrase or "").lower()

    def is_exact(r) -> bool:
        if not phrase:
            return False
        return phrase in r.get("title", "").lower() or phrase in r.get("snippet", "").lower()

    normalized = [dict(r) for r in raw[:k]]
    exact = [r for r in normalized if is_exact(r)]
    rest = [r for r in normalized if not is_exact(r)]
    ranked = []
    for i, r in enumerate(exact + rest):
        ranked.append(RankedResult(
            link=r.get("link", ""),
            title=r.get("title", ""),
            snippet=r.get("snippet", ""),
            date=r.get("date") or "Not available",
            rank=i + 1,
            exact_match=i < len(exact),
        ))
    return ranked


# -- readable-text extraction --------------------------------------------------

_SKIP_TAGS = {"script", "style", "noscript", "template", "svg", "head",
              "nav", "header", "footer", "aside"}
_BLOCK_TAGS = {"p", "div", "article", "section", "li", "h1", "h2", "h3", "h4",
               "h5", "h6", "td", "blockquote", "pre", "tr", "ul", "ol", "main",
               "body", "br", "figcaption"}


class _BlockCollector(HTMLParser):
    """Collects text per block with the fraction of it that sits in links."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.blocks = []  # (text, link_chars, total_chars)
        self._text = []
        self._link_chars = 0
        self._skip_depth = 0
        self._link_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            self._skip_depth += 1
        elif tag == "a":
            self._link_depth += 1
        elif tag in _BLOCK_TAGS:
            self._flush()

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)
        elif tag == "a":
            self._link_depth = max(0, self._link_depth - 1)
        elif tag in _BLOCK_TAGS:
            self._flush()

    def handle_data(self, data):
        if self._skip_depth:
            return
        self._text.append(data)
        if self._link_depth:
            self._link_chars += len(data.strip())

    def _flush(self):
        text = re.sub(r"\s+", " ", "".join(self._text)).strip()
        if text:
            self.blocks.append((text, self._link_chars, len(text)))
        self._text = []
        self._link_chars = 0

    def close(self):
        self._flush()
        super().close()


def extract_readable_text(html: str, min_block_chars: int = 25,
                          max_link_density: float = 0.5) -> str:
    """Strip tags and drop boilerplate blocks by text-density.

    Blocks that are short or dominated by link text (menus, footers) are
    discarded; if nothing survives the filter, all text is returned so a
    page is never silently emptied.
    """
    parser = _BlockCollector()
    try:
        parser.feed(html)
        parser.close()
    except Exception:
        return re.sub(r"<[^>]+>", " ", html)
    kept = []
    for text, link_chars, total in parser.blocks:
        density = link_chars / total if total else 1.0
        if total >= min_block_chars and density < max_link_density:
            kept.append(text)
    if kept:
        return "\n".join(kept)
    return "\n".join(text for text, _, _ in parser.blocks)


def fetch_content(
    link: str,
    fetcher=None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    max_bytes: int = DEFAULT_MAX_BYTES,
    title: str = "",
    date: str = "Not available",
    rank: int = 1,
    exact_match: bool = False,
) -> SourceDocument:
    """Crawl one link into a SourceDocument; total, never raises.

    Any failure (bad URL, transport error, non-2xx status) yields content
    equal to the canonical failure marker. Oversized responses are cut at
    max_bytes and annotated.
    """
    parsed = urlparse(link)
    failed = SourceDocument(link, date, title, FETCH_FAILURE_MARKER, rank, exact_match)
    if parsed.scheme not in ("http", "https") or not parsed.netloc:
        return failed
    if fetcher is None:
        from .clients import RequestsFetcher
        fetcher = RequestsFetcher()
    try:
        status, body, truncated = fetcher.fetch(link, timeout_s, max_bytes)
    except Exception:
        return failed
    if not 200 <= status < 300:
        return failed
    text = extract_readable_text(body.decode("utf-8", errors="replace"))
    if truncated:
        text += "\n[content truncated at size cap]"
    return SourceDocument(link, date, title, text, rank, exact_match)


def build_evidence_buffer(
    case_id: str,
    results: Sequence[RankedResult],
    fetcher,
    case_dir: Path,
    media_link: str = "",
    k: int = DEFAULT_K,
    refresh: bool = False,
    max_in_flight: int = 4,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    max_bytes: int = DEFAULT_MAX_BYTES,
) -> EvidenceBuffer:
    """Fetch all ranked results into `<case_dir>/evidence.json`.

    A present media_link is prepended as the first document (it is the
    case's own source, flagged exact_match) and the list is capped at k.
    Re-runs reuse the persisted buffer unless refresh is set.
    """
    case_dir = Path(case_dir)
    buffer_path = case_dir / "evidence.json"
    if buffer_path.exists() and not refresh:
        return EvidenceBuffer.from_dict(json.loads(buffer_path.read_text()))

    entries = list(results)
    if media_link:
        entries = [r for r in entries if r.link != media_link]
        entries.insert(0, RankedResult(media_link, "(case media link)", "",
                                       "Not available", 1, True))
    entries = entries[:k]
    entries = [replace(r, rank=i + 1) for i, r in enumerate(entries)]

    def fetch_one(r: RankedResult) -> SourceDocument:
        return fetch_content(r.link, fetcher, timeout_s, max_bytes,
                             title=r.title, date=r.date, rank=r.rank,
                             exact_match=r.exact_match)

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        documents = list(pool.map(fetch_one, entries))
    documents.sort(key=lambda d: d.rank)

    buffer = EvidenceBuffer(
        case_id=case_id,
        documents=tuple(documents),
        fetched_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    try:
        case_dir.mkdir(parents=True, exist_ok=True)
        buffer_path.write_text(json.dumps(buffer.to_dict(), indent=2, ensure_ascii=False))
    except OSError as exc:
        raise PersistFailure(f"cannot write {buffer_path}: {exc}") from exc
    return buffer
