"""Pluggable backends: search, LLM, transcription, and raw HTTP fetching.

Real backends are configured through environment variables (which override
config-file values); stub backends read canned fixtures and count their
calls so tests can assert cache behavior. A process-wide offline guard
makes any real transport raise instead of touching the network.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

from .errors import AuthError, OfflineViolation, QuotaExceeded, TransportError

# -- offline guard -------------------------------------------------------------

_offline_lock = threading.Lock()
_offline_depth = 0


@contextmanager
def offline_mode(active: bool = True):
    """While active, every real transport raises OfflineViolation."""
    global _offline_depth
    if not active:
        yield
        return
    with _offline_lock:
        _offline_depth += 1
    try:
        yield
    finally:
        with _offline_lock:
            _offline_depth -= 1


def offline_active() -> bool:
    return _offline_depth > 0


def _require_online(what: str):
    if offline_active():
        raise OfflineViolation(f"{what} attempted while running offline")


# -- HTTP fetcher ---------------------------------------------------------------

class RequestsFetcher:
    """Streaming HTTP GET with a size cap and per-host politeness delay."""

    def __init__(self, politeness_s: float = 1.0, user_agent: str = "mmverify/0.1"):
        self.politeness_s = politeness_s
        self.user_agent = user_agent
        self._last_call: dict = {}
        self._lock = threading.Lock()

    def _be_polite(self, host: str):
        with self._lock:
            last = self._last_call.get(host, 0.0)
            wait = self.politeness_s - (time.monotonic() - last)
            self._last_call[host] = time.monotonic() + max(0.0, wait)
        if wait > 0:
            time.sleep(wait)

    def fetch(self, url: str, timeout_s: float, max_bytes: int):
        _require_online(f"HTTP fetch of {url}")
        import requests
        from urllib.parse import urlparse

        self._be_polite(urlparse(url).netloc)
        try:
            with requests.get(url, timeout=timeout_s, stream=True,
                              headers={"User-Agent": self.user_agent}) as resp:
                body = b""
                truncated = False
                for chunk in resp.iter_content(chunk_size=65536):
                    body += chunk
                    if len(body) >= max_bytes:
                        body = body[:max_bytes]
                        truncated = True
                        break
                return resp.status_code, body, truncated
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc


class StubFetcher:
    """Serves fixture bodies keyed by URL; everything else fails to fetch."""

    def __init__(self, pages: Optional[dict] = None):
        self.pages = dict(pages or {})  # url -> html text or bytes
        self.calls = 0

    def fetch(self, url: str, timeout_s: float, max_bytes: int):
        self.calls += 1
        if url not in self.pages:
            raise TransportError(f"stub has no page for {url}")
        body = self.pages[url]
        if isinstance(body, str):
            body = body.encode("utf-8")
        return 200, body[:max_bytes], len(body) > max_bytes


# -- search ----------------------------------------------------------------------

class RealSearchClient:
    """Thin JSON-over-HTTP search backend driver.

    Contract: GET {endpoint}?q=<terms>&phrase=<phrase>&k=<k> with a bearer
    key; the response is a JSON list of {link, title, snippet, date?}.
    """

    def __init__(self, endpoint: str, api_key: str = ""):
        if not endpoint:
            raise ValueError("search endpoint is not configured")
        self.endpoint = endpoint
        self.api_key = api_key

    def search(self, terms: list, phrase: Optional[str], k: int) -> list:
        _require_online(f"search against {self.endpoint}")
        import requests

        params = {"q": " ".join(terms), "k": str(k)}
        if phrase:
            params["phrase"] = phrase
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = requests.get(self.endpoint, params=params, headers=headers, timeout=30)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"search backend rejected credentials ({resp.status_code})")
        if resp.status_code == 429:
            raise QuotaExceeded("search quota exceeded")
        if resp.status_code != 200:
            raise TransportError(f"search backend returned {resp.status_code}")
        payload = resp.json()
        return payload.get("results", payload) if isinstance(payload, dict) else payload


class StubSearchClient:
    """Returns fixture results; can fail a scripted number of times first."""

    def __init__(self, results: Optional[list] = None, fail_first: int = 0,
                 failure=TransportError("stubbed transport failure")):
        self.results = list(results or [])
        self.fail_first = fail_first
        self.failure = failure
        self.calls = 0

    @classmethod
    def from_fixture(cls, path: Path) -> "StubSearchClient":
        return cls(json.loads(Path(path).read_text()))

    def search(self, terms: list, phrase: Optional[str], k: int) -> list:
        self.calls += 1
        if self.calls <= self.fail_first:
            raise self.failure
        return self.results[:k]


# -- LLM --------------------------------------------------------------------------

class RealLlmClient:
    """OpenAI-compatible chat-completions driver with image attachments."""

    def __init__(self, endpoint: str, api_key: str, model: str):
        if not endpoint or not model:
            raise ValueError("LLM endpoint/model are not configured")
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.model = model

    def complete(self, system: str, user: str, images: list) -> dict:
        _require_online(f"LLM call against {self.endpoint}")
        import requests

        content = [{"type": "text", "text": user}]
        for image_b64 in images:
            content.append({
                "type": "image_url",
                "image_url": {"url": f"data:image/jpeg;base64,{image_b64}"},
            })
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": content},
            ],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = requests.post(f"{self.endpoint}/chat/completions",
                                 json=payload, headers=headers, timeout=120)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"LLM backend rejected credentials ({resp.status_code})")
        if resp.status_code == 429:
            raise QuotaExceeded("LLM rate limit")
        if resp.status_code != 200:
            raise TransportError(f"LLM backend returned {resp.status_code}")
        data = resp.json()
        choice = data.get("choices", [{}])[0]
        finish = choice.get("finish_reason", "")
        return {
            "text": (choice.get("message") or {}).get("content", "") or "",
            "finish_reason": finish,
            "content_filtered": finish == "content_filter",
            "usage": data.get("usage", {}),
        }


def request_fingerprint(system: str, user: str, images: list) -> str:
    digest = hashlib.sha256()
    for part in (system, user, *images):
        digest.update(part.encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()[:16]


class StubLlmClient:
    """Maps request hashes to fixture responses and counts calls.

    Lookup order: `<fingerprint>.json` in the fixture directory, then a
    template-level fallback (cross_validation.json / forensic.json chosen
    by prompt prefix), then default.json. Fixture files hold either the
    raw response dict or {"json": ...} whose value is serialized as the
    response text.
    """

    def __init__(self, fixture_dir: Optional[Path] = None,
                 responses: Optional[dict] = None):
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.responses = dict(responses or {})  # name -> response dict
        self.calls = 0
        self.seen_fingerprints: list = []

    def _template_name(self, user: str) -> Optional[str]:
        from .verify import load_template
        for template_id in ("cross_validation", "forensic"):
            prefix = load_template(template_id).body.split("{{", 1)[0]
            if user.startswith(prefix):
                return template_id
        return None

    def _load(self, name: str) -> Optional[dict]:
        if name in self.responses:
            return self.responses[name]
        if self.fixture_dir is not None:
            path = self.fixture_dir / f"{name}.json"
            if path.exists():
                return json.loads(path.read_text())
        return None

    def complete(self, system: str, user: str, images: list) -> dict:
        self.calls += 1
        fingerprint = request_fingerprint(system, user, images)
        self.seen_fingerprints.append(fingerprint)

        raw = self._load(fingerprint)
        if raw is None:
            template = self._template_name(user)
            if template is not None:
                raw = self._load(template)
        if raw is None:
            raw = self._load("default")
        if raw is None:
            return {"text": "", "finish_reason": "stop",
                    "content_filtered": False, "usage": {}}
        if "json" in raw and "text" not in raw:
            raw = {**raw, "text": json.dumps(raw["json"], ensure_ascii=False)}
        return {
            "text": raw.get("text", ""),
            "finish_reason": raw.get("finish_reason", "stop"),
            "content_filtered": raw.get("content_filtered", False),
            "usage": raw.get("usage", {}),
        }


class FlakyLlmClient:
    """Wraps another LLM client, failing a scripted number of leading calls."""

    def __init__(self, inner, fail_first: int,
                 failure=QuotaExceeded("stubbed rate limit")):
        self.inner = inner
        self.fail_first = fail_first
        self.failure = failure
        self.calls = 0

    def complete(self, system: str, user: str, images: list) -> dict:
        self.calls += 1
        if self.calls <= self.fail_first:
            raise self.failure
        return self.inner.complete(system, user, images)


# -- transcription -----------------------------------------------------------------

class RealTranscriptionClient:
    """Posts PCM chunks to an HTTP transcription backend."""

    def __init__(self, endpoint: str, api_key: str = ""):
        if not endpoint:
            raise ValueError("transcription endpoint is not configured")
        self.endpoint = endpoint
        self.api_key = api_key

    def transcribe(self, audio: bytes, fmt: dict, language_hint: str):
        _require_online(f"transcription against {self.endpoint}")
        import requests

        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        data = {
            "sample_rate": str(fmt.get("sample_rate", 16000)),
            "encoding": fmt.get("encoding", "pcm_s16le"),
            "language": language_hint,
        }
        try:
            resp = requests.post(self.endpoint, data=data, headers=headers,
                                 files={"audio": ("chunk.pcm", audio)}, timeout=120)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"transcription backend rejected credentials ({resp.status_code})")
        if resp.status_code != 200:
            raise TransportError(f"transcription backend returned {resp.status_code}")
        payload = resp.json()
        return payload.get("text", ""), payload.get("language", language_hint)


class StubTranscriptionClient:
    """Deterministic canned transcription, keyed by chunk content hash."""

    def __init__(self, mapping: Optional[dict] = None, language: str = "ru",
                 fail_hashes: Optional[set] = None):
        self.mapping = dict(mapping or {})  # content hash prefix -> text
        self.language = language
        self.fail_hashes = set(fail_hashes or ())
        self.calls = 0
        self.requests: list = []  # (hash, language_hint) per call

    @staticmethod
    def content_key(audio: bytes) -> str:
        return hashlib.sha256(audio).hexdigest()[:12]

    def transcribe(self, audio: bytes, fmt: dict, language_hint: str):
        self.calls += 1
        key = self.content_key(audio)
        self.requests.append((key, language_hint))
        if key in self.fail_hashes:
            raise TransportError(f"stubbed failure for chunk {key}")
        text = self.mapping.get(key, f"[stub transcript {key}]")
        detected = self.language if language_hint == "auto" else language_hint
        return text, detected
