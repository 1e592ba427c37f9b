"""Audio extraction, 30-second chunking, and transcription orchestration."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

from .errors import AuthError
from .media import AudioStream, get_decoder
from .model import AudioChunk, MediaAsset, Transcript

DEFAULT_CHUNK_SECONDS = 30.0
DEFAULT_MIN_CHUNK_SECONDS = 1.0


def _known_language_tags() -> frozenset:
    text = resources.files("mmverify").joinpath("data/language_tags.txt").read_text()
    return frozenset(line.strip() for line in text.splitlines()
                     if line.strip() and not line.startswith("#"))

_KNOWN_TAGS = None


def known_language_tags() -> frozenset:
    global _KNOWN_TAGS
    if _KNOWN_TAGS is None:
        _KNOWN_TAGS = _known_language_tags()
    return _KNOWN_TAGS


@dataclass(frozen=True)
class TranscriptionRequest:
    """One chunk plus the language hint forwarded to the backend."""

    chunk: AudioChunk
    language_hint: str = "auto"

    def __post_init__(self):
        if self.language_hint != "auto" and self.language_hint not in known_language_tags():
            raise ValueError(f"unknown language hint {self.language_hint!r}")


def extract_audio(asset: MediaAsset, decoder=None) -> Optional[AudioStream]:
    """Decode an asset's audio track as 16 kHz mono PCM.

    Returns None when the asset has no audio track (transcription is then
    skipped). Raises DecodeFailure when the track exists but cannot be
    read; the pipeline flags only that asset for human review.
    """
    if asset.kind != "video":
        raise ValueError(f"audio extraction applies to videos, not {asset.kind}")
    decoder = decoder or get_decoder()
    stream = decoder.extract_audio(asset.path)
    if stream is None:
        return None
    return AudioStream(asset.asset_id, stream.samples, stream.sample_rate)


def chunk_audio(
    stream: AudioStream,
    chunk_seconds: float = DEFAULT_CHUNK_SECONDS,
    min_chunk_seconds: float = DEFAULT_MIN_CHUNK_SECONDS,
) -> list[AudioChunk]:
    """Cut the stream into consecutive fixed-length chunks.

    Every chunk is exactly chunk_seconds long except the last; a final
    fragment shorter than min_chunk_seconds is dropped outright (it holds
    no transcribable speech and would waste an API call).
    """
    sr = stream.sample_rate
    chunk_len = round(chunk_seconds * sr)
    min_len = round(min_chunk_seconds * sr)
    total = len(stream.samples)

    chunks = []
    start = 0
    while start < total:
        end = min(total, start + chunk_len)
        if end - start < chunk_len and end - start < min_len:
            break  # dropped tail fragment
        chunks.append(
            AudioChunk(
                asset_id=stream.asset_id,
                index=len(chunks),
                start_s=start / sr,
                end_s=end / sr,
                samples=stream.samples[start:end].tobytes(),
                sample_rate=sr,
            )
        )
        start = end
    return chunks


def transcribe_case(
    chunks: Sequence[AudioChunk],
    client,
    language_hint: str = "auto",
    max_in_flight: int = 4,
) -> list[Transcript]:
    """Transcribe all chunks and assemble per-asset transcripts.

    Chunk failures become empty-text segments with an error note and never
    abort the case. AuthError is fatal for transcription as a whole and
    propagates so the pipeline can mark the case.
    """
    requests = [TranscriptionRequest(chunk, language_hint) for chunk in chunks]

    def run(req: TranscriptionRequest):
        text, detected = client.transcribe(
            req.chunk.samples,
            {"sample_rate": req.chunk.sample_rate, "encoding": "pcm_s16le", "channels": 1},
            req.language_hint,
        )
        return text, detected

    results = {}
    errors = {}
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        futures = {pool.submit(run, req): i for i, req in enumerate(requests)}
        for future, i in futures.items():
            try:
                results[i] = future.result()
            except AuthError:
                raise
            except Exception as exc:  # recorded per chunk, never fatal
                errors[i] = f"chunk {chunks[i].index} failed: {exc}"

    by_asset: dict = {}
    for i, chunk in enumerate(chunks):
        by_asset.setdefault(chunk.asset_id, []).append(i)

    transcripts = []
    for asset_id, indices in by_asset.items():
        indices.sort(key=lambda i: chunks[i].index)
        segments = []
        notes = []
        detected_language = None
        for i in indices:
            chunk = chunks[i]
            if i in results:
                text, detected = results[i]
                if detected_language is None and detected:
                    detected_language = detected
                segments.append((chunk.start_s, chunk.end_s, text))
            else:
                segments.append((chunk.start_s, chunk.end_s, ""))
                notes.append(errors[i])
        language = language_hint if language_hint != "auto" else (detected_language or "auto")
        transcripts.append(
            Transcript(asset_id, language, tuple(segments), tuple(notes))
        )
    return transcripts
