"""Domain types shared by every pipeline stage.

All values are immutable after construction and safe to share across
concurrent tasks. Each type serializes to a stable JSON shape via
``to_dict``/``from_dict``; those shapes are what the per-stage cache files
and the final report are made of (see docs/report-schema.md).
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyCase, EmptyMetadata, UnsupportedMedia

SUPPORTED_EXTENSIONS = {".mp4", ".jpg", ".jpeg", ".png"}
VIDEO_EXTENSIONS = {".mp4"}


@dataclass(frozen=True)
class CaseMetadata:
    """The free-text metadata block that accompanies a case.

    Only title, description and media_link feed the pipeline; the other
    fields are carried through for the report but are too inconsistent to
    rely on.
    """

    location_hint: str = ""
    violence_level: str = ""
    title: str = ""
    media_link: str = ""
    description: str = ""
    category: str = ""

    def can_retrieve(self) -> bool:
        """At least one of title/description must be non-empty for retrieval."""
        return bool(self.title.strip() or self.description.strip())

    def to_dict(self) -> dict:
        return {
            "location": self.location_hint,
            "violence level": self.violence_level,
            "title": self.title,
            "media link": self.media_link,
            "description": self.description,
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseMetadata":
        return cls(
            location_hint=d.get("location", ""),
            violence_level=d.get("violence level", ""),
            title=d.get("title", ""),
            media_link=d.get("media link", ""),
            description=d.get("description", ""),
            category=d.get("category", ""),
        )


@dataclass(frozen=True)
class MediaAsset:
    """One media file of a case: an mp4 video or a still image.

    duration_s is filled in once a video has been probed; a video that
    cannot be probed keeps None and surfaces as a DecodeFailure later.
    """

    asset_id: str
    kind: str  # "video" | "image"
    path: str
    duration_s: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("video", "image"):
            raise ValueError(f"unknown media kind {self.kind!r}")
        if self.kind == "image" and self.duration_s is not None:
            raise ValueError("images carry no duration")
        if self.kind == "video" and self.duration_s is not None and self.duration_s <= 0:
            raise ValueError("video duration must be positive")

    def to_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "kind": self.kind,
            "path": self.path,
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MediaAsset":
        return cls(d["asset_id"], d["kind"], d["path"], d.get("duration_s"))


@dataclass(frozen=True)
class FrameRef:
    """A frame within an asset, by original frame index and timestamp."""

    asset_id: str
    frame_index: int
    timestamp_s: float

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        if self.timestamp_s < 0:
            raise ValueError("timestamp_s must be >= 0")

    def to_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "frame_index": self.frame_index,
            "timestamp_s": self.timestamp_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameRef":
        return cls(d["asset_id"], d["frame_index"], d["timestamp_s"])


@dataclass(frozen=True)
class Shot:
    """A contiguous run of sampled frame positions, inclusive on both ends."""

    asset_id: str
    start_frame: int
    end_frame: int

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise ValueError("start_frame must be <= end_frame")

    def __len__(self) -> int:
        return self.end_frame - self.start_frame + 1

    def to_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Shot":
        return cls(d["asset_id"], d["start_frame"], d["end_frame"])


@dataclass(frozen=True)
class Embedding:
    """A fixed-length feature vector for one frame."""

    vector: tuple
    dim: int
    extractor_id: str

    def __post_init__(self):
        if self.dim != len(self.vector):
            raise ValueError("dim must equal len(vector)")
        if not all(math.isfinite(v) for v in self.vector):
            raise ValueError("embedding contains non-finite values")

    @classmethod
    def of(cls, vector: np.ndarray, extractor_id: str) -> "Embedding":
        arr = np.asarray(vector, dtype=np.float64).ravel()
        return cls(tuple(float(v) for v in arr), int(arr.size), extractor_id)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vector, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"vector": list(self.vector), "dim": self.dim, "extractor_id": self.extractor_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Embedding":
        return cls(tuple(float(v) for v in d["vector"]), d["dim"], d["extractor_id"])


def embeddings_matrix(embeddings: Sequence[Embedding]) -> np.ndarray:
    """Stack embeddings into an (n, dim) float64 matrix.

    Rejects mixed dims or mixed extractors: one clustering run must not
    compare vectors from different feature spaces.
    """
    if not embeddings:
        raise ValueError("no embeddings to stack")
    dim = embeddings[0].dim
    extractor = embeddings[0].extractor_id
    for e in embeddings:
        if e.dim != dim or e.extractor_id != extractor:
            raise DimensionMismatch(
                f"cannot mix embeddings ({e.dim}, {e.extractor_id!r}) with "
                f"({dim}, {extractor!r}) in one run"
            )
    return np.stack([e.as_array() for e in embeddings])


@dataclass(frozen=True)
class Keyframe:
    """A representative frame: nearest to its cluster centroid."""

    frame: FrameRef
    shot: Shot
    cluster_id: int
    distance_to_centroid: float

    def __post_init__(self):
        if self.distance_to_centroid < 0:
            raise ValueError("distance_to_centroid must be >= 0")

    def to_dict(self) -> dict:
        return {
            "asset_id": self.frame.asset_id,
            "frame_index": self.frame.frame_index,
            "timestamp_s": self.frame.timestamp_s,
            "shot": [self.shot.start_frame, self.shot.end_frame],
            "cluster_id": self.cluster_id,
            "distance_to_centroid": self.distance_to_centroid,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Keyframe":
        frame = FrameRef(d["asset_id"], d["frame_index"], d["timestamp_s"])
        shot = Shot(d["asset_id"], d["shot"][0], d["shot"][1])
        return cls(frame, shot, d["cluster_id"], d["distance_to_centroid"])


@dataclass(frozen=True)
class AudioChunk:
    """Up to 30 seconds of 16-bit PCM cut from an asset's audio track."""

    asset_id: str
    index: int
    start_s: float
    end_s: float
    samples: bytes = b""  # 16-bit little-endian PCM payload
    sample_rate: int = 16000

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("index must be >= 0")
        if self.end_s < self.start_s:
            raise ValueError("end_s must be >= start_s")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def to_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "index": self.index,
            "start_s": self.start_s,
            "end_s": self.end_s,
            "sample_rate": self.sample_rate,
            "samples_b64": base64.b64encode(self.samples).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AudioChunk":
        return cls(
            d["asset_id"],
            d["index"],
            d["start_s"],
            d["end_s"],
            base64.b64decode(d["samples_b64"]),
            d["sample_rate"],
        )


@dataclass(frozen=True)
class Transcript:
    """Per-asset transcription, one segment per transcribed chunk."""

    asset_id: str
    language: str  # BCP-47 tag or "auto"
    segments: tuple  # of (start_s, end_s, text)
    notes: tuple = ()  # per-chunk error notes, empty when all chunks succeeded

    def to_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "language": self.language,
            "segments": [list(s) for s in self.segments],
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transcript":
        segments = tuple((s[0], s[1], s[2]) for s in d["segments"])
        return cls(d["asset_id"], d["language"], segments, tuple(d.get("notes", ())))


FETCH_FAILURE_MARKER = "Failed to fetch the page."


@dataclass(frozen=True)
class SourceDocument:
    """One crawled web source; fetch failures are encoded in content."""

    link: str
    date: str  # free text or "Not available"
    title: str
    content: str  # fetched text, or exactly FETCH_FAILURE_MARKER
    rank: int
    exact_match: bool = False

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "date": self.date,
            "title": self.title,
            "content": self.content,
            "rank": self.rank,
            "exact_match": self.exact_match,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceDocument":
        return cls(
            d["link"], d["date"], d["title"], d["content"], d["rank"],
            d.get("exact_match", False),
        )


@dataclass(frozen=True)
class DateSpan:
    """Earliest/latest reported occurrence of an event."""

    earliest: date
    latest: date

    def __post_init__(self):
        if self.earliest > self.latest:
            raise ValueError("earliest must be <= latest")

    @property
    def days(self) -> int:
        return (self.latest - self.earliest).days

    def to_dict(self) -> dict:
        return {"earliest": self.earliest.isoformat(), "latest": self.latest.isoformat()}

    @classmethod
    def from_dict(cls, d: dict) -> "DateSpan":
        return cls(date.fromisoformat(d["earliest"]), date.fromisoformat(d["latest"]))


class ConsensusLabel(Enum):
    """Agreement level of the reported event dates across sources."""

    CONSENSUS = "Consensus"
    PARTIAL = "Partial"
    NON_VERIFIABLE = "Non-verifiable"

    @classmethod
    def from_text(cls, text: str) -> Optional["ConsensusLabel"]:
        """Map LLM-reported labels (including 'Yes') to the enum; None if alien."""
        norm = text.strip().lower().replace("_", "-").replace(" ", "-")
        if norm in ("yes", "consensus"):
            return cls.CONSENSUS
        if norm == "partial":
            return cls.PARTIAL
        if norm in ("non-verifiable", "nonverifiable", "no"):
            return cls.NON_VERIFIABLE
        return None


@dataclass(frozen=True)
class GeoPoint:
    """Signed decimal degrees; south and west are negative."""

    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of [-180, 180]")

    def to_dict(self) -> dict:
        return {"lat": self.lat, "lon": self.lon}

    @classmethod
    def from_dict(cls, d: dict) -> "GeoPoint":
        return cls(d["lat"], d["lon"])


@dataclass(frozen=True)
class CrossValidation:
    """Parsed, rule-checked output of the source cross-validation prompt."""

    location_name: str = ""
    coordinates: Optional[GeoPoint] = None
    date_span: Optional[DateSpan] = None
    consensus: ConsensusLabel = ConsensusLabel.NON_VERIFIABLE
    notes: str = ""
    consensus_about: str = ""
    conflicts: str = ""
    tags: tuple = ()

    def to_dict(self) -> dict:
        return {
            "location_name": self.location_name,
            "coordinates": self.coordinates.to_dict() if self.coordinates else None,
            "date_span": self.date_span.to_dict() if self.date_span else None,
            "consensus": self.consensus.value,
            "notes": self.notes,
            "consensus_about": self.consensus_about,
            "conflicts": self.conflicts,
            "tags": list(self.tags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrossValidation":
        return cls(
            location_name=d.get("location_name", ""),
            coordinates=GeoPoint.from_dict(d["coordinates"]) if d.get("coordinates") else None,
            date_span=DateSpan.from_dict(d["date_span"]) if d.get("date_span") else None,
            consensus=ConsensusLabel(d["consensus"]),
            notes=d.get("notes", ""),
            consensus_about=d.get("consensus_about", ""),
            conflicts=d.get("conflicts", ""),
            tags=tuple(d.get("tags", ())),
        )


@dataclass(frozen=True)
class ForensicAnalysis:
    """Parsed output of the image forensic-analysis prompt."""

    metadata_validation: dict = field(default_factory=dict)  # location/event/people
    authenticity: str = ""
    auth_evidence: str = ""
    synt_type: str = ""
    other: str = ""

    def __post_init__(self):
        # freeze the nested mapping so the value stays shareable
        object.__setattr__(
            self,
            "metadata_validation",
            {
                "location": str(self.metadata_validation.get("location", "")),
                "event": str(self.metadata_validation.get("event", "")),
                "people": str(self.metadata_validation.get("people", "")),
            },
        )

    def to_dict(self) -> dict:
        return {
            "metadata-validation": dict(self.metadata_validation),
            "authenticity": self.authenticity,
            "auth-evidence": self.auth_evidence,
            "synt-type": self.synt_type,
            "other": self.other,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForensicAnalysis":
        return cls(
            metadata_validation=dict(d.get("metadata-validation", {})),
            authenticity=d.get("authenticity", ""),
            auth_evidence=d.get("auth-evidence", ""),
            synt_type=d.get("synt-type", ""),
            other=d.get("other", ""),
        )


@dataclass(frozen=True)
class VerificationReport:
    """The assembled final record for one case."""

    case_id: str
    cross_validation: Optional[CrossValidation]
    forensic: Optional[ForensicAnalysis]
    transcripts: tuple
    sources: tuple
    keyframe_manifest: tuple
    human_review_required: bool = False
    human_review_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "cross_validation": self.cross_validation.to_dict() if self.cross_validation else None,
            "forensic": self.forensic.to_dict() if self.forensic else None,
            "transcripts": [t.to_dict() for t in self.transcripts],
            "sources": [s.to_dict() for s in self.sources],
            "keyframe_manifest": [k.to_dict() for k in self.keyframe_manifest],
            "human_review_required": self.human_review_required,
            "human_review_reason": self.human_review_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationReport":
        return cls(
            case_id=d["case_id"],
            cross_validation=(
                CrossValidation.from_dict(d["cross_validation"])
                if d.get("cross_validation") else None
            ),
            forensic=ForensicAnalysis.from_dict(d["forensic"]) if d.get("forensic") else None,
            transcripts=tuple(Transcript.from_dict(t) for t in d.get("transcripts", ())),
            sources=tuple(SourceDocument.from_dict(s) for s in d.get("sources", ())),
            keyframe_manifest=tuple(Keyframe.from_dict(k) for k in d.get("keyframe_manifest", ())),
            human_review_required=d.get("human_review_required", False),
            human_review_reason=d.get("human_review_reason", ""),
        )


@dataclass(frozen=True)
class Case:
    """One verification job: metadata plus its media assets."""

    case_id: str
    metadata: CaseMetadata
    assets: tuple  # of MediaAsset

    def videos(self) -> list:
        return [a for a in self.assets if a.kind == "video"]

    def images(self) -> list:
        return [a for a in self.assets if a.kind == "image"]


def validate_case(
    metadata: CaseMetadata,
    assets: Sequence[MediaAsset],
    case_id: str = "case",
    allow_empty_metadata: bool = False,
) -> Case:
    """Validate a case's inputs and normalize asset kinds from extensions.

    Raises EmptyCase when no assets exist, UnsupportedMedia for extensions
    outside {mp4, jpg, jpeg, png}, and EmptyMetadata when both title and
    description are empty (retrieval cannot run). The pipeline catches
    EmptyMetadata and re-validates with allow_empty_metadata=True to keep
    media processing alive.
    """
    if not assets:
        raise EmptyCase(f"case {case_id!r} has no media assets")

    normalized = []
    for asset in assets:
        ext = Path(asset.path).suffix.lower()
        if ext not in SUPPORTED_EXTENSIONS:
            raise UnsupportedMedia(f"{asset.path}: extension {ext!r} not supported")
        kind = "video" if ext in VIDEO_EXTENSIONS else "image"
        duration = asset.duration_s if kind == "video" else None
        normalized.append(MediaAsset(asset.asset_id, kind, asset.path, duration))

    if not metadata.can_retrieve() and not allow_empty_metadata:
        raise EmptyMetadata(
            f"case {case_id!r}: title and description are both empty; "
            "evidence retrieval cannot run"
        )

    return Case(case_id=case_id, metadata=metadata, assets=tuple(normalized))
