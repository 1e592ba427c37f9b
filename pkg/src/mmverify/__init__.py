"""Multimedia news-verification pipeline.

Ingests a case (metadata + videos/images), selects representative keyframes
via shot segmentation and silhouette-driven K-means, chunks and transcribes
audio, retrieves and buffers web evidence, cross-validates sources and runs
forensic analysis through a pluggable LLM client, and assembles a
structured verification report. Fully runnable offline against stub
backends.
"""

import os as _os

# quiet the bundled decoder's stderr chatter on corrupt inputs; must be set
# before OpenCV opens its first capture
_os.environ.setdefault("OPENCV_FFMPEG_LOGLEVEL", "-8")

from .model import (
    AudioChunk,
    Case,
    CaseMetadata,
    ConsensusLabel,
    CrossValidation,
    DateSpan,
    Embedding,
    ForensicAnalysis,
    FrameRef,
    GeoPoint,
    Keyframe,
    MediaAsset,
    Shot,
    SourceDocument,
    Transcript,
    VerificationReport,
    validate_case,
)

__version__ = "0.1.0"

__all__ = [
    "AudioChunk",
    "Case",
    "CaseMetadata",
    "ConsensusLabel",
    "CrossValidation",
    "DateSpan",
    "Embedding",
    "ForensicAnalysis",
    "FrameRef",
    "GeoPoint",
    "Keyframe",
    "MediaAsset",
    "Shot",
    "SourceDocument",
    "Transcript",
    "VerificationReport",
    "validate_case",
    "__version__",
]
