"""Shot segmentation over a sampled frame sequence.

The built-in detector thresholds HSV-histogram distances between adjacent
sampled frames; the sidecar detector swaps in model-predicted transition
scores but reuses the same boundary rule, so shot semantics stay identical
across detectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .embedding import hsv_histogram
from .errors import DimensionMismatch
from .media import get_decoder
from .model import FrameRef, Shot


@dataclass(frozen=True)
class ShotDetectorConfig:
    detector: str = "histogram"  # "histogram" | "sidecar"
    boundary_threshold: float = 0.35
    min_shot_len: int = 4  # in sampled frames
    sample_fps: float = 2.0
    decoder_path: str = "opencv"

    def __post_init__(self):
        if self.detector not in ("histogram", "sidecar"):
            raise ValueError(f"unknown detector {self.detector!r}")
        if not 0.0 < self.boundary_threshold <= 2.0:
            raise ValueError("boundary_threshold must be in (0, 2]")
        if self.min_shot_len < 1:
            raise ValueError("min_shot_len must be >= 1")
        if self.sample_fps <= 0:
            raise ValueError("sample_fps must be > 0")


@dataclass(frozen=True)
class FrameSequence:
    """Uniformly sampled frames of one asset, with their raw RGB buffers."""

    asset_id: str
    frames: tuple  # of (FrameRef, HxWx3 uint8 RGB buffer)
    native_fps: float
    sample_stride: int

    def __post_init__(self):
        indices = [ref.frame_index for ref, _ in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("frame_index values must be strictly increasing")
        shapes = {buf.shape for _, buf in self.frames}
        if len(shapes) > 1:
            raise DimensionMismatch(f"mixed frame dimensions: {shapes}")

    def __len__(self) -> int:
        return len(self.frames)

    def buffers(self) -> list:
        return [buf for _, buf in self.frames]

    def refs(self) -> list:
        return [ref for ref, _ in self.frames]


def decode_video(path: str, sample_fps: float = 2.0, decoder=None,
                 asset_id: Optional[str] = None) -> FrameSequence:
    """Decode and uniformly sample a video at sample_fps.

    Raises DecodeFailure for unreadable input; the pipeline turns that into
    a human-review flag rather than aborting the case.
    """
    from pathlib import Path
    decoder = decoder or get_decoder()
    decoded = decoder.decode_video(path, sample_fps)
    asset_id = asset_id or Path(path).stem
    frames = tuple(
        (FrameRef(asset_id, idx, ts), buf) for idx, ts, buf in decoded.frames
    )
    return FrameSequence(asset_id, frames, decoded.native_fps, decoded.sample_stride)


def histogram_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L1 distance between normalized HSV histograms; 0 identical, 2 disjoint."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"frame shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(hsv_histogram(a) - hsv_histogram(b)).sum())


def _boundaries(distances: Sequence[float], threshold: float) -> list:
    """Gap indices where the distance crosses threshold at a local maximum.

    Local maximum over a +/-1 window with deterministic tie handling:
    strictly above the previous gap, at least the next gap. Plateaus fire
    once, at their first gap; an all-equal series never fires.
    """
    out = []
    n = len(distances)
    for g in range(n):
        d = distances[g]
        if d <= threshold:
            continue
        if g > 0 and not d > distances[g - 1]:
            continue
        if g < n - 1 and not d >= distances[g + 1]:
            continue
        out.append(g + 1)  # boundary sits before sampled frame g+1
    return out


def _merge_short(segments: list, min_len: int) -> list:
    """Fold segments shorter than min_len into their neighbors.

    The first segment merges forward until long enough; later short
    segments merge into the preceding one.
    """
    segments = [list(s) for s in segments]
    while len(segments) > 1 and segments[0][1] - segments[0][0] + 1 < min_len:
        first = segments.pop(0)
        segments[0][0] = first[0]
    merged = [segments[0]]
    for start, end in segments[1:]:
        if end - start + 1 < min_len:
            merged[-1][1] = end
        else:
            merged.append([start, end])
    return [tuple(s) for s in merged]


def detect_shots(seq: FrameSequence, cfg: ShotDetectorConfig = ShotDetectorConfig(),
                 sidecar=None) -> list[Shot]:
    """Partition the sampled index range into shots.

    Returned shots are sorted, disjoint, gap-free and cover [0, len(seq)-1].
    """
    if len(seq) == 0:
        raise ValueError("cannot segment an empty frame sequence")
    n = len(seq)
    if n == 1:
        return [Shot(seq.asset_id, 0, 0)]

    buffers = seq.buffers()
    if cfg.detector == "sidecar":
        if sidecar is None:
            raise ValueError("sidecar detector selected but no sidecar given")
        distances = list(sidecar.shot_scores(buffers))
    else:
        distances = [histogram_distance(buffers[i - 1], buffers[i]) for i in range(1, n)]

    cuts = _boundaries(distances, cfg.boundary_threshold)
    edges = [0] + cuts + [n]
    segments = [(edges[i], edges[i + 1] - 1) for i in range(len(edges) - 1)]
    segments = _merge_short(segments, cfg.min_shot_len)
    return [Shot(seq.asset_id, start, end) for start, end in segments]
