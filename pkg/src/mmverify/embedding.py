"""Frame feature extraction: classical color/luma features or sidecar model.

The classical embedder is the zero-dependency default; the sidecar path
forwards frames to an external model process and treats its embedding
dimension as opaque.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import cv2
import numpy as np

from .errors import DimensionMismatch, SidecarUnavailable
from .model import Embedding

CLASSICAL_EXTRACTOR_ID = "classical-v1"
HIST_BINS = (16, 4, 4)  # H, S, V
LUMA_GRID = 8


@dataclass(frozen=True)
class EmbedderConfig:
    embedder: str = "classical"  # "classical" | "sidecar"
    normalize: bool = True
    fallback_to_classical: bool = True

    def __post_init__(self):
        if self.embedder not in ("classical", "sidecar"):
            raise ValueError(f"unknown embedder {self.embedder!r}")


def hsv_histogram(frame: np.ndarray) -> np.ndarray:
    """Normalized 16x4x4 HSV histogram (sums to 1), flattened to 256 dims."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DimensionMismatch(f"expected HxWx3 RGB frame, got {frame.shape}")
    hsv = cv2.cvtColor(frame, cv2.COLOR_RGB2HSV)
    hist = cv2.calcHist([hsv], [0, 1, 2], None, list(HIST_BINS),
                        [0, 180, 0, 256, 0, 256])
    flat = hist.ravel().astype(np.float64)
    total = flat.sum()
    return flat / total if total > 0 else flat


def luma_grid(frame: np.ndarray, cells: int = LUMA_GRID) -> np.ndarray:
    """cells x cells grid of mean Rec.601 luma, scaled to [0, 1]."""
    luma = (0.299 * frame[:, :, 0] + 0.587 * frame[:, :, 1]
            + 0.114 * frame[:, :, 2]) / 255.0
    rows = np.array_split(luma, cells, axis=0)
    grid = np.array([[cell.mean() for cell in np.array_split(row, cells, axis=1)]
                     for row in rows])
    return grid.ravel()


def classical_embed(frame: np.ndarray) -> Embedding:
    """320-dim concatenation of HSV histogram (256) and luma grid (64)."""
    vector = np.concatenate([hsv_histogram(frame), luma_grid(frame)])
    return Embedding.of(vector, CLASSICAL_EXTRACTOR_ID)


def _l2_normalize(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def embed_frames(
    frames: Sequence[np.ndarray],
    cfg: EmbedderConfig = EmbedderConfig(),
    sidecar=None,
) -> list[Embedding]:
    """One embedding per frame; all outputs share dim and extractor.

    With the sidecar embedder selected, a failed handshake either falls
    back to the classical embedder (fallback_to_classical) or raises
    SidecarUnavailable.
    """
    if not frames:
        raise ValueError("no frames to embed")
    shape = frames[0].shape
    for f in frames:
        if f.shape != shape:
            raise DimensionMismatch(f"mixed frame shapes {shape} vs {f.shape}")

    if cfg.embedder == "sidecar":
        try:
            embeddings = _sidecar_embed(frames, sidecar)
        except SidecarUnavailable:
            if not cfg.fallback_to_classical:
                raise
            embeddings = [classical_embed(f) for f in frames]
    else:
        embeddings = [classical_embed(f) for f in frames]

    if cfg.normalize:
        embeddings = [
            Embedding.of(_l2_normalize(e.as_array()), e.extractor_id)
            for e in embeddings
        ]
    return embeddings


def _sidecar_embed(frames: Sequence[np.ndarray], sidecar) -> list[Embedding]:
    if sidecar is None:
        raise SidecarUnavailable("sidecar embedder selected but no sidecar configured")
    vectors = sidecar.embed(frames)
    extractor = f"sidecar:{sidecar.model_id('embed')}"
    return [Embedding.of(np.asarray(v, dtype=np.float64), extractor) for v in vectors]
