"""Per-shot K-means keyframe selection with silhouette-driven k.

The clustering code here is deliberately self-contained numpy (no external
clustering library): it is the part of the pipeline the tests check against
brute-force oracles, and determinism under a fixed seed is part of its
contract — the same case must always produce the same keyframes.
"""

from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import cv2
import numpy as np

from .errors import DimensionMismatch, EncodeFailure, KTooLarge, SingleCluster
from .model import Embedding, FrameRef, Keyframe, Shot, embeddings_matrix

Points = Union[np.ndarray, Sequence[Embedding]]


@dataclass(frozen=True)
class ClusteringConfig:
    k_min: int = 2
    k_max: int = 8
    seed: Optional[int] = None  # None: the pipeline derives it from the case id
    max_iters: int = 100
    tol: float = 1e-6
    frames_per_cluster: int = 1
    case_budget: int = 10

    def __post_init__(self):
        if self.k_min < 2:
            raise ValueError("k_min must be >= 2")
        if self.k_min > self.k_max:
            raise ValueError("k_min must be <= k_max")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.frames_per_cluster < 1:
            raise ValueError("frames_per_cluster must be >= 1")
        if self.case_budget < 1:
            raise ValueError("case_budget must be >= 1")


@dataclass(frozen=True)
class ClusteringResult:
    """Output of one k-means run. Arrays are owned by the result; don't mutate."""

    k: int
    assignments: np.ndarray  # (n,) int cluster index per point
    centroids: np.ndarray  # (k, dim)
    inertia: float
    silhouette: Optional[float]  # None when k == 1


def seed_from_case_id(case_id: str) -> int:
    """Stable 64-bit clustering seed derived from the case directory name."""
    digest = hashlib.sha256(case_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _as_matrix(points: Points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        mat = np.asarray(points, dtype=np.float64)
        if mat.ndim != 2:
            raise DimensionMismatch(f"expected (n, dim) matrix, got shape {mat.shape}")
        return mat
    return embeddings_matrix(list(points))


def _plusplus_seeding(mat: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids proportionally to D^2."""
    n = mat.shape[0]
    chosen = [int(rng.integers(0, n))]
    dist_sq = np.sum((mat - mat[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        total = dist_sq.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen centroid
            remaining = [i for i in range(n) if i not in set(chosen)]
            chosen.append(int(rng.choice(remaining)))
        else:
            idx = int(rng.choice(n, p=dist_sq / total))
            chosen.append(idx)
        dist_sq = np.minimum(dist_sq, np.sum((mat - mat[chosen[-1]]) ** 2, axis=1))
    return mat[chosen].copy()


def kmeans(
    points: Points,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> ClusteringResult:
    """Lloyd's algorithm with k-means++ seeding; deterministic per seed.

    Empty clusters are re-seeded to the point currently farthest from its
    centroid. At return every point is assigned to its nearest centroid
    and inertia is the within-cluster sum of squared distances.
    """
    mat = _as_matrix(points)
    n = mat.shape[0]
    if not 1 <= k <= n:
        raise KTooLarge(f"k={k} must be in [1, {n}]")

    rng = np.random.default_rng(np.uint64(seed))
    centroids = _plusplus_seeding(mat, k, rng)

    prev_inertia = np.inf
    assignments = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        dists = np.linalg.norm(mat[:, None, :] - centroids[None, :, :], axis=2)
        assignments = np.argmin(dists, axis=1)
        inertia = float(np.sum(dists[np.arange(n), assignments] ** 2))
        if __debug__:
            assert inertia <= prev_inertia + 1e-9, "inertia increased across iterations"
        prev_inertia = inertia

        # re-seed empty clusters to the farthest-from-centroid point
        for j in range(k):
            if np.any(assignments == j):
                continue
            point_dists = dists[np.arange(n), assignments]
            far = int(np.argmax(point_dists))
            if point_dists[far] <= 0.0:
                continue  # all points sit exactly on centroids; leave empty
            centroids[j] = mat[far]
            assignments[far] = j
            dists[:, j] = np.linalg.norm(mat - centroids[j], axis=1)

        new_centroids = centroids.copy()
        for j in range(k):
            members = mat[assignments == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
        movement = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if movement < tol:
            break

    # final assignment pass: the nearest-centroid invariant must hold exactly
    dists = np.linalg.norm(mat[:, None, :] - centroids[None, :, :], axis=2)
    assignments = np.argmin(dists, axis=1)
    inertia = float(np.sum(dists[np.arange(n), assignments] ** 2))

    silhouette = None
    if k >= 2 and len(np.unique(assignments)) >= 2:
        silhouette = silhouette_score(mat, assignments)
    return ClusteringResult(k, assignments, centroids, inertia, silhouette)


def silhouette_score(points: Points, assignments: Sequence[int]) -> float:
    """Mean silhouette over points: (b - a) / max(a, b), Euclidean.

    Points in singleton clusters contribute 0 by convention, as do points
    where both a and b are 0 (exact duplicates split across clusters).
    """
    mat = _as_matrix(points)
    labels = np.asarray(assignments, dtype=np.int64)
    n = mat.shape[0]
    if labels.shape[0] != n:
        raise DimensionMismatch("one assignment per point required")
    if n < 2:
        raise SingleCluster("silhouette needs at least 2 points")
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise SingleCluster("silhouette is undefined for a single cluster")

    dist = np.linalg.norm(mat[:, None, :] - mat[None, :, :], axis=2)
    scores = np.zeros(n)
    sizes = {int(c): int(np.sum(labels == c)) for c in clusters}
    for i in range(n):
        own = int(labels[i])
        if sizes[own] == 1:
            continue  # singleton convention: 0
        same = labels == own
        a = dist[i, same].sum() / (sizes[own] - 1)
        b = min(dist[i, labels == c].mean() for c in clusters if c != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def _all_identical(mat: np.ndarray) -> bool:
    return bool(np.all(mat == mat[0]))


def _k1_result(mat: np.ndarray) -> ClusteringResult:
    centroid = mat.mean(axis=0, keepdims=True)
    inertia = float(np.sum((mat - centroid) ** 2))
    return ClusteringResult(1, np.zeros(mat.shape[0], dtype=np.int64), centroid, inertia, None)


def select_k(points: Points, cfg: ClusteringConfig) -> ClusteringResult:
    """Sweep k over [k_min, min(k_max, n-1)] and keep the best silhouette.

    Degenerate inputs (fewer than 3 points, or all points identical) get a
    k=1 result. Exact silhouette ties resolve to the smaller k.
    """
    mat = _as_matrix(points)
    n = mat.shape[0]
    if n < 3 or _all_identical(mat):
        return _k1_result(mat)

    k_hi = min(cfg.k_max, n - 1)
    if k_hi < cfg.k_min:
        return _k1_result(mat)

    best: Optional[ClusteringResult] = None
    seed = cfg.seed or 0
    for k in range(cfg.k_min, k_hi + 1):
        result = kmeans(mat, k, seed=seed, max_iters=cfg.max_iters, tol=cfg.tol)
        if result.silhouette is None:
            continue
        if best is None or result.silhouette > best.silhouette:
            best = result
    return best if best is not None else _k1_result(mat)


def select_shot_keyframes(
    shot: Shot,
    frames: Sequence[FrameRef],
    embeddings: Sequence[Embedding],
    cfg: ClusteringConfig,
) -> list[Keyframe]:
    """Cluster one shot's frames and keep the nearest-to-centroid frames.

    Per cluster, the frames_per_cluster nearest frames are kept; distance
    ties go to the earliest timestamp.
    """
    if len(frames) != len(embeddings) or not frames:
        raise ValueError("frames and embeddings must be non-empty and aligned")
    mat = embeddings_matrix(list(embeddings))
    result = select_k(mat, cfg)

    keyframes = []
    for cluster in range(result.centroids.shape[0]):
        member_idx = np.flatnonzero(result.assignments == cluster)
        if member_idx.size == 0:
            continue
        dists = np.linalg.norm(mat[member_idx] - result.centroids[cluster], axis=1)
        order = sorted(
            range(member_idx.size),
            key=lambda i: (dists[i], frames[member_idx[i]].timestamp_s,
                           frames[member_idx[i]].frame_index),
        )
        for i in order[: cfg.frames_per_cluster]:
            idx = int(member_idx[i])
            keyframes.append(
                Keyframe(frames[idx], shot, cluster_id=cluster,
                         distance_to_centroid=float(dists[i]))
            )
    keyframes.sort(key=lambda kf: (kf.cluster_id, kf.distance_to_centroid,
                                   kf.frame.timestamp_s))
    return keyframes


def aggregate_case_keyframes(
    keyframes: Sequence[Keyframe],
    embeddings: Sequence[Embedding],
    cfg: ClusteringConfig,
) -> list[Keyframe]:
    """Second clustering pass across all assets to fit the case image budget.

    At or under budget the input passes through unchanged. Over budget, a
    k=case_budget k-means keeps one nearest-to-centroid frame per cluster;
    the survivors' cluster_id/distance are rewritten in aggregation space.
    """
    if len(keyframes) != len(embeddings) or not keyframes:
        raise ValueError("keyframes and embeddings must be non-empty and aligned")
    if len(keyframes) <= cfg.case_budget:
        return list(keyframes)

    mat = embeddings_matrix(list(embeddings))
    result = kmeans(mat, cfg.case_budget, seed=cfg.seed or 0,
                    max_iters=cfg.max_iters, tol=cfg.tol)

    selected = []
    for cluster in range(result.centroids.shape[0]):
        member_idx = np.flatnonzero(result.assignments == cluster)
        if member_idx.size == 0:
            continue
        dists = np.linalg.norm(mat[member_idx] - result.centroids[cluster], axis=1)
        best = min(
            range(member_idx.size),
            key=lambda i: (dists[i],
                           keyframes[member_idx[i]].frame.timestamp_s,
                           keyframes[member_idx[i]].frame.asset_id,
                           keyframes[member_idx[i]].frame.frame_index),
        )
        source = keyframes[int(member_idx[best])]
        selected.append(
            Keyframe(source.frame, source.shot, cluster_id=cluster,
                     distance_to_centroid=float(dists[best]))
        )
    selected.sort(key=lambda kf: kf.cluster_id)
    return selected


def base64_encode(data: bytes) -> str:
    """Standard-alphabet Base64 with padding, as the LLM API expects."""
    return base64.b64encode(data).decode("ascii")


def _target_size(width: int, height: int, max_side: int) -> tuple[int, int]:
    if width >= height:
        return max_side, max(1, round(height * max_side / width))
    return max(1, round(width * max_side / height)), max_side


def prepare_llm_images(
    keyframes_with_buffers: Sequence[tuple[Keyframe, np.ndarray]],
    max_side: int = 256,
    jpeg_quality: int = 85,
) -> list[tuple[Keyframe, str]]:
    """Downscale keyframes for API submission and Base64-encode them.

    The longer side becomes max_side (aspect preserved, bilinear); the
    result is JPEG re-encoded at jpeg_quality and Base64'd.
    """
    prepared = []
    for keyframe, buffer in keyframes_with_buffers:
        if buffer.ndim != 3 or buffer.shape[2] != 3:
            raise EncodeFailure(f"expected HxWx3 RGB buffer, got shape {buffer.shape}")
        h, w = buffer.shape[:2]
        tw, th = _target_size(w, h, max_side)
        resized = cv2.resize(buffer, (tw, th), interpolation=cv2.INTER_LINEAR)
        ok, encoded = cv2.imencode(
            ".jpg", cv2.cvtColor(resized, cv2.COLOR_RGB2BGR),
            [int(cv2.IMWRITE_JPEG_QUALITY), int(jpeg_quality)],
        )
        if not ok:
            raise EncodeFailure(f"JPEG encoding failed for {keyframe.frame}")
        prepared.append((keyframe, base64_encode(encoded.tobytes())))
    return prepared
