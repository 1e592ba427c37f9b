#!/usr/bin/env python3
"""Walkthrough: from a raw video to a handful of representative keyframes.

Builds a synthetic four-scene video, decodes and samples it, segments it
into shots with the histogram detector, embeds every sampled frame, and
lets silhouette-driven K-means pick the keyframes. Outputs land in
./demo_out/keyframes/.
"""

from pathlib import Path

import cv2
import numpy as np

from mmverify.embedding import EmbedderConfig, embed_frames
from mmverify.keyframes import (
    ClusteringConfig,
    aggregate_case_keyframes,
    prepare_llm_images,
    select_k,
    select_shot_keyframes,
)
from mmverify.shots import ShotDetectorConfig, decode_video, detect_shots

OUT = Path(__file__).parent / "demo_out" / "keyframes"

SCENES = [  # (seconds, RGB)
    (3.0, (220, 40, 40)),   # red establishing shot
    (2.0, (40, 70, 220)),   # blue cutaway
    (4.0, (40, 200, 80)),   # green main scene
    (2.0, (230, 210, 50)),  # yellow closer
]


def build_video(path: Path) -> Path:
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"),
                             10.0, (160, 120))
    for seconds, rgb in SCENES:
        frame = np.zeros((120, 160, 3), np.uint8)
        frame[:, :] = rgb[::-1]
        for _ in range(round(seconds * 10)):
            writer.write(frame)
    writer.release()
    return path


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    video = build_video(OUT / "synthetic.mp4")
    print(f"encoded a {sum(s for s, _ in SCENES):.0f}s video with "
          f"{len(SCENES)} planted scenes -> {video}")

    seq = decode_video(str(video), sample_fps=2.0)
    print(f"decoded {len(seq)} sampled frames "
          f"(native {seq.native_fps:.0f} fps, stride {seq.sample_stride})")

    shots = detect_shots(seq, ShotDetectorConfig())
    print(f"detected {len(shots)} shots:")
    for shot in shots:
        t0 = seq.frames[shot.start_frame][0].timestamp_s
        t1 = seq.frames[shot.end_frame][0].timestamp_s
        print(f"  sampled [{shot.start_frame:>2}, {shot.end_frame:>2}] "
              f"= {t0:.1f}s .. {t1:.1f}s")

    embeddings = embed_frames(seq.buffers(), EmbedderConfig())
    print(f"embedded every frame: dim={embeddings[0].dim} "
          f"({embeddings[0].extractor_id})")

    # silhouette sweep over the whole clip, for illustration
    sweep = select_k(embeddings, ClusteringConfig(seed=42))
    print(f"silhouette sweep over all frames picks k={sweep.k} "
          f"(silhouette={sweep.silhouette:.3f})")

    cfg = ClusteringConfig(seed=42)
    keyframes, aligned = [], []
    refs = seq.refs()
    for shot in shots:
        lo, hi = shot.start_frame, shot.end_frame + 1
        for kf in select_shot_keyframes(shot, refs[lo:hi], embeddings[lo:hi], cfg):
            pos = next(i for i, r in enumerate(refs)
                       if r.frame_index == kf.frame.frame_index)
            keyframes.append(kf)
            aligned.append((kf, seq.frames[pos][1], embeddings[pos]))

    final = aggregate_case_keyframes([a[0] for a in aligned],
                                     [a[2] for a in aligned], cfg)
    print(f"{len(keyframes)} per-shot keyframes -> {len(final)} after "
          f"cross-video aggregation (budget {cfg.case_budget})")

    buffers = {(a[0].frame.asset_id, a[0].frame.frame_index): a[1] for a in aligned}
    prepared = prepare_llm_images(
        [(kf, buffers[(kf.frame.asset_id, kf.frame.frame_index)]) for kf in final])
    for i, (kf, b64) in enumerate(prepared):
        out = OUT / f"kf_{i}.jpg"
        out.write_bytes(__import__("base64").b64decode(b64))
        print(f"  kf_{i}.jpg  t={kf.frame.timestamp_s:.1f}s "
              f"cluster={kf.cluster_id} ({len(b64)} Base64 chars)")
    print(f"done; inspect {OUT}")


if __name__ == "__main__":
    main()
