#!/usr/bin/env python3
"""Walkthrough: a complete offline case run, including the report files.

Builds a self-contained case directory (metadata + two synthetic videos +
stub fixtures for search, crawling, the LLM, and transcription), runs the
whole pipeline twice, and shows that the warm second run is byte-identical
and touches no backends.

Equivalent CLI: mmverify run --case <dir> --offline
"""

import json
import wave
from pathlib import Path

import cv2
import numpy as np

from mmverify.pipeline import PipelineConfig, build_clients, run_case

OUT = Path(__file__).parent / "demo_out" / "case_DEMO1"


def write_video(path, scenes, fps=10.0, size=(96, 72)):
    w, h = size
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (w, h))
    for seconds, rgb in scenes:
        frame = np.zeros((h, w, 3), np.uint8)
        frame[:, :] = rgb[::-1]
        for _ in range(round(seconds * fps)):
            writer.write(frame)
    writer.release()


def write_tone(path, freq, seconds, rate=16000):
    t = np.arange(round(seconds * rate)) / rate
    samples = (0.4 * 32767 * np.sin(2 * np.pi * freq * t)).astype(np.int16)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(rate)
        f.writeframes(samples.tobytes())


def build_case() -> Path:
    if OUT.exists():
        import shutil
        shutil.rmtree(OUT)
    OUT.mkdir(parents=True)
    (OUT / "metadata.json").write_text(json.dumps({
        "location": "Riverside district",
        "violence level": "(None)",
        "title": "Column seen crossing the old bridge",
        "media link": "https://t.me/demo/1",
        "description": "Footage shows vehicles crossing the Old Stone Bridge "
                       "at dawn before the checkpoint opened",
        "category": "Other",
    }, indent=2))

    write_video(OUT / "video1.mp4", [(3.0, (200, 40, 40)), (3.0, (40, 40, 200))])
    write_tone(OUT / "video1.wav", 330.0, 6.0)
    write_video(OUT / "video2.mp4", [(2.0, (40, 180, 60))])

    stubs = OUT / "stubs"
    stubs.mkdir()
    (stubs / "search_results.json").write_text(json.dumps([
        {"link": "https://paper.example/bridge", "snippet": "",
         "title": "Vehicles cross Old Stone Bridge", "date": "12/03/2024"},
        {"link": "https://blog.example/morning", "snippet": "dawn report",
         "title": "Morning movements", "date": "Not available"},
    ]))
    (stubs / "pages.json").write_text(json.dumps({
        "https://paper.example/bridge":
            "<article><p>A convoy crossed the Old Stone Bridge on the "
            "morning of 12 March 2024, witnesses said.</p></article>",
    }))
    (stubs / "cross_validation.json").write_text(json.dumps({"json": {
        "location": {"location": "Old Stone Bridge, Riverside district",
                     "coordinates": "41.02° N, 28.97° E"},
        "date": {"date": "12/03/2024", "concensus": "Yes",
                 "notes": "single consistent date"},
        "about": {"consensus": "a convoy crossing at dawn", "conflicts": ""},
        "tag": ["convoy", "bridge"],
    }}))
    (stubs / "forensic.json").write_text(json.dumps({"json": {
        "metadata-validation": {"location": "bridge structure visible",
                                "event": "matches the description",
                                "people": "none identifiable"},
        "authenticity": "appears authentic",
        "auth-evidence": "consistent lighting and perspective",
        "synt-type": "none detected",
        "other": "",
    }}))
    return OUT


def main():
    case_dir = build_case()
    config = PipelineConfig(offline=True)

    print(f"cold run over {case_dir} ...")
    status = run_case(case_dir, config)
    print(f"  stage={status.stage} human_review={status.human_review_required}")
    for reason in status.reasons:
        print(f"  note: {reason}")
    first = (case_dir / "report.json").read_bytes()

    print("warm run (fresh stub clients, so the counters start at zero) ...")
    clients = build_clients(config, case_dir)
    run_case(case_dir, config, clients=clients)
    identical = (case_dir / "report.json").read_bytes() == first
    print(f"  report.json byte-identical: {identical}")
    print(f"  backend calls on warm cache: search={clients.search.calls} "
          f"llm={clients.llm.calls} transcribe={clients.transcribe.calls} "
          f"fetch={clients.fetcher.calls}")

    report = json.loads(first)
    print("\nreport highlights:")
    print(f"  location: {report['cross_validation']['location_name']}")
    print(f"  consensus: {report['cross_validation']['consensus']}")
    print(f"  sources: {len(report['sources'])} "
          f"(first: {report['sources'][0]['link']})")
    print(f"  keyframes: {len(report['keyframe_manifest'])}")
    print(f"\nfull report: {case_dir / 'report.md'}")


if __name__ == "__main__":
    main()
