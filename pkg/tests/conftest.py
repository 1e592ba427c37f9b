"""Shared fixture builders: synthetic media, case directories, stub fixtures."""

from __future__ import annotations

import json
import wave
from pathlib import Path

import cv2
import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


def write_video(path: Path, scenes, fps: float = 10.0, size=(64, 48)) -> Path:
    """Encode solid-color scenes as an mp4: scenes = [(duration_s, (r, g, b))]."""
    w, h = size
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (w, h))
    assert writer.isOpened(), f"cannot open video writer for {path}"
    for duration_s, rgb in scenes:
        frame = np.zeros((h, w, 3), np.uint8)
        frame[:, :] = rgb[::-1]  # VideoWriter expects BGR
        for _ in range(round(duration_s * fps)):
            writer.write(frame)
    writer.release()
    return path


def write_tone_wav(path: Path, freq_hz: float, duration_s: float,
                   sample_rate: int = 16000, amplitude: float = 0.5) -> Path:
    t = np.arange(round(duration_s * sample_rate)) / sample_rate
    samples = (amplitude * 32767 * np.sin(2 * np.pi * freq_hz * t)).astype(np.int16)
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(samples.tobytes())
    return path


def solid_image(path: Path, rgb, size=(64, 48)) -> Path:
    w, h = size
    frame = np.zeros((h, w, 3), np.uint8)
    frame[:, :] = rgb[::-1]
    assert cv2.imwrite(str(path), frame)
    return path


SCENE_PALETTE = [
    (230, 30, 30), (30, 60, 230), (40, 200, 60), (235, 210, 40),
    (180, 40, 200), (30, 210, 210), (240, 130, 30), (120, 120, 120),
]


ID115_METADATA = {
    "location": "Supposedly Liman / Krasny Liman",
    "violence level": "(None) Military presence",
    "title": "",
    "media link": "https://t.me/zvezdanews/82025",
    "description": "During the liberation of Krasny Liman, Russian soldiers "
                   "found the nationalists' commando post in the pioneer camp",
    "category": "Other",
}


def article_html(body_sentences, title="Article") -> str:
    paragraphs = "".join(f"<p>{s}</p>" for s in body_sentences)
    return f"""<html><head><title>{title}</title></head><body>
<nav><ul>
<li><a href="/home">Home</a></li><li><a href="/news">News</a></li>
<li><a href="/sport">Sport</a></li><li><a href="/contact">Contact</a></li>
</ul></nav>
<article>{paragraphs}</article>
<footer><a href="/terms">Terms of use</a> <a href="/privacy">Privacy</a></footer>
</body></html>"""


GOLDEN_SEARCH_RESULTS = [
    {"link": "https://english.ahram.org.eg/news/466202.aspx",
     "title": "Russian army confirms capture of strategic town",
     "snippet": "The defence ministry said the town had been taken.",
     "date": "Not available"},
    {"link": "https://en.wikipedia.org/wiki/Battle_of_Krasnyi_Lyman",
     "title": "Battle of Krasnyi Lyman",
     "snippet": "The battle for Krasny Liman took place during the eastern "
                "Ukraine campaign.",
     "date": "Not available"},
    {"link": "https://tass.com/russia/1457247",
     "title": "Russia's Armed Forces liberate Krasny Liman",
     "snippet": "Report on the advance of DPR units.",
     "date": "May 28, 2022"},
    {"link": "https://en.iz.ru/en/1822471/advance",
     "title": "Russian military began advancing",
     "snippet": "Units moved toward the city limits overnight.",
     "date": "Jan 15, 2025"},
    {"link": "https://tass.com/defense/1729357",
     "title": "Russian forces thwart four attacks",
     "snippet": "Defensive engagements reported near the front line.",
     "date": "Not available"},
]

GOLDEN_PAGES = {
    "https://en.wikipedia.org/wiki/Battle_of_Krasnyi_Lyman": article_html([
        "The Battle of Krasnyi Lyman was fought for control of the town of "
        "Lyman in Donetsk Oblast during the war in eastern Ukraine.",
        "Russian and allied forces captured the town in late May 2022 and "
        "used it as a logistics hub for operations in the region.",
        "Ukrainian forces recaptured the town in early October 2022 after "
        "an encirclement operation.",
    ], title="Battle of Krasnyi Lyman"),
    "https://tass.com/russia/1457247": article_html([
        "The defence ministry announced on 28 May 2022 that Krasny Liman "
        "had been taken under full control.",
        "The town sits on an important rail junction north of Sloviansk.",
    ], title="TASS report"),
    "https://en.iz.ru/en/1822471/advance": article_html([
        "Units began advancing toward fortified positions, the ministry "
        "said in a briefing published in January 2025.",
    ], title="IZ report"),
    "https://tass.com/defense/1729357": article_html([
        "Defensive engagements were reported near the contact line over "
        "the weekend, according to the briefing.",
    ], title="TASS defense"),
}

GOLDEN_CROSSVAL_RESPONSE = {
    "json": {
        "location": {
            "location": "Lyman (formerly Krasnyi Lyman), Donetsk Oblast, Ukraine",
            "coordinates": "48.9781° N, 37.8017° E",
        },
        "date": {
            "date": "28/05/2022 - 02/10/2022",
            "concensus": "Partial",
            "notes": "First reported Russian capture: 28/05/2022 (TASS). "
                     "Ukrainian recapture: 02/10/2022 (BBC). Other sources "
                     "reference ongoing fighting into 2023 and 2025, but the "
                     "main events are concentrated between late May and early "
                     "October 2022.",
        },
        "about": {
            "consensus": "The event concerns the battle for control of the "
                         "town of Lyman (formerly Krasnyi Lyman) in Donetsk "
                         "Oblast, Ukraine. Russian and DPR forces captured the "
                         "town in late May 2022; Ukrainian forces recaptured "
                         "it in early October 2022.",
            "conflicts": "Russian media frame the capture as a liberation "
                         "from nationalists, while Ukrainian and Western "
                         "sources describe the October recapture as the "
                         "liberation.",
        },
        "tag": ["Ukraine War", "Lyman", "Donetsk", "Russian Armed Forces",
                "Ukrainian Armed Forces", "DPR"],
    }
}

GOLDEN_FORENSIC_RESPONSE = {
    "json": {
        "metadata-validation": {
            "location": "The images show a semi-rural area with a brick "
                        "building and a fence painted in blue and yellow, "
                        "consistent with eastern Ukraine and the stated "
                        "location of Lyman, Donetsk Oblast.",
            "event": "Military presence and abandoned documents are "
                     "consistent with a recent change of control of the site.",
            "people": "Uniformed personnel visible; no identifiable "
                      "individuals.",
        },
        "authenticity": "The content appears authentic and not synthetic or "
                        "AI-generated. The images are consistent with field "
                        "reporting and do not show signs of digital "
                        "fabrication.",
        "auth-evidence": "Natural lighting and shadows, realistic detail, "
                         "consistent camera quality, and real-world objects "
                         "matching the context.",
        "synt-type": "No evidence of AI-generated content (GANs, Stable "
                     "Diffusion, etc.).",
        "other": "No major anomalies or manipulations detected; the source "
                 "outlet's editorial framing should be considered.",
    }
}


def build_golden_case(root: Path, name: str = "ID115") -> Path:
    """An offline-runnable case shaped after the demo sample: two videos,
    one with an audio tone, plus stub fixtures for every backend."""
    case_dir = root / name
    case_dir.mkdir(parents=True)
    (case_dir / "metadata.json").write_text(json.dumps(ID115_METADATA, indent=2))

    write_video(case_dir / "video1.mp4",
                [(2.0, SCENE_PALETTE[0]), (2.0, SCENE_PALETTE[1]),
                 (2.0, SCENE_PALETTE[2])])
    write_tone_wav(case_dir / "video1.wav", 440.0, 6.0)
    write_video(case_dir / "video2.mp4",
                [(2.0, SCENE_PALETTE[3]), (2.0, SCENE_PALETTE[4])])

    stubs = case_dir / "stubs"
    stubs.mkdir()
    (stubs / "search_results.json").write_text(json.dumps(GOLDEN_SEARCH_RESULTS))
    (stubs / "pages.json").write_text(json.dumps(GOLDEN_PAGES))
    (stubs / "cross_validation.json").write_text(json.dumps(GOLDEN_CROSSVAL_RESPONSE))
    (stubs / "forensic.json").write_text(json.dumps(GOLDEN_FORENSIC_RESPONSE))
    return case_dir


def build_failure_case(root: Path, name: str = "ID666") -> Path:
    """One undecodable video, one good image, and a refusing LLM stub."""
    case_dir = root / name
    case_dir.mkdir(parents=True)
    (case_dir / "metadata.json").write_text(json.dumps({
        "location": "Unknown",
        "violence level": "High",
        "title": "Strike on a residential block",
        "media link": "",
        "description": "Footage said to show the aftermath of a strike",
        "category": "Conflict",
    }, indent=2))
    (case_dir / "broken.mp4").write_bytes(b"")  # undecodable
    solid_image(case_dir / "photo.jpg", SCENE_PALETTE[2])

    stubs = case_dir / "stubs"
    stubs.mkdir()
    (stubs / "search_results.json").write_text(json.dumps([]))
    (stubs / "default.json").write_text(json.dumps({
        "text": "I'm sorry, I can't help with that request.",
        "finish_reason": "stop",
        "content_filtered": False,
    }))
    return case_dir


@pytest.fixture
def golden_case(tmp_path):
    return build_golden_case(tmp_path)


@pytest.fixture
def failure_case(tmp_path):
    return build_failure_case(tmp_path)
