"""Media decoding behind a vendor-neutral interface.

Two backends: a library decoder built on OpenCV (the default; no external
executables needed) and a subprocess decoder driving any ffmpeg-style CLI
configured via `decoder_path`. The library decoder cannot demux audio
tracks, so it reads a sibling `<stem>.wav` file when one exists — the
convention the bundled fixtures use.
"""

from __future__ import annotations

import subprocess
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .errors import DecodeFailure

TARGET_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class AudioStream:
    """Mono 16 kHz 16-bit PCM extracted from one asset."""

    asset_id: str
    samples: np.ndarray  # int16
    sample_rate: int = TARGET_SAMPLE_RATE

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    @classmethod
    def silent(cls, asset_id: str, duration_s: float,
               sample_rate: int = TARGET_SAMPLE_RATE) -> "AudioStream":
        return cls(asset_id, np.zeros(round(duration_s * sample_rate), np.int16),
                   sample_rate)


@dataclass(frozen=True)
class DecodedFrames:
    """Raw output of a video decode: sampled RGB frames plus timing info."""

    frames: list  # of (original_frame_index, timestamp_s, HxWx3 uint8 RGB)
    native_fps: float
    sample_stride: int


def resample_to_mono_16k(samples: np.ndarray, sample_rate: int,
                         channels: int = 1) -> np.ndarray:
    """Downmix to mono and linearly resample to the canonical 16 kHz."""
    arr = np.asarray(samples)
    if channels > 1:
        arr = arr.reshape(-1, channels).mean(axis=1)
    arr = arr.astype(np.float64)
    if sample_rate != TARGET_SAMPLE_RATE and len(arr):
        duration = len(arr) / sample_rate
        n_out = round(duration * TARGET_SAMPLE_RATE)
        src_t = np.arange(len(arr)) / sample_rate
        dst_t = np.arange(n_out) / TARGET_SAMPLE_RATE
        arr = np.interp(dst_t, src_t, arr)
    return np.clip(np.round(arr), -32768, 32767).astype(np.int16)


class OpenCvDecoder:
    """Library-backed decoder; audio comes from a sibling .wav when present."""

    def decode_video(self, path: str, sample_fps: float) -> DecodedFrames:
        cap = cv2.VideoCapture(str(path))
        if not cap.isOpened():
            raise DecodeFailure(f"cannot open video {path}")
        native_fps = cap.get(cv2.CAP_PROP_FPS)
        if not native_fps or native_fps <= 0:
            native_fps = 30.0
        stride = max(1, round(native_fps / sample_fps))

        frames = []
        index = 0
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            if index % stride == 0:
                rgb = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
                frames.append((index, index / native_fps, rgb))
            index += 1
        cap.release()
        if not frames:
            raise DecodeFailure(f"no decodable frames in {path}")
        return DecodedFrames(frames, float(native_fps), stride)

    def probe_duration(self, path: str) -> float:
        cap = cv2.VideoCapture(str(path))
        if not cap.isOpened():
            raise DecodeFailure(f"cannot open video {path}")
        fps = cap.get(cv2.CAP_PROP_FPS) or 0
        count = cap.get(cv2.CAP_PROP_FRAME_COUNT) or 0
        cap.release()
        if fps <= 0 or count <= 0:
            raise DecodeFailure(f"cannot probe duration of {path}")
        return count / fps

    def decode_image(self, path: str) -> np.ndarray:
        img = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if img is None:
            raise DecodeFailure(f"cannot decode image {path}")
        return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)

    def extract_audio(self, path: str) -> Optional[AudioStream]:
        """None means the asset has no audio track."""
        wav_path = Path(path).with_suffix(".wav")
        if not wav_path.exists():
            return None
        try:
            with wave.open(str(wav_path), "rb") as wav:
                rate = wav.getframerate()
                channels = wav.getnchannels()
                width = wav.getsampwidth()
                raw = wav.readframes(wav.getnframes())
        except (wave.Error, OSError) as exc:
            raise DecodeFailure(f"cannot read audio for {path}: {exc}") from exc
        if width != 2:
            raise DecodeFailure(f"{wav_path}: only 16-bit PCM supported, got {8 * width}-bit")
        samples = np.frombuffer(raw, dtype=np.int16)
        mono = resample_to_mono_16k(samples, rate, channels)
        return AudioStream(Path(path).stem, mono)


class SubprocessDecoder:
    """Drives an external ffmpeg-style decoder executable.

    Frames travel as an MJPEG pipe (split on JPEG SOI/EOI markers), audio as
    raw s16le PCM. Frame indices are in sampled space because the CLI
    contract exposes no native fps.
    """

    def __init__(self, decoder_path: str):
        self.decoder_path = decoder_path

    def frame_command(self, path: str, sample_fps: float) -> list:
        return [self.decoder_path, "-i", str(path), "-vf", f"fps={sample_fps}",
                "-f", "image2pipe", "-c:v", "mjpeg", "-q:v", "2", "-"]

    def audio_command(self, path: str) -> list:
        return [self.decoder_path, "-i", str(path), "-f", "s16le",
                "-acodec", "pcm_s16le", "-ar", str(TARGET_SAMPLE_RATE),
                "-ac", "1", "-"]

    def decode_video(self, path: str, sample_fps: float) -> DecodedFrames:
        data = self._run(self.frame_command(path, sample_fps), path)
        frames = []
        for i, jpeg in enumerate(_split_mjpeg(data)):
            img = cv2.imdecode(np.frombuffer(jpeg, np.uint8), cv2.IMREAD_COLOR)
            if img is None:
                continue
            frames.append((i, i / sample_fps, cv2.cvtColor(img, cv2.COLOR_BGR2RGB)))
        if not frames:
            raise DecodeFailure(f"decoder produced no frames for {path}")
        return DecodedFrames(frames, float(sample_fps), 1)

    def probe_duration(self, path: str) -> float:
        # the CLI contract has no probe verb; decode lazily instead
        raise DecodeFailure(f"subprocess decoder cannot probe {path}")

    def decode_image(self, path: str) -> np.ndarray:
        return OpenCvDecoder().decode_image(path)

    def extract_audio(self, path: str) -> Optional[AudioStream]:
        try:
            data = self._run(self.audio_command(path), path)
        except DecodeFailure:
            return None  # decoders fail on missing audio streams
        samples = np.frombuffer(data[: len(data) // 2 * 2], dtype="<i2")
        return AudioStream(Path(path).stem, samples.astype(np.int16))

    def _run(self, command: list, path: str) -> bytes:
        try:
            proc = subprocess.run(command, capture_output=True, timeout=300)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise DecodeFailure(f"decoder failed for {path}: {exc}") from exc
        if proc.returncode != 0:
            raise DecodeFailure(
                f"decoder exited {proc.returncode} for {path}: "
                f"{proc.stderr[-200:].decode(errors='replace')}"
            )
        return proc.stdout


def _split_mjpeg(data: bytes) -> list:
    """Split a concatenated MJPEG byte stream on SOI/EOI markers."""
    frames = []
    start = 0
    while True:
        soi = data.find(b"\xff\xd8", start)
        if soi < 0:
            break
        eoi = data.find(b"\xff\xd9", soi + 2)
        if eoi < 0:
            break
        frames.append(data[soi:eoi + 2])
        start = eoi + 2
    return frames


def get_decoder(decoder_path: str = "opencv"):
    """Resolve the configured decoder: 'opencv' (default) or an executable path."""
    if not decoder_path or decoder_path == "opencv":
        return OpenCvDecoder()
    return SubprocessDecoder(decoder_path)
