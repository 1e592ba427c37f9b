"""Client for the optional model sidecar (vps/1 stdio protocol).

The sidecar is a child process exposing shot-transition scoring and frame
embeddings over newline-delimited JSON frames; see docs/sidecar-protocol.md
for the grammar. Replies are FIFO, one per request id. A reader thread
enforces a read deadline so a dead or wedged sidecar becomes a transport
error, never a hang.
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import subprocess
import threading
from typing import Optional, Sequence

import cv2
import numpy as np

from .errors import HandshakeTimeout, SidecarUnavailable, TransportError

PROTOCOL_VERSION = "vps/1"
DEFAULT_HANDSHAKE_TIMEOUT_S = 30.0
DEFAULT_READ_TIMEOUT_S = 30.0


def encode_frame_jpeg_b64(frame: np.ndarray, quality: int = 90) -> str:
    ok, encoded = cv2.imencode(
        ".jpg", cv2.cvtColor(frame, cv2.COLOR_RGB2BGR),
        [int(cv2.IMWRITE_JPEG_QUALITY), quality],
    )
    if not ok:
        raise TransportError("could not JPEG-encode frame for sidecar")
    return base64.b64encode(encoded.tobytes()).decode("ascii")


class SidecarClient:
    """Owns one sidecar process and its FIFO request/reply pipeline."""

    def __init__(
        self,
        command,
        handshake_timeout_s: float = DEFAULT_HANDSHAKE_TIMEOUT_S,
        read_timeout_s: float = DEFAULT_READ_TIMEOUT_S,
    ):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command) + ["--stdio"]
        self.handshake_timeout_s = handshake_timeout_s
        self.read_timeout_s = read_timeout_s
        self.capabilities: Optional[dict] = None
        self._proc: Optional[subprocess.Popen] = None
        self._lines: queue.Queue = queue.Queue()
        self._next_id = 0
        self._lock = threading.Lock()

    # -- lifecycle --------------------------------------------------------

    def start(self) -> dict:
        """Spawn the process and handshake; returns its capabilities."""
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise SidecarUnavailable(f"cannot launch sidecar {self.command}: {exc}") from exc
        threading.Thread(target=self._read_loop, daemon=True).start()

        request_id = self._write({"op": "hello", "id": self._take_id(),
                                  "payload": {"version": PROTOCOL_VERSION}})
        try:
            reply = self._read_reply(request_id, timeout_s=self.handshake_timeout_s)
        except TransportError as exc:
            self.close()
            raise HandshakeTimeout(f"sidecar handshake failed: {exc}") from exc
        if not reply.get("ok"):
            error = reply.get("error", {})
            self.close()
            raise SidecarUnavailable(
                f"sidecar refused handshake: {error.get('code')} {error.get('message')}"
            )
        self.capabilities = reply.get("payload", {})
        if self.capabilities.get("version") != PROTOCOL_VERSION:
            self.close()
            raise SidecarUnavailable(
                f"protocol version mismatch: {self.capabilities.get('version')!r}"
            )
        return self.capabilities

    def close(self):
        if self._proc is not None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.terminate()
                self._proc.wait(timeout=5)
            except Exception:
                try:
                    self._proc.kill()
                except Exception:
                    pass
            self._proc = None

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc_info):
        self.close()

    # -- wire -------------------------------------------------------------

    def _take_id(self) -> int:
        with self._lock:
            self._next_id += 1
            return self._next_id

    def _write(self, frame: dict) -> int:
        proc = self._proc
        if proc is None or proc.stdin is None or proc.poll() is not None:
            raise TransportError("sidecar process is not running")
        try:
            proc.stdin.write((json.dumps(frame) + "\n").encode("utf-8"))
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"sidecar stdin closed: {exc}") from exc
        return frame["id"]

    def _read_loop(self):
        proc = self._proc
        assert proc is not None and proc.stdout is not None
        for raw in proc.stdout:
            self._lines.put(raw)
        self._lines.put(None)  # EOF marker

    def _read_reply(self, expect_id: int, timeout_s: Optional[float] = None) -> dict:
        timeout_s = self.read_timeout_s if timeout_s is None else timeout_s
        while True:
            try:
                raw = self._lines.get(timeout=timeout_s)
            except queue.Empty:
                raise TransportError(
                    f"sidecar read deadline ({timeout_s}s) expired waiting for id {expect_id}"
                )
            if raw is None:
                raise TransportError("sidecar closed its stdout mid-request")
            try:
                reply = json.loads(raw)
            except json.JSONDecodeError:
                continue  # tolerate stray diagnostics on stdout
            if reply.get("id") != expect_id:
                raise TransportError(
                    f"FIFO violation: expected reply id {expect_id}, got {reply.get('id')}"
                )
            return reply

    def roundtrip(self, op: str, payload: dict) -> dict:
        """One request/reply; raises TransportError on error replies."""
        request_id = self._write({"op": op, "id": self._take_id(), "payload": payload})
        reply = self._read_reply(request_id)
        if not reply.get("ok"):
            error = reply.get("error", {})
            raise TransportError(f"sidecar error {error.get('code')}: {error.get('message')}")
        return reply.get("payload", {})

    def pipeline(self, requests: Sequence[tuple[str, dict]]) -> list[dict]:
        """Write all requests, then read all replies in FIFO id order."""
        ids = [self._write({"op": op, "id": self._take_id(), "payload": payload})
               for op, payload in requests]
        replies = []
        for request_id in ids:
            reply = self._read_reply(request_id)
            if not reply.get("ok"):
                error = reply.get("error", {})
                raise TransportError(
                    f"sidecar error {error.get('code')}: {error.get('message')}"
                )
            replies.append(reply.get("payload", {}))
        return replies

    # -- model ops ----------------------------------------------------------

    def model_id(self, kind: str) -> str:
        if self.capabilities is None:
            raise SidecarUnavailable("sidecar not started")
        return str((self.capabilities.get("model_ids") or {}).get(kind, "unknown"))

    def embed(self, frames: Sequence[np.ndarray]) -> list[list[float]]:
        if self.capabilities is None:
            raise SidecarUnavailable("sidecar not started")
        payload = {"frames_b64": [encode_frame_jpeg_b64(f) for f in frames]}
        vectors = self.roundtrip("embed", payload).get("vectors", [])
        dim = int(self.capabilities.get("embedding_dim", 0))
        for v in vectors:
            if dim and len(v) != dim:
                raise TransportError(
                    f"sidecar returned a {len(v)}-dim vector, handshake said {dim}"
                )
        return vectors

    def shot_scores(self, frames: Sequence[np.ndarray]) -> list[float]:
        if self.capabilities is None:
            raise SidecarUnavailable("sidecar not started")
        if not self.capabilities.get("supports_shot_scores", False):
            raise SidecarUnavailable("sidecar does not support shot scoring")
        payload = {"frames_b64": [encode_frame_jpeg_b64(f) for f in frames]}
        return [float(s) for s in self.roundtrip("shot_scores", payload).get("scores", [])]
