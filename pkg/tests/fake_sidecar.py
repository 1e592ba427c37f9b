#!/usr/bin/env python3
"""Scripted fake model sidecar speaking the vps/1 stdio protocol.

Used by the core test suite so no real model process is ever needed.
Behavior is selected with FAKE_SIDECAR_MODE:
  ok        normal deterministic replies (default)
  mute      never answers anything (handshake timeout)
  hang      answers hello, then swallows every request (read deadline)
  die       answers hello, then exits mid-stream (crash containment)
  badversion  handshake reports an alien protocol version
  no_weights  handshake fails with model_unavailable
"""

import base64
import hashlib
import json
import os
import sys

EMBED_DIM = 16
MODE = os.environ.get("FAKE_SIDECAR_MODE", "ok")


def reply(frame_id, payload=None, error=None):
    if error is not None:
        out = {"id": frame_id, "ok": False, "error": error}
    else:
        out = {"id": frame_id, "ok": True, "payload": payload or {}}
    sys.stdout.write(json.dumps(out) + "\n")
    sys.stdout.flush()


def embed_vector(frame_b64: str):
    digest = hashlib.sha256(base64.b64decode(frame_b64)).digest()
    return [b / 255.0 for b in digest[:EMBED_DIM]]


def shot_score(a_b64: str, b_b64: str) -> float:
    return 0.02 if a_b64 == b_b64 else 0.97


def handle(frame: dict):
    op = frame.get("op")
    frame_id = frame.get("id")
    payload = frame.get("payload", {})

    if op == "hello":
        if MODE == "badversion":
            reply(frame_id, payload={"version": "vps/0", "embedding_dim": EMBED_DIM,
                                     "supports_shot_scores": True,
                                     "supports_transcribe": False,
                                     "model_ids": {}})
            return
        if MODE == "no_weights":
            reply(frame_id, error={"code": "model_unavailable",
                                   "message": "no weights on disk"})
            return
        reply(frame_id, payload={
            "version": "vps/1",
            "embedding_dim": EMBED_DIM,
            "supports_shot_scores": True,
            "supports_transcribe": False,
            "model_ids": {"embed": "fake-embed-v1", "shot": "fake-shot-v1"},
        })
        return

    if MODE == "hang":
        return  # swallow silently
    if MODE == "die":
        sys.exit(1)

    if op == "embed":
        frames = payload.get("frames_b64", [])
        if not frames:
            reply(frame_id, error={"code": "inference_error", "message": "no frames"})
            return
        reply(frame_id, payload={"vectors": [embed_vector(f) for f in frames]})
    elif op == "shot_scores":
        frames = payload.get("frames_b64", [])
        if len(frames) < 2:
            reply(frame_id, error={"code": "need_two_frames",
                                   "message": "shot scoring needs >= 2 frames"})
            return
        scores = [shot_score(frames[i - 1], frames[i]) for i in range(1, len(frames))]
        reply(frame_id, payload={"scores": scores})
    elif op == "transcribe":
        reply(frame_id, error={"code": "unsupported_op",
                               "message": "transcription not loaded"})
    else:
        reply(frame_id, error={"code": "unsupported_op", "message": str(op)})


def main():
    if MODE == "mute":
        sys.stdin.read()
        return
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            frame = json.loads(line)
        except json.JSONDecodeError:
            reply(None, error={"code": "bad_frame", "message": "unparseable frame"})
            continue
        handle(frame)


if __name__ == "__main__":
    main()
