"""Integration against the real TypeScript sidecar (sidecar/dist).

These tests exercise the same client paths as the fake-sidecar suite but
over the actual reference implementation; they are skipped when the
sidecar package has not been built (`cd sidecar && npm test` builds it).
The primary suite never requires them to pass for its own acceptance.
"""

import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from mmverify.errors import TransportError
from mmverify.sidecar import SidecarClient, encode_frame_jpeg_b64

SIDECAR_MAIN = Path(__file__).parent.parent / "sidecar" / "dist" / "main.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not SIDECAR_MAIN.exists(),
    reason="reference sidecar not built (run `npm test` in sidecar/)",
)


def real_client(**kwargs) -> SidecarClient:
    return SidecarClient(["node", str(SIDECAR_MAIN)], **kwargs)


def solid(rgb, w=32, h=24):
    frame = np.zeros((h, w, 3), np.uint8)
    frame[:, :] = rgb
    return frame


def test_real_handshake():
    with real_client() as client:
        caps = client.capabilities
        assert caps["version"] == "vps/1"
        assert caps["embedding_dim"] > 0
        assert caps["supports_shot_scores"] is True
        assert client.model_id("embed") == "toy-embed-v1"


def test_real_embed_and_shot_scores():
    with real_client() as client:
        red, blue = solid((230, 20, 20)), solid((20, 20, 230))
        vectors = client.embed([red, red])
        assert vectors[0] == vectors[1]
        assert len(vectors[0]) == client.capabilities["embedding_dim"]
        scores = client.shot_scores([red, blue])
        assert scores[0] > 0.9
        same = client.shot_scores([red, red])
        assert same[0] < 0.1


def test_real_100_pipelined_requests_fifo():
    with real_client() as client:
        red = encode_frame_jpeg_b64(solid((230, 20, 20)))
        blue = encode_frame_jpeg_b64(solid((20, 20, 230)))
        requests = []
        for i in range(100):
            if i % 2 == 0:
                requests.append(("embed", {"frames_b64": [red]}))
            else:
                requests.append(("shot_scores", {"frames_b64": [red, blue]}))
        replies = client.pipeline(requests)
        assert len(replies) == 100
        for i, payload in enumerate(replies):
            assert ("vectors" if i % 2 == 0 else "scores") in payload


def test_real_kill_mid_stream_is_transport_error_not_hang():
    client = real_client()
    client.start()
    try:
        started = time.monotonic()
        client._proc.kill()
        with pytest.raises(TransportError):
            client.embed([solid((5, 5, 5))])
        assert time.monotonic() - started < 35.0
    finally:
        client.close()


def test_pipeline_media_stage_with_real_sidecar(tmp_path):
    from conftest import build_golden_case
    from mmverify.pipeline import PipelineConfig, run_case
    from mmverify.embedding import EmbedderConfig
    from mmverify.shots import ShotDetectorConfig

    case_dir = build_golden_case(tmp_path)
    config = PipelineConfig(
        offline=True,
        embedder=EmbedderConfig(embedder="sidecar"),
        shot=ShotDetectorConfig(detector="sidecar", boundary_threshold=0.5),
        sidecar_cmd=f"node {SIDECAR_MAIN}",
    )
    status = run_case(case_dir, config, stages=frozenset({"media"}))
    assert status.stage == "media_done"
    assert not status.human_review_required
    assert (case_dir / "keyframes.json").exists()
