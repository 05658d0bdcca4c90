import io
import json

import numpy as np
import pytest

from vissyn_backend.pnm import decode_p6, encode_p6, image_from_b64, image_to_b64
from vissyn_backend.server import BackendState, serve


def gradient_image(size=96):
    px = np.zeros((size, size, 3), dtype=np.uint8)
    for y in range(size):
        for x in range(size):
            px[y, x] = ((x * 7) % 256, (y * 5) % 256, (x + y) % 256)
    return px


@pytest.fixture(scope="module")
def state(tiny_checkpoints):
    mae_path, det_path = tiny_checkpoints
    return BackendState(str(mae_path), str(det_path))


def test_p6_codec_round_trip():
    px = gradient_image(32)
    assert np.array_equal(decode_p6(encode_p6(px)), px)
    assert np.array_equal(image_from_b64(image_to_b64(px)), px)


def test_handshake_echoes_version_and_patch_size(state):
    reply = state.handle({"id": 1, "op": "handshake", "protocol_version": 1, "patch_size": 16})
    assert reply == {
        "id": 1,
        "status": "ok",
        "protocol_version": 1,
        "patch_size": 16,
        "backend": "vissyn-neural-backend",
    }


def test_handshake_rejects_wrong_version_and_patch(state):
    reply = state.handle({"id": 2, "op": "handshake", "protocol_version": 9, "patch_size": 16})
    assert reply["status"] == "error" and "version" in reply["error"]
    reply = state.handle({"id": 3, "op": "handshake", "protocol_version": 1, "patch_size": 8})
    assert reply["status"] == "error" and "patch size" in reply["error"]


def test_unknown_op_is_an_error(state):
    reply = state.handle({"id": 4, "op": "frobnicate"})
    assert reply["status"] == "error"
    assert reply["id"] == 4


def test_detect_returns_schema_valid_detections(state):
    reply = state.handle({"id": 5, "op": "detect", "image": image_to_b64(gradient_image())})
    assert reply["status"] == "ok"
    for det in reply["detections"]:
        x0, y0, x1, y1 = det["box"]
        assert 0 <= x0 < x1 and 0 <= y0 < y1
        assert 0.0 <= det["score"] <= 1.0
        assert isinstance(det["label"], str) and det["label"]


def test_reconstruct_empty_mask_echoes_payload(state):
    payload = image_to_b64(gradient_image())
    reply = state.handle(
        {"id": 6, "op": "reconstruct", "image": payload, "masked_patches": [], "hints": None}
    )
    assert reply["status"] == "ok"
    assert reply["image"] == payload


def test_reconstruct_locality_is_bit_exact(state):
    px = gradient_image()
    masked = [0, 7, 20]
    reply = state.handle(
        {
            "id": 7,
            "op": "reconstruct",
            "image": image_to_b64(px),
            "masked_patches": masked,
            "hints": None,
        }
    )
    assert reply["status"] == "ok"
    out = image_from_b64(reply["image"])
    assert out.shape == px.shape
    cols = px.shape[1] // 16
    changed = []
    for index in range(cols * (px.shape[0] // 16)):
        row, col = divmod(index, cols)
        a = out[row * 16 : row * 16 + 16, col * 16 : col * 16 + 16]
        b = px[row * 16 : row * 16 + 16, col * 16 : col * 16 + 16]
        if index in masked:
            if not np.array_equal(a, b):
                changed.append(index)
        else:
            assert np.array_equal(a, b), f"unmasked patch {index} modified"
    assert changed  # the autoencoder did repaint something


def test_reconstruct_rejects_out_of_grid_indices(state):
    reply = state.handle(
        {
            "id": 8,
            "op": "reconstruct",
            "image": image_to_b64(gradient_image()),
            "masked_patches": [999],
            "hints": None,
        }
    )
    assert reply["status"] == "error"
    assert "grid" in reply["error"]


def test_reconstruct_serves_other_grid_sizes(state):
    # position embeddings interpolate: a 32x32 request (2x2 grid) works
    px = gradient_image(32)
    reply = state.handle(
        {
            "id": 9,
            "op": "reconstruct",
            "image": image_to_b64(px),
            "masked_patches": [0, 3],
            "hints": None,
        }
    )
    assert reply["status"] == "ok"
    out = image_from_b64(reply["image"])
    assert out.shape == px.shape
    assert np.array_equal(out[0:16, 16:32], px[0:16, 16:32])  # patch 1 untouched


def test_serve_loop_survives_malformed_lines(tiny_checkpoints):
    mae_path, det_path = tiny_checkpoints
    requests = "\n".join(
        [
            json.dumps({"id": 1, "op": "handshake", "protocol_version": 1, "patch_size": 16}),
            "this is not json",
            json.dumps({"id": 2, "op": "detect", "image": image_to_b64(gradient_image())}),
        ]
    )
    stdout = io.StringIO()
    serve(str(mae_path), str(det_path), stdin=io.StringIO(requests + "\n"), stdout=stdout)
    replies = [json.loads(line) for line in stdout.getvalue().splitlines()]
    assert len(replies) == 3
    assert replies[0]["status"] == "ok"
    assert replies[1] == {
        "id": None,
        "status": "error",
        "error": replies[1]["error"],
    } and replies[1]["error"]
    assert replies[2]["status"] == "ok" and replies[2]["id"] == 2
