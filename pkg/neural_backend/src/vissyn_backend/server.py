"""Protocol server: line-delimited JSON over stdin/stdout.

One response per request, in order. Anything unparseable or unservable
gets an error response; the loop never dies on bad input. Reconstruction
locality is honored server-side: only the requested patches are replaced,
every other byte is copied from the request image.
"""

from __future__ import annotations

import json
import sys

import numpy as np
import torch

from .models import detect_boxes
from .pnm import image_from_b64, image_to_b64
from .training import load_detector, load_reconstructor

PROTOCOL_VERSION = 1


class BackendState:
    def __init__(self, mae_path: str, detector_path: str):
        self.mae, self.mae_meta = load_reconstructor(mae_path)
        self.detector, self.det_meta = load_detector(detector_path)
        self.patch_size = int(self.mae_meta["patch_size"])

    def handle(self, request: dict) -> dict:
        request_id = request.get("id")
        try:
            op = request.get("op")
            if op == "handshake":
                return self._handshake(request)
            if op == "detect":
                return self._detect(request)
            if op == "reconstruct":
                return self._reconstruct(request)
            return {"id": request_id, "status": "error", "error": f"unsupported op {op!r}"}
        except Exception as exc:  # noqa: BLE001 - protocol servers must not die
            return {
                "id": request_id,
                "status": "error",
                "error": f"{type(exc).__name__}: {exc}",
            }

    def _handshake(self, request: dict) -> dict:
        request_id = request.get("id")
        version = request.get("protocol_version")
        if version != PROTOCOL_VERSION:
            return {
                "id": request_id,
                "status": "error",
                "error": f"unsupported protocol version {version!r}",
            }
        patch_size = request.get("patch_size")
        if patch_size != self.patch_size:
            return {
                "id": request_id,
                "status": "error",
                "error": f"this backend serves patch size {self.patch_size}, not {patch_size!r}",
            }
        return {
            "id": request_id,
            "status": "ok",
            "protocol_version": PROTOCOL_VERSION,
            "patch_size": self.patch_size,
            "backend": "vissyn-neural-backend",
        }

    def _decode_image(self, request: dict) -> np.ndarray:
        payload = request.get("image")
        if not isinstance(payload, str):
            raise ValueError("missing image payload")
        return image_from_b64(payload)

    def _detect(self, request: dict) -> dict:
        pixels = self._decode_image(request)
        tensor = torch.from_numpy(pixels).float() / 255.0
        detections = detect_boxes(
            self.detector,
            tensor,
            self.det_meta["vocabulary"],
            threshold=float(self.det_meta.get("score_threshold", 0.5)),
        )
        return {"id": request.get("id"), "status": "ok", "detections": detections}

    def _reconstruct(self, request: dict) -> dict:
        pixels = self._decode_image(request)
        h, w = pixels.shape[:2]
        p = self.patch_size
        if h % p or w % p:
            raise ValueError(f"image {w}x{h} does not align to patch size {p}")
        n_patches = (h // p) * (w // p)
        masked = request.get("masked_patches", [])
        if not isinstance(masked, list):
            raise ValueError("masked_patches must be a list of indices")
        indices = sorted(set(int(i) for i in masked))
        if indices and (indices[0] < 0 or indices[-1] >= n_patches):
            raise ValueError(f"masked patch index outside the {n_patches}-patch grid")
        if not indices:
            return {"id": request.get("id"), "status": "ok", "image": request["image"]}
        tensor = torch.from_numpy(pixels).float() / 255.0
        filled = self.mae.fill_patches(tensor, indices)
        out = pixels.copy()
        cols = w // p
        filled_np = (filled.numpy() * 255.0).round().astype(np.uint8)
        for index in indices:
            row, col = divmod(index, cols)
            out[row * p : (row + 1) * p, col * p : (col + 1) * p] = filled_np[
                row * p : (row + 1) * p, col * p : (col + 1) * p
            ]
        return {"id": request.get("id"), "status": "ok", "image": image_to_b64(out)}


def serve(mae_path: str, detector_path: str, stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    state = BackendState(mae_path, detector_path)

    def respond(obj: dict) -> None:
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request is not an object")
        except ValueError as exc:
            respond({"id": None, "status": "error", "error": f"malformed request: {exc}"})
            continue
        respond(state.handle(request))
