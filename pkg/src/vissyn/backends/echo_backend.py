"""Identity test backend: detects nothing, reconstructs by echoing input.

Run with ``python -m vissyn.backends.echo_backend``. Useful for protocol
conformance tests and for exercising the pipeline plumbing end to end
without any model.
"""

from __future__ import annotations

import json
import sys

PROTOCOL_VERSION = 1


def _respond(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def serve(stdin=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request is not an object")
        except ValueError as exc:
            _respond({"id": None, "status": "error", "error": f"malformed request: {exc}"})
            continue
        request_id = request.get("id")
        op = request.get("op")
        if op == "handshake":
            _respond(
                {
                    "id": request_id,
                    "status": "ok",
                    "protocol_version": PROTOCOL_VERSION,
                    "patch_size": request.get("patch_size", 16),
                    "backend": "echo",
                }
            )
        elif op == "detect":
            _respond({"id": request_id, "status": "ok", "detections": []})
        elif op == "reconstruct":
            image = request.get("image")
            if not isinstance(image, str):
                _respond({"id": request_id, "status": "error", "error": "missing image payload"})
                continue
            _respond({"id": request_id, "status": "ok", "image": image})
        else:
            _respond({"id": request_id, "status": "error", "error": f"unsupported op {op!r}"})


def main() -> None:
    serve()


if __name__ == "__main__":
    main()
