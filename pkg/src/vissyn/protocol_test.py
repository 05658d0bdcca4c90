"""Golden-transcript conformance checks for external backends.

A transcript is a JSONL file of steps:

  {"send": {...}}                 write one protocol message
  {"send_raw": "..."}             write one raw (possibly malformed) line
  {"expect": {...}, "volatile": [...], "image_check": "locality"}
                                  read one response and validate it

Every key in "expect" must match the response exactly. Keys named in
"volatile" may differ between backends and are schema-checked instead:
"detections" must be a well-formed detection list, "image" a decodable
canonical image, "error" a non-empty string. image_check "locality"
verifies the reconstruction against the most recent reconstruct request:
same dimensions and bit-identical bytes outside the masked patches.
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import subprocess
import threading
from pathlib import Path

from .errors import BackendError
from .geometry import PatchGrid
from .raster import from_p6

DEFAULT_TIMEOUT = 30.0


class RawProtocolSession:
    """Line-level protocol access, including intentionally broken lines."""

    def __init__(self, command: str | list[str], timeout: float = DEFAULT_TIMEOUT):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self.proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=None
            )
        except OSError as exc:
            raise BackendError(f"cannot spawn backend {argv!r}: {exc}") from exc
        self.timeout = timeout
        self._lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()

    def _pump(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def send_line(self, line: str) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.write(line.encode("utf-8") + b"\n")
        self.proc.stdin.flush()

    def recv(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise BackendError(f"backend timed out after {self.timeout}s") from None
        if line is None:
            raise BackendError("backend closed its output mid-session")
        try:
            doc = json.loads(line.decode("utf-8"))
            if not isinstance(doc, dict):
                raise ValueError("response is not an object")
        except (ValueError, UnicodeDecodeError) as exc:
            raise BackendError(f"malformed message from backend: {line!r} ({exc})") from exc
        return doc

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        except OSError:
            pass


def load_transcript(path: str | Path) -> list[dict]:
    steps = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        try:
            steps.append(json.loads(raw))
        except json.JSONDecodeError as exc:
            raise BackendError(f"{path}:{lineno}: bad transcript line: {exc}") from exc
    return steps


def _check_detections(value: object, failures: list[str], where: str) -> None:
    if not isinstance(value, list):
        failures.append(f"{where}: detections is not a list")
        return
    for i, det in enumerate(value):
        if not isinstance(det, dict):
            failures.append(f"{where}: detection #{i} is not an object")
            continue
        box = det.get("box")
        if not (isinstance(box, list) and len(box) == 4):
            failures.append(f"{where}: detection #{i} box is not a 4-list")
        elif not (box[0] < box[2] and box[1] < box[3] and min(box) >= 0):
            failures.append(f"{where}: detection #{i} box {box} is not a valid region")
        if not isinstance(det.get("label"), str) or not det.get("label"):
            failures.append(f"{where}: detection #{i} label missing")
        score = det.get("score")
        if not isinstance(score, (int, float)) or not 0 <= score <= 1:
            failures.append(f"{where}: detection #{i} score {score!r} outside [0, 1]")


def _check_image(
    value: object,
    failures: list[str],
    where: str,
    mode: str | None,
    last_reconstruct: dict | None,
    patch_size: int,
) -> None:
    if not isinstance(value, str):
        failures.append(f"{where}: image payload is not a string")
        return
    try:
        image = from_p6(base64.b64decode(value.encode("ascii"), validate=True))
    except Exception as exc:
        failures.append(f"{where}: image payload undecodable: {exc}")
        return
    if mode is None or last_reconstruct is None:
        return
    request_image = from_p6(
        base64.b64decode(last_reconstruct["image"].encode("ascii"), validate=True)
    )
    if (image.width, image.height) != (request_image.width, request_image.height):
        failures.append(
            f"{where}: reconstruction is {image.width}x{image.height}, "
            f"request was {request_image.width}x{request_image.height}"
        )
        return
    if mode == "echo":
        if image != request_image:
            failures.append(f"{where}: echo reconstruction differs from request image")
        return
    if mode == "locality":
        masked = set(last_reconstruct.get("masked_patches", []))
        grid = PatchGrid(image.width, image.height, patch_size)
        p = patch_size
        for index in range(grid.patch_count):
            if index in masked:
                continue
            row, col = divmod(index, grid.cols)
            a = image.pixels[row * p : (row + 1) * p, col * p : (col + 1) * p]
            b = request_image.pixels[row * p : (row + 1) * p, col * p : (col + 1) * p]
            if not (a == b).all():
                failures.append(f"{where}: unmasked patch {index} was modified")
        return
    failures.append(f"{where}: unknown image_check mode {mode!r}")


def run_transcript(
    command: str | list[str],
    transcript: list[dict],
    patch_size: int = 16,
    timeout: float = DEFAULT_TIMEOUT,
) -> list[str]:
    """Replay one transcript; returns a list of conformance failures."""
    failures: list[str] = []
    session = RawProtocolSession(command, timeout=timeout)
    last_reconstruct: dict | None = None
    try:
        for i, step in enumerate(transcript):
            where = f"step {i}"
            if "send" in step:
                message = step["send"]
                if message.get("op") == "reconstruct":
                    last_reconstruct = message
                session.send_line(json.dumps(message))
            elif "send_raw" in step:
                session.send_line(step["send_raw"])
            elif "expect" in step:
                try:
                    response = session.recv()
                except BackendError as exc:
                    failures.append(f"{where}: {exc}")
                    break
                volatile = set(step.get("volatile", []))
                for key, expected in step["expect"].items():
                    if response.get(key) != expected:
                        failures.append(
                            f"{where}: field {key!r} is {response.get(key)!r}, "
                            f"expected {expected!r}"
                        )
                if "detections" in volatile:
                    _check_detections(response.get("detections"), failures, where)
                if "image" in volatile:
                    _check_image(
                        response.get("image"),
                        failures,
                        where,
                        step.get("image_check"),
                        last_reconstruct,
                        patch_size,
                    )
                if "error" in volatile:
                    err = response.get("error")
                    if not isinstance(err, str) or not err:
                        failures.append(f"{where}: error field missing or empty")
            else:
                failures.append(f"{where}: transcript step has no send/send_raw/expect")
    finally:
        session.close()
    return failures


def run_golden_suite(
    command: str | list[str],
    golden_dir: str | Path,
    patch_size: int = 16,
    timeout: float = DEFAULT_TIMEOUT,
) -> dict[str, list[str]]:
    """Replay every *.jsonl transcript under golden_dir; returns failures per file."""
    golden_dir = Path(golden_dir)
    paths = sorted(golden_dir.glob("*.jsonl"))
    if not paths:
        raise BackendError(f"no golden transcripts under {golden_dir}")
    results = {}
    for path in paths:
        results[path.name] = run_transcript(
            command, load_transcript(path), patch_size=patch_size, timeout=timeout
        )
    return results
