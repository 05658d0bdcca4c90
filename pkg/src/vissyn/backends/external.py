"""Client for external detector/reconstructor child processes.

The wire protocol is UTF-8 line-delimited JSON over the child's stdin and
stdout: one request per line, one response per request, strictly in order
(see docs/protocol.md). A session talks to one child and allows a single
in-flight request; use BackendPool for concurrency.
"""

from __future__ import annotations

import base64
import json
import os
import queue
import shlex
import subprocess
import threading

from ..errors import BackendError
from ..geometry import BBox, Detection
from ..grammar import ContainerFrame
from ..raster import RasterImage, from_p6

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 60.0


def encode_image(image: RasterImage) -> str:
    return base64.b64encode(image.to_p6()).decode("ascii")


def decode_image(payload: str) -> RasterImage:
    try:
        return from_p6(base64.b64decode(payload.encode("ascii"), validate=True))
    except Exception as exc:
        raise BackendError(f"backend returned an undecodable image: {exc}") from exc


def _parse_detections(raw: object) -> list[Detection]:
    if not isinstance(raw, list):
        raise BackendError(f"backend 'detections' must be a list, got {type(raw).__name__}")
    dets = []
    for item in raw:
        try:
            dets.append(
                Detection(
                    box=BBox(*[float(v) for v in item["box"]]),
                    label=str(item["label"]),
                    score=float(item["score"]),
                )
            )
        except Exception as exc:
            raise BackendError(f"backend returned a malformed detection {item!r}: {exc}") from exc
    return dets


class ExternalBackend:
    """One child process speaking the backend protocol.

    Satisfies both the detector and reconstructor contracts. The child is
    spawned lazily; the first exchange is a handshake that must agree on
    protocol version and patch size.
    """

    def __init__(
        self,
        command: str | list[str],
        patch_size: int = 16,
        timeout: float = DEFAULT_TIMEOUT,
        env: dict[str, str] | None = None,
    ):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.patch_size = patch_size
        self.timeout = timeout
        self.env = env
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._next_id = 0
        self._lock = threading.Lock()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        with self._lock:
            if self._proc is not None:
                return
            try:
                self._proc = subprocess.Popen(
                    self.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    stderr=None,  # inherit: backend diagnostics stay visible
                    env={**os.environ, **self.env} if self.env else None,
                )
            except OSError as exc:
                raise BackendError(f"cannot spawn backend {self.command!r}: {exc}") from exc
            reader = threading.Thread(target=self._read_stdout, daemon=True)
            reader.start()
        self._handshake()

    def _read_stdout(self) -> None:
        proc = self._proc
        assert proc is not None and proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
            proc.terminate()
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        except OSError:
            pass

    def __enter__(self) -> "ExternalBackend":
        self.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- protocol ----------------------------------------------------------

    def _handshake(self) -> None:
        reply = self._request(
            {
                "op": "handshake",
                "protocol_version": PROTOCOL_VERSION,
                "patch_size": self.patch_size,
            }
        )
        version = reply.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise BackendError(
                f"protocol version mismatch: client speaks {PROTOCOL_VERSION}, "
                f"backend answered {version!r}"
            )
        if reply.get("patch_size") != self.patch_size:
            raise BackendError(
                f"backend patch size {reply.get('patch_size')!r} does not match "
                f"client patch size {self.patch_size}"
            )

    def _request(self, payload: dict) -> dict:
        if self._proc is None:
            self.start()
        return self._exchange(payload)

    def _exchange(self, payload: dict) -> dict:
        with self._lock:
            proc = self._proc
            if proc is None or proc.stdin is None:
                raise BackendError("backend session is closed")
            self._next_id += 1
            request_id = self._next_id
            message = dict(payload, id=request_id)
            try:
                proc.stdin.write(json.dumps(message).encode("utf-8") + b"\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise BackendError(f"backend {self.command[0]!r} pipe closed: {exc}") from exc
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                self.close()
                raise BackendError(
                    f"backend {self.command[0]!r} timed out after {self.timeout}s"
                ) from None
            if line is None:
                code = proc.poll()
                raise BackendError(
                    f"backend {self.command[0]!r} closed its output (exit code {code})"
                )
            try:
                reply = json.loads(line.decode("utf-8"))
                if not isinstance(reply, dict):
                    raise ValueError("response is not an object")
            except (ValueError, UnicodeDecodeError) as exc:
                raise BackendError(
                    f"malformed message from backend: {line!r} ({exc})"
                ) from exc
            if reply.get("id") != request_id:
                raise BackendError(
                    f"backend answered id {reply.get('id')!r} to request id {request_id}"
                )
            if reply.get("status") == "error":
                raise BackendError(f"backend error: {reply.get('error')!r}")
            if reply.get("status") != "ok":
                raise BackendError(f"backend response without status: {reply!r}")
            return reply

    # -- contracts ---------------------------------------------------------

    def detect(self, image: RasterImage) -> list[Detection]:
        reply = self._request({"op": "detect", "image": encode_image(image)})
        return _parse_detections(reply.get("detections"))

    def reconstruct(
        self,
        image: RasterImage,
        masked_patches: set[int],
        hints: ContainerFrame | None = None,
    ) -> RasterImage:
        payload = {
            "op": "reconstruct",
            "image": encode_image(image),
            "masked_patches": sorted(int(i) for i in masked_patches),
            "hints": {"frame": list(hints.box.as_tuple())} if hints is not None else None,
        }
        reply = self._request(payload)
        out = decode_image(reply.get("image", ""))
        if (out.width, out.height) != (image.width, image.height):
            raise BackendError(
                f"backend reconstruct changed image size to {out.width}x{out.height}"
            )
        return out


class BackendPool:
    """Fixed pool of backend sessions, handed out one caller at a time."""

    def __init__(
        self,
        command: str | list[str],
        size: int = 1,
        patch_size: int = 16,
        timeout: float = DEFAULT_TIMEOUT,
    ):
        if size < 1:
            raise BackendError("pool size must be >= 1")
        self._sessions: queue.Queue = queue.Queue()
        self._all: list[ExternalBackend] = []
        for _ in range(size):
            session = ExternalBackend(command, patch_size=patch_size, timeout=timeout)
            self._all.append(session)
            self._sessions.put(session)

    def acquire(self) -> ExternalBackend:
        return self._sessions.get()

    def release(self, session: ExternalBackend) -> None:
        self._sessions.put(session)

    def close(self) -> None:
        for session in self._all:
            session.close()

    def __enter__(self) -> "BackendPool":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
