"""Pluggable detector/reconstructor backends.

A detector maps an image to labeled boxes; a reconstructor repaints a
requested set of grid patches and must leave every other pixel untouched.
Grammar-backed reference implementations live in .oracle; external child
processes speaking the line-delimited JSON protocol live in .external.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

from ..errors import BackendError
from ..geometry import Detection, PatchGrid
from ..grammar import ContainerFrame
from ..raster import RasterImage


@runtime_checkable
class Detector(Protocol):
    def detect(self, image: RasterImage) -> list[Detection]: ...


@runtime_checkable
class Reconstructor(Protocol):
    def reconstruct(
        self,
        image: RasterImage,
        masked_patches: set[int],
        hints: ContainerFrame | None = None,
    ) -> RasterImage: ...


class LocalityEnforcingReconstructor:
    """Wrapper that makes patch locality a hard guarantee.

    Whatever the inner backend returns, pixels outside the masked patches
    are overwritten with the input image's content, so the masking
    semantics hold regardless of backend quality.
    """

    def __init__(self, inner: Reconstructor, patch_size: int = 16):
        self.inner = inner
        self.patch_size = patch_size

    def reconstruct(
        self,
        image: RasterImage,
        masked_patches: set[int],
        hints: ContainerFrame | None = None,
    ) -> RasterImage:
        out = self.inner.reconstruct(image, masked_patches, hints)
        if (out.width, out.height) != (image.width, image.height):
            raise BackendError(
                f"reconstructor changed image size: {image.width}x{image.height} -> "
                f"{out.width}x{out.height}"
            )
        grid = PatchGrid(image.width, image.height, self.patch_size)
        enforced = image.mutable_copy()
        p = self.patch_size
        for index in masked_patches:
            row, col = divmod(index, grid.cols)
            enforced[row * p : (row + 1) * p, col * p : (col + 1) * p] = out.pixels[
                row * p : (row + 1) * p, col * p : (col + 1) * p
            ]
        return RasterImage(enforced)


class VocabularyCheckingDetector:
    """Wrapper rejecting detections whose labels fall outside a vocabulary."""

    def __init__(self, inner: Detector, vocabulary: tuple[str, ...]):
        self.inner = inner
        self.vocabulary = set(vocabulary)

    def detect(self, image: RasterImage) -> list[Detection]:
        dets = self.inner.detect(image)
        for det in dets:
            if det.label not in self.vocabulary:
                raise BackendError(f"backend returned unknown part label {det.label!r}")
        return dets


from .oracle import (  # noqa: E402
    OracleDetector,
    OracleReconstructor,
    oracle_detect,
    oracle_reconstruct,
)
from .external import ExternalBackend, BackendPool  # noqa: E402

__all__ = [
    "Detector",
    "Reconstructor",
    "LocalityEnforcingReconstructor",
    "VocabularyCheckingDetector",
    "OracleDetector",
    "OracleReconstructor",
    "oracle_detect",
    "oracle_reconstruct",
    "ExternalBackend",
    "BackendPool",
]
