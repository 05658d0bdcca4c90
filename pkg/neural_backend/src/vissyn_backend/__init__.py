"""Reference neural backend for the visual-syntax evaluation harness.

Implements the harness' external-backend wire protocol with two toy
models: a patch-grid part detector and a ViT-style masked autoencoder
trained on syntactically correct scenes only. Talks to the harness purely
through the documented corpus formats and the stdin/stdout protocol.
"""

__version__ = "0.1.0"

from .models import MaskedAutoencoder, PatchDetector, detect_boxes
from .training import (
    DetectorConfig,
    TrainingConfig,
    TrainingDiverged,
    load_detector,
    load_reconstructor,
    train_detector,
    train_reconstructor,
)

__all__ = [
    "__version__",
    "MaskedAutoencoder",
    "PatchDetector",
    "detect_boxes",
    "TrainingConfig",
    "DetectorConfig",
    "TrainingDiverged",
    "train_reconstructor",
    "train_detector",
    "load_reconstructor",
    "load_detector",
]
