"""Visual syntax checking for part-composed images.

The toolkit treats an image as a spatial arrangement of labeled parts and
verifies that arrangement in three stages: detect the parts, mask and
reconstruct each one in sequence with a backend that only ever saw correct
arrangements, then compare original and reconstructed detections location
by location. It ships a synthetic scene generator, a perturbation engine
for building incorrect test data, grammar-driven reference backends, a
line-protocol client for external model backends, and a balanced-accuracy
evaluation harness.
"""

__version__ = "0.1.0"

from .checker import SyntaxIssue, SyntaxVerdict, check_syntax, explain
from .errors import (
    BackendError,
    GenerationError,
    MetricsError,
    ValidationError,
    VissynError,
)
from .geometry import BBox, Detection, PatchGrid, iou, nms, patches_for_box
from .grammar import ContainerFrame, Grammar, PartSlot, instantiate_layout, load_grammar
from .metrics import ConfusionMatrix, MetricSummary, accumulate, report, summarize
from .pipeline import PipelineConfig, PipelineTrace, evaluate_corpus, run_pipeline
from .raster import RasterImage, read_image, write_image
from .synthcorpus import JitterSpec, PerturbationRecord, SceneAnnotation, generate_scene

__all__ = [
    "__version__",
    "BBox",
    "Detection",
    "PatchGrid",
    "iou",
    "nms",
    "patches_for_box",
    "Grammar",
    "PartSlot",
    "ContainerFrame",
    "instantiate_layout",
    "load_grammar",
    "RasterImage",
    "read_image",
    "write_image",
    "JitterSpec",
    "SceneAnnotation",
    "PerturbationRecord",
    "generate_scene",
    "SyntaxIssue",
    "SyntaxVerdict",
    "check_syntax",
    "explain",
    "ConfusionMatrix",
    "MetricSummary",
    "accumulate",
    "summarize",
    "report",
    "PipelineConfig",
    "PipelineTrace",
    "run_pipeline",
    "evaluate_corpus",
    "VissynError",
    "ValidationError",
    "GenerationError",
    "BackendError",
    "MetricsError",
]
