"""Export torchvision CNN backbones as frozen ONNX feature extractors.

The classifier layers are removed; the exported graph ends at the flattened
global-average-pool features, and a JSON metadata sidecar records the input
contract (side 224, ImageNet channel statistics), the feature width, the
model file's sha256, and the exact weights revision.
"""

from .errors import ExportError, UnsupportedBackboneError, VerificationError, WeightsError
from .exporter import (
    DEFAULT_OPSET,
    IMAGENET_MEAN,
    IMAGENET_STD,
    INPUT_SIDE,
    SUPPORTED_BACKBONES,
    ExportRequest,
    ExportResult,
    VerifyCheck,
    VerifyReport,
    export_backbone,
    load_source_model,
    synthetic_batch,
    verify_export,
)

__all__ = [
    "DEFAULT_OPSET",
    "ExportError",
    "ExportRequest",
    "ExportResult",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "INPUT_SIDE",
    "SUPPORTED_BACKBONES",
    "UnsupportedBackboneError",
    "VerificationError",
    "VerifyCheck",
    "VerifyReport",
    "WeightsError",
    "export_backbone",
    "load_source_model",
    "synthetic_batch",
    "verify_export",
]

__version__ = "0.1.0"
