"""Binary chest-radiograph triage with frozen extractors and bagged softmax heads.

Pipeline: manifest -> stratified k-fold plan -> per-fold augmentation and
feature extraction -> per-member softmax heads trained by mini-batch SGD ->
majority-vote ensemble -> diagnostic metrics (accuracy, sensitivity,
specificity, precision, NPV, F1, FPR, ROC/AUC, Wilson CI) pooled and
per-fold.
"""

from ._version import __version__
from .ensemble import EnsembleDefinition, VoteRecord, majority_vote, predict_ensemble, vote
from .errors import (
    BackboneError,
    CacheError,
    ConfigError,
    CxrError,
    DivergenceError,
    DuplicateIdError,
    EnsembleError,
    FoldPlanError,
    ImageError,
    ManifestError,
    MetricsError,
    ShapeMismatchError,
    TrainingError,
    UnknownLabelError,
)
from .extractor import (
    BackboneSpec,
    FeatureCache,
    FeatureMatrix,
    LoadedBackbone,
    extract,
    extract_cached,
    load_backbone,
    load_features,
    save_features,
    toypool_spec,
)
from .head import (
    CLASS_ORDER,
    Prediction,
    SoftmaxHead,
    TrainConfig,
    forward,
    init_head,
    loss_and_grad,
    train,
)
from .imageproc import (
    AugmentConfig,
    augment,
    build_affine,
    decode_image,
    decode_resize,
    denormalize,
    invert_affine,
    normalize,
    resize_bilinear,
    warp_affine,
)
from .manifest import (
    FoldPlan,
    Label,
    Manifest,
    SampleRecord,
    load_manifest,
    plan_folds,
    save_manifest,
)
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    RocCurve,
    accuracy_ci,
    auc,
    basic_metrics,
    confusion,
    evaluate,
    roc_curve,
)
from .pipeline import (
    FoldResult,
    PipelineConfig,
    RunSummary,
    extract_corpus,
    report,
    run_pipeline,
    summary_from_json,
)
from .rng import SplitMix64, derive_seed
from .synth import make_synthetic_corpus

__all__ = [
    "__version__",
    "AugmentConfig",
    "BackboneError",
    "BackboneSpec",
    "CLASS_ORDER",
    "CacheError",
    "ConfigError",
    "ConfusionCounts",
    "CxrError",
    "DivergenceError",
    "DuplicateIdError",
    "EnsembleDefinition",
    "EnsembleError",
    "FeatureCache",
    "FeatureMatrix",
    "FoldPlan",
    "FoldPlanError",
    "FoldResult",
    "ImageError",
    "Label",
    "LoadedBackbone",
    "Manifest",
    "ManifestError",
    "MetricsError",
    "MetricsReport",
    "PipelineConfig",
    "Prediction",
    "RocCurve",
    "RunSummary",
    "SampleRecord",
    "ShapeMismatchError",
    "SoftmaxHead",
    "SplitMix64",
    "TrainConfig",
    "TrainingError",
    "UnknownLabelError",
    "VoteRecord",
    "accuracy_ci",
    "auc",
    "augment",
    "basic_metrics",
    "build_affine",
    "confusion",
    "decode_image",
    "decode_resize",
    "denormalize",
    "derive_seed",
    "evaluate",
    "extract",
    "extract_cached",
    "extract_corpus",
    "forward",
    "init_head",
    "invert_affine",
    "load_backbone",
    "load_features",
    "load_manifest",
    "loss_and_grad",
    "majority_vote",
    "make_synthetic_corpus",
    "normalize",
    "plan_folds",
    "predict_ensemble",
    "report",
    "resize_bilinear",
    "roc_curve",
    "run_pipeline",
    "save_features",
    "save_manifest",
    "summary_from_json",
    "toypool_spec",
    "train",
    "vote",
    "warp_affine",
]
