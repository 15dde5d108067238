"""Exception hierarchy shared across the package.

Every error the pipeline can raise derives from CxrError so callers (and
the CLI) can catch one type and still tell failure classes apart.
"""


class CxrError(Exception):
    """Base class for all cxrtriage errors."""


class ManifestError(CxrError):
    """Corpus manifest could not be read or violates its invariants."""


class DuplicateIdError(ManifestError):
    """Two manifest rows share the same sample id."""


class UnknownLabelError(ManifestError):
    """A label string is neither 'covid' nor 'normal'."""


class FoldPlanError(CxrError):
    """Requested cross-validation split is impossible or invalid."""


class ImageError(CxrError):
    """Image bytes could not be decoded or a tensor is malformed."""


class BackboneError(CxrError):
    """Backbone metadata or model file is missing or inconsistent."""


class ShapeMismatchError(BackboneError):
    """Declared tensor shapes disagree with the model graph."""


class CacheError(CxrError):
    """Feature-cache file is corrupt or unreadable."""


class TrainingError(CxrError):
    """Head training was misconfigured."""


class DivergenceError(TrainingError):
    """Training produced a non-finite loss."""


class EnsembleError(CxrError):
    """Ensemble members are inconsistent with each other or the input."""


class MetricsError(CxrError):
    """Metric computation received invalid counts, scores, or labels."""


class ConfigError(CxrError):
    """Pipeline configuration file or flags are invalid."""
