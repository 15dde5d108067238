"""Error taxonomy for the backbone export tool."""


class ExportError(Exception):
    """Base class for everything this tool raises on purpose."""


class UnsupportedBackboneError(ExportError):
    """The requested architecture is not in the supported set."""


class WeightsError(ExportError):
    """Pretrained weights could not be downloaded or a local file is unusable."""


class VerificationError(ExportError):
    """An exported model failed its post-export checks."""
