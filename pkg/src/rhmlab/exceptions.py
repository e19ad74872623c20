"""Exception hierarchy shared across the package."""


class RhmError(Exception):
    """Base class for all rhmlab errors."""


class ParameterError(RhmError, ValueError):
    """Model parameters violate a structural constraint."""


class ValidationError(RhmError, ValueError):
    """A tree or dataset is inconsistent with its grammar."""


class ImpossibleContextError(RhmError):
    """The observed window has zero probability under the grammar."""


class SizeError(RhmError):
    """An exact computation would exceed its configured size cap."""


class DegenerateDataError(RhmError):
    """Not enough distinct observations to support the requested clustering."""


class FitWindowError(RhmError):
    """No usable fit window (floor overestimated or curve converged)."""


class ConfigError(RhmError, ValueError):
    """Invalid experiment configuration."""


class ArtifactError(RhmError):
    """Result artifacts cannot be combined (version or integrity mismatch)."""
