"""Exception and warning types shared across the package."""


class ConfigurationError(ValueError):
    """Inputs are inconsistent (dimension mismatch, index out of a window, bad config)."""


class TruncationError(ValueError):
    """A finite basis or grid does not capture enough of the object being represented."""

    def __init__(self, message: str, captured: float):
        super().__init__(f"{message} (captured weight {captured:.10g})")
        self.captured = captured


class IntegrationError(RuntimeError):
    """A fixed-step integration drifted beyond its accuracy contract."""


class LeakageWarning(UserWarning):
    """Population reached the edge of a truncated Fock window."""


class AccuracyWarning(UserWarning):
    """A derived quantity may be inaccurate because of truncation."""
