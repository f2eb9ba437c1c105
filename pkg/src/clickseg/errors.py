"""Exception types shared across the package."""


class ClickOutOfBounds(ValueError):
    """A click falls outside the image it refers to."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class EmptyFeasibleSet(RuntimeError):
    """No ground-truth mask is consistent with the current click set."""


class NoErroneousPixels(RuntimeError):
    """Prediction equals ground truth; there is no error region to click."""


class SampleSkipped(RuntimeError):
    """A training sample cannot be used (e.g. augmentation emptied a mask)."""
