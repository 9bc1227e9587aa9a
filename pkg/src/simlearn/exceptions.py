"""Exception types raised across the package."""


class InvalidLinkError(ValueError):
    """The link function has no usable information exponent."""


class DegenerateInputError(ValueError):
    """Input is numerically degenerate (zero matrix, zero step, ...)."""


class ResourceLimitError(MemoryError):
    """A dense allocation would exceed the configured entry cap."""
