"""Exception types shared across the package."""


class NonFiniteError(FloatingPointError):
    """A loss, gradient or parameter became NaN/inf."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConfigError(ValueError):
    """Invalid run / sweep configuration."""


class NoValidWindowError(ValueError):
    """No sequence window satisfies the validity mask."""


class StaleBatchError(RuntimeError):
    """A minibatch was used outside the update it was drawn for."""


class SweepError(RuntimeError):
    """A sweep finished without a single successful trial."""
