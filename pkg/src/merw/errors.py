"""Exception types shared across the package."""


class ModelError(ValueError):
    """An ill-posed model: bad environment spec, violated hypothesis, bad window."""


class HypothesisViolation(ModelError):
    """The single-site law does not satisfy the boundedness / support hypothesis."""


class NonConvergenceError(RuntimeError):
    """A bracket or series failed to reach the requested tolerance."""
