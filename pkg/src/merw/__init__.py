"""Maximal entropy random walks on Z with a self-loop environment."""

from importlib.metadata import PackageNotFoundError, version as _version

from .env import NuSpec, make_environment
from .errors import HypothesisViolation, ModelError, NonConvergenceError

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "NuSpec",
    "make_environment",
    "ModelError",
    "HypothesisViolation",
    "NonConvergenceError",
    "__version__",
]
