"""Model-serving sidecar for the sieve engine's service backend."""

from .app import create_app
from .config import CAPTIONER_REGISTRY, DEFAULT_ENCODER, SidecarConfig

__version__ = "0.1.0"

__all__ = [
    "CAPTIONER_REGISTRY",
    "DEFAULT_ENCODER",
    "SidecarConfig",
    "create_app",
    "__version__",
]
