"""Reference embedding provider for the cwsd HTTP protocol."""

from .encoder import MlmEncoder
from .server import create_app

__version__ = "0.1.0"

__all__ = ["MlmEncoder", "create_app", "__version__"]
