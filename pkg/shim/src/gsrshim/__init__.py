"""Reference HTTP server for the embedding / grounding / explainer protocol."""
from .app import create_app
from .config import ShimConfig
from .server import serve

__version__ = "0.1.0"

__all__ = ["ShimConfig", "create_app", "serve"]
