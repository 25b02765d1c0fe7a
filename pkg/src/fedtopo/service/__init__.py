"""HTTP control plane: a FastAPI app wrapping the run engine and repository."""
from .app import create_app

__all__ = ["create_app"]
