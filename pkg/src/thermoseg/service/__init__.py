"""HTTP survey service: upload thermal images, run inference jobs, review results."""

from .app import create_app
from .config import ServiceConfig

__all__ = ["create_app", "ServiceConfig"]
