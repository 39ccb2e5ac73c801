"""HTTP microservice returning score-distillation pixel gradients."""

__version__ = "0.1.0"

from .app import create_app

__all__ = ["create_app", "__version__"]
