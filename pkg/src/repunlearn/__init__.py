"""Representation-level machine unlearning on small dense networks."""

from .kernels import backend

__version__ = "0.1.0"
__all__ = ["backend", "__version__"]
