"""Payload-level deep packet inspection with a byte-token transformer encoder."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
