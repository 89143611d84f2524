"""Checkpoint export utility for the winseg encoder interchange format."""

__version__ = "0.1.0"

from .export import ExportSpec, export
from .verify import verify_export

__all__ = ["ExportSpec", "export", "verify_export"]
