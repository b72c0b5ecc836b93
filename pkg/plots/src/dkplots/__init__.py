"""Read-only figure scripts over simulation run outputs."""

from .dkf1 import FormatError, read_fields
from .figures import KINDS, FigureSpec, render
from .inputs import (
    InputError,
    read_diagnostics_csv,
    read_metadata,
    require_same_config,
)

__version__ = "0.1.0"

__all__ = [
    "FormatError",
    "read_fields",
    "KINDS",
    "FigureSpec",
    "render",
    "InputError",
    "read_diagnostics_csv",
    "read_metadata",
    "require_same_config",
    "__version__",
]
