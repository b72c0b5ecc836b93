"""Configuration, persistence, ensemble execution, and the CLI."""

from .config import CouplingConfig, RunConfig, initial_profile  # noqa: F401
from .io import (  # noqa: F401
    read_diagnostics_csv,
    read_fields,
    read_metadata,
    write_diagnostics_csv,
    write_fields,
    write_metadata,
)
