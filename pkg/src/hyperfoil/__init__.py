"""Finite-difference Klein-Gordon-Zakharov and quasilinear wave/Klein-Gordon
simulator with hyperboloidal energy diagnostics."""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig, load_config, parse_config  # noqa: E402
from .grid import Field, Grid, NonFiniteFieldError  # noqa: E402

__all__ = ["ConfigError", "Field", "Grid", "NonFiniteFieldError", "RunConfig", "load_config", "parse_config",
           "__version__"]
