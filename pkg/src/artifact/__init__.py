"""Hypocoercive decay certificates for kinetic Fokker-Planck equations."""

from . import errors
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
