"""Grant-free NOMA link-level simulator and multi-user detection workbench."""

__version__ = "0.1.0"

from .backend import BACKEND  # noqa: F401
