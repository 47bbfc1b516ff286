"""
Deterministic rounding and sampling with concentration guarantees.
"""

from . import _version

__version__ = _version.__version__
