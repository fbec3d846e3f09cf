"""Animatable virtual human pipeline (C++ core with Python bindings)."""

from ._avh import *  # noqa: F401,F403
from ._avh import __doc__  # noqa: F401
