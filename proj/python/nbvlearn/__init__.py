"""Exploration planning with learned viewpoint sampling."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401

FREE, OCCUPIED, UNKNOWN = 0, 1, 2
