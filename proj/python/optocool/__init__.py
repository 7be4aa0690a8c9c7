"""Sideband-cooling spectra: closed-form noise budgets, seeded synthesis and fits.

Rates are angular (rad/s) throughout; configs and reports are dicts in the
same JSON layout the command-line tool reads and writes.
"""

from ._optocool import *  # noqa: F401,F403
from ._optocool import __version__  # noqa: F401
