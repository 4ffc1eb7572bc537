"""Template-rigged Gaussian splatting heads: python bindings."""

from ._gshead import *  # noqa: F401,F403
from ._gshead import __version__  # noqa: F401
