from ._rigfit import *  # noqa: F401,F403
from ._rigfit import __doc__  # noqa: F401
