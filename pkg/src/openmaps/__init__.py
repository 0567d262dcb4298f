"""Escape rates, conditionally invariant measures and Hofbauer extensions for interval maps with holes."""

__version__ = "0.1.0"

from .maps import IntervalMap, logistic4, piecewise_linear, tent2  # noqa: E402
from .openmap import Hole, monte_carlo_escape  # noqa: E402
from .potentials import Potential, normalize  # noqa: E402
from .ulam import build_ulam, escape_rate_spectral, leading_eigen  # noqa: E402

__all__ = ["IntervalMap", "logistic4", "piecewise_linear", "tent2", "Hole", "monte_carlo_escape", "Potential",
           "normalize", "build_ulam", "escape_rate_spectral", "leading_eigen", "__version__"]
