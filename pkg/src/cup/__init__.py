"""Closed-loop urban planning with simulated residents.

The loop repeats planning, a simulated day of living and judging; all model
calls go through :class:`cup.gateway.Gateway` so a scripted backend can make
runs fully deterministic.
"""

from .errors import CupError

__version__ = "0.1.0"

__all__ = ["CupError", "__version__"]
