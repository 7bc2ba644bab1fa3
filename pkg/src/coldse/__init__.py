"""Cold-diffusion restoration of additively degraded signals.

The package is organised around a deterministic interpolation between a
clean signal and its noisy observation, a restorer that maps a partially
degraded signal back to a clean estimate, and samplers that alternate the
two.
"""

from coldse.degradation import degrade, degrade_reanchored, implied_noisy
from coldse.schedule import Schedule, alpha, make_cosine_schedule

__all__ = [
    "Schedule",
    "alpha",
    "degrade",
    "degrade_reanchored",
    "implied_noisy",
    "make_cosine_schedule",
]

__version__ = "0.1.0"
