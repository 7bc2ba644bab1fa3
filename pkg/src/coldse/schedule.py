"""Interpolation weight schedules.

``alphas[t]`` is the weight of the clean signal at severity ``t``; it starts
at exactly 1 and ends at exactly 0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from coldse.errors import InvalidParameterError, SeverityIndexError

# residual of cos(pi/2)**2 in double precision is ~1e-33
_TERMINAL_EPS = 1e-12


@dataclass(frozen=True)
class Schedule:
    """Immutable table of interpolation weights ``alpha_0 .. alpha_T``.

    Use :func:`make_cosine_schedule` for the standard schedule, or
    :meth:`from_alphas` for a hand-written table (handy for worked examples).
    """

    T: int
    s: Optional[float]
    alphas: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        a = np.array(self.alphas, dtype=np.float64)
        if a.ndim != 1 or a.shape[0] != self.T + 1:
            raise InvalidParameterError(
                f"alphas must have length T+1={self.T + 1}, got shape {a.shape}"
            )
        if a[0] != 1.0 or a[-1] != 0.0:
            raise InvalidParameterError("alphas must start at exactly 1 and end at exactly 0")
        if np.any(a < 0.0) or np.any(a > 1.0):
            raise InvalidParameterError("alphas must lie in [0, 1]")
        if np.any(np.diff(a) >= 0.0):
            raise InvalidParameterError("alphas must be strictly decreasing")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)

    @classmethod
    def from_alphas(cls, alphas: Sequence[float]) -> "Schedule":
        alphas = np.asarray(alphas, dtype=np.float64)
        if alphas.ndim != 1 or alphas.shape[0] < 2:
            raise InvalidParameterError("need at least two weights (alpha_0 and alpha_T)")
        return cls(T=int(alphas.shape[0] - 1), s=None, alphas=alphas)

    def __len__(self) -> int:
        return self.T + 1

    def alpha(self, t: int) -> float:
        return alpha(self, t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "alpha"])
        for t, a in enumerate(self.alphas):
            writer.writerow([t, repr(float(a))])
        return buf.getvalue()


def cosine_f(t: float, T: int, s: float) -> float:
    return math.cos(((t / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2


def make_cosine_schedule(T: int = 50, s: float = 0.008) -> Schedule:
    """Cosine schedule ``alpha_t = f(t) / f(0)``.

    ``f(t) = cos(((t/T + s) / (1 + s)) * pi/2) ** 2``. The terminal value is
    zero analytically; a rounding residual below 1e-12 is clamped to 0.
    """
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise InvalidParameterError(f"T must be a positive integer, got {T!r}")
    if not s > 0:
        raise InvalidParameterError(f"s must be positive, got {s!r}")
    T = int(T)
    f0 = cosine_f(0, T, s)
    alphas = np.array([cosine_f(t, T, s) / f0 for t in range(T + 1)], dtype=np.float64)
    alphas[0] = 1.0
    if abs(alphas[-1]) > _TERMINAL_EPS:
        raise InvalidParameterError(f"terminal weight {alphas[-1]!r} is not ~0")
    alphas[-1] = 0.0
    return Schedule(T=T, s=float(s), alphas=alphas)


def alpha(schedule: Schedule, t: int) -> float:
    if isinstance(t, bool) or int(t) != t:
        raise SeverityIndexError(f"severity must be an integer, got {t!r}")
    t = int(t)
    if t < 0 or t > schedule.T:
        raise SeverityIndexError(f"severity {t} outside [0, {schedule.T}]")
    return float(schedule.alphas[t])
