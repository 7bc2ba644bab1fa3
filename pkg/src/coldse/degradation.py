"""Deterministic interpolation degradations.

All operators are elementwise in the signal axis. Signals may be 1-D, or
batched as ``(B, N)`` with a per-row severity array of shape ``(B,)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from coldse.errors import DegenerateSeverityError, SeverityIndexError, ShapeError
from coldse.schedule import Schedule

Severity = Union[int, np.ndarray]

GUARD_EPS = 1e-12


@dataclass(frozen=True)
class DegradedSample:
    data: np.ndarray
    t: int
    source: Literal["forward", "reanchored"]


def _check_same_shape(a: np.ndarray, b: np.ndarray, names: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{names}: shape mismatch {a.shape} vs {b.shape}")


def _severity(schedule: Schedule, t: Severity, ndim: int, lo: int = 0) -> np.ndarray:
    """Validate ``t`` and return it as an integer array broadcastable to the signal."""
    arr = np.asarray(t)
    if arr.dtype.kind not in "iu":
        if arr.dtype.kind == "f" and np.all(arr == np.round(arr)):
            arr = arr.astype(np.int64)
        else:
            raise SeverityIndexError(f"severity must be integer, got {t!r}")
    if np.any(arr < lo) or np.any(arr > schedule.T):
        raise SeverityIndexError(f"severity {t!r} outside [{lo}, {schedule.T}]")
    if arr.ndim > 1:
        raise SeverityIndexError("severity must be a scalar or a 1-D per-row array")
    if arr.ndim == 1:
        if ndim < 2:
            raise SeverityIndexError("per-row severities need a batched (B, N) signal")
        arr = arr.reshape(arr.shape + (1,) * (ndim - 1))
    return arr


def _sqrt_alpha(schedule: Schedule, t: np.ndarray):
    a = schedule.alphas[t]
    return np.sqrt(a), np.sqrt(1.0 - a)


def degrade(x0, xT, schedule: Schedule, t: Severity) -> np.ndarray:
    """``sqrt(a_t) * x0 + sqrt(1 - a_t) * xT``."""
    x0 = np.asarray(x0, dtype=np.float64)
    xT = np.asarray(xT, dtype=np.float64)
    _check_same_shape(x0, xT, "degrade(x0, xT)")
    sa, sb = _sqrt_alpha(schedule, _severity(schedule, t, x0.ndim))
    return sa * x0 + sb * xT


def implied_noisy(x_t, x0_hat, schedule: Schedule, t: Severity) -> np.ndarray:
    """Noisy endpoint implied by ``x_t`` and a clean estimate: ``(x_t - sqrt(a_t) x0_hat) / sqrt(1 - a_t)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    _check_same_shape(x_t, x0_hat, "implied_noisy(x_t, x0_hat)")
    tt = _severity(schedule, t, x_t.ndim)
    if np.any(tt == 0):
        raise DegenerateSeverityError("implied noisy sample is undefined at severity 0")
    sa, sb = _sqrt_alpha(schedule, tt)
    if np.any(sb < GUARD_EPS):
        raise DegenerateSeverityError(f"sqrt(1 - alpha_t) below {GUARD_EPS} at t={t!r}")
    return (x_t - sa * x0_hat) / sb


def reanchor_coefficients(schedule: Schedule, t: Severity, s_target: Severity, ndim: int = 1):
    """Return ``(sqrt(a_s), c)`` with ``c = sqrt(1 - a_s) / sqrt(1 - a_t)``.

    ``c`` is exactly 0 when ``a_s == 1`` so the re-anchored update never
    touches the division there.
    """
    tt = _severity(schedule, t, ndim)
    ss = _severity(schedule, s_target, ndim)
    if np.any(tt == 0):
        raise DegenerateSeverityError("re-anchoring needs severity t >= 1")
    sa_t, sb_t = _sqrt_alpha(schedule, tt)
    if np.any(sb_t < GUARD_EPS):
        raise DegenerateSeverityError(f"sqrt(1 - alpha_t) below {GUARD_EPS} at t={t!r}")
    sa_s, sb_s = _sqrt_alpha(schedule, ss)
    c = np.where(sb_s == 0.0, 0.0, sb_s / sb_t)
    return sa_s, c, sa_t


def degrade_reanchored(x0_hat, x_t, schedule: Schedule, t: Severity, s_target: Severity) -> np.ndarray:
    """Degrade ``x0_hat`` to severity ``s_target`` along the path through ``x_t``.

    Equal to ``degrade(x0_hat, implied_noisy(x_t, x0_hat, t), s_target)``, and
    returns ``x_t`` itself when ``s_target == t``.
    """
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    _check_same_shape(x0_hat, x_t, "degrade_reanchored(x0_hat, x_t)")
    sa_s, c, sa_t = reanchor_coefficients(schedule, t, s_target, x_t.ndim)
    return sa_s * x0_hat + c * (x_t - sa_t * x0_hat)


def forward_sample(x0, xT, schedule: Schedule, t: int) -> DegradedSample:
    return DegradedSample(degrade(x0, xT, schedule, t), int(t), "forward")


def reanchored_sample(x0_hat, x_t, schedule: Schedule, t: int, s_target: int) -> DegradedSample:
    return DegradedSample(
        degrade_reanchored(x0_hat, x_t, schedule, t, s_target), int(s_target), "reanchored"
    )
