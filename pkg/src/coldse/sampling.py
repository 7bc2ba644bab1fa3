"""Reconstruction from a degraded observation.

``direct``  one restorer call at the terminal severity.
``naive``   restore, then re-degrade the estimate to ``t - 1``.
``improved`` restore, then ``x_{t-1} = x_t - D(x0_hat, t) + D(x0_hat, t-1)``.

The degradation ``D(x0_hat, .)`` inside the iterations comes in two
variants. ``fixed_xT`` interpolates towards the original observation.
``reanchored`` interpolates towards the noisy endpoint implied by the
current iterate, so that ``D(x0_hat, t) == x_t`` and the improved update
reduces to

    x_{t-1} = sqrt(a_{t-1}) x0_hat + sqrt(1-a_{t-1})/sqrt(1-a_t) (x_t - sqrt(a_t) x0_hat)

With that variant the naive and improved samplers coincide.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np

from coldse.degradation import degrade, reanchor_coefficients
from coldse.errors import InvalidParameterError, NumericError
from coldse.restoration import Restorer
from coldse.schedule import Schedule

Method = Literal["direct", "naive", "improved"]
Variant = Literal["reanchored", "fixed_xT"]

METHODS = ("direct", "naive", "improved")
VARIANTS = ("reanchored", "fixed_xT")


@dataclass(frozen=True)
class SamplerConfig:
    method: Method = "improved"
    variant: Variant = "reanchored"
    T_start: Optional[int] = None  # None means the schedule's T
    record_trajectory: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParameterError(f"unknown sampling method {self.method!r}")
        if self.variant not in VARIANTS:
            raise InvalidParameterError(f"unknown degradation variant {self.variant!r}")
        if self.T_start is not None and self.T_start < 1:
            raise InvalidParameterError("T_start must be >= 1")

    def start(self, schedule: Schedule) -> int:
        T = schedule.T if self.T_start is None else self.T_start
        if T > schedule.T:
            raise InvalidParameterError(f"T_start={T} exceeds schedule T={schedule.T}")
        return T

    @property
    def label(self) -> str:
        if self.method == "direct":
            return "direct"
        return f"{self.method}-{self.variant}"


@dataclass
class TrajectoryStep:
    t: int
    x_t: np.ndarray
    x0_hat: Optional[np.ndarray]


@dataclass
class Trajectory:
    steps: List[TrajectoryStep] = field(default_factory=list)

    def append(self, t, x_t, x0_hat):
        if self.steps and t >= self.steps[-1].t:
            raise ValueError("trajectory severities must strictly decrease")
        self.steps.append(TrajectoryStep(int(t), np.array(x_t), None if x0_hat is None else np.array(x0_hat)))

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def l1_to(self, reference) -> List[Tuple[int, float]]:
        ref = np.asarray(reference)
        return [(s.t, float(np.mean(np.abs(s.x_t - ref)))) for s in self.steps]


def _check_finite(x, t, what="iterate"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite {what} at step t={t}")


def direct_reconstruction(R: Restorer, y, T: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    _check_finite(y, T, "input")
    out = np.asarray(R.restore(y, T), dtype=np.float64)
    _check_finite(out, T, "restoration")
    return out


def _iterate(R: Restorer, x_T, schedule: Schedule, config: SamplerConfig, improved: bool):
    T = config.start(schedule)
    x_T = np.asarray(x_T, dtype=np.float64)
    _check_finite(x_T, T, "input")
    traj = Trajectory() if config.record_trajectory else None
    x_t = x_T
    for t in range(T, 0, -1):
        x0_hat = np.asarray(R.restore(x_t, t), dtype=np.float64)
        _check_finite(x0_hat, t, "restoration")
        if traj is not None:
            traj.append(t, x_t, x0_hat)
        if config.variant == "reanchored":
            # identical for naive and improved: D(x0_hat, t) reproduces x_t exactly
            sa_prev, c, sa_t = reanchor_coefficients(schedule, t, t - 1)
            if c == 0.0:
                x_prev = sa_prev * x0_hat
            else:
                x_prev = sa_prev * x0_hat + c * (x_t - sa_t * x0_hat)
        elif improved:
            x_prev = x_t - degrade(x0_hat, x_T, schedule, t) + degrade(x0_hat, x_T, schedule, t - 1)
        else:
            x_prev = degrade(x0_hat, x_T, schedule, t - 1)
        _check_finite(x_prev, t, "iterate")
        x_t = x_prev
    if traj is not None:
        traj.append(0, x_t, None)
    return x_t, traj


def improved_sampling(
    R: Restorer, x_T, schedule: Schedule, config: SamplerConfig = SamplerConfig()
) -> Tuple[np.ndarray, Optional[Trajectory]]:
    """Improved cold-diffusion sampling from ``x_T`` down to severity 0.

    Returns ``(x_0, trajectory)``; the trajectory is ``None`` unless
    ``config.record_trajectory`` is set.
    """
    if config.method != "improved":
        raise InvalidParameterError(f"improved_sampling called with method={config.method!r}")
    return _iterate(R, x_T, schedule, config, improved=True)


def naive_sampled_reconstruction(
    R: Restorer, x_T, schedule: Schedule, config: SamplerConfig = SamplerConfig(method="naive")
) -> Tuple[np.ndarray, Optional[Trajectory]]:
    if config.method != "naive":
        raise InvalidParameterError(f"naive_sampled_reconstruction called with method={config.method!r}")
    return _iterate(R, x_T, schedule, config, improved=False)


def run_sampler(
    R: Restorer, y, schedule: Schedule, config: SamplerConfig
) -> Tuple[np.ndarray, Optional[Trajectory]]:
    """Enhance an observation ``y`` with any configured method."""
    if config.method == "direct":
        T = config.start(schedule)
        out = direct_reconstruction(R, y, T)
        traj = None
        if config.record_trajectory:
            traj = Trajectory()
            traj.append(T, y, out)
            traj.append(0, out, None)
        return out, traj
    if config.method == "improved":
        return improved_sampling(R, y, schedule, config)
    return naive_sampled_reconstruction(R, y, schedule, config)


def steps_for(config: SamplerConfig, schedule: Schedule) -> int:
    """Number of restorer calls ``config`` makes (the 'Steps' column)."""
    return 1 if config.method == "direct" else config.start(schedule)
