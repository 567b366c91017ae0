"""Rectified-flow primitives.

Convention used throughout the package: ``t = 0`` is the data end of the
path and ``t = 1`` is the noise end. The interpolation path is

    x_t = (1 - t) * x0 + t * x1

whose conditional velocity ``x1 - x0`` is constant in ``t``. Generation
integrates a velocity field from ``t = 1`` down to ``t = 0`` with forward
Euler steps on the uniform grid ``t_i = i / steps``.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .validation import as_grid, check_same_shape

__all__ = [
    "Condition",
    "FlowSample",
    "TimeGrid",
    "VelocityModel",
    "conditional_velocity",
    "euler_step",
    "fm_loss",
    "interpolate",
]


@dataclass(frozen=True)
class Condition:
    """Conditioning bundle passed to a velocity model.

    ``x_orig`` is the source image for conditional editors; analytic models
    ignore it. ``instruction`` is a small integer naming a parametric edit,
    with 0 reserved for "no edit".
    """

    x_orig: np.ndarray | None = None
    instruction: int = 0


class VelocityModel(abc.ABC):
    """A conditional velocity field ``v(x_t, t, condition)``."""

    @abc.abstractmethod
    def velocity(self, x_t: np.ndarray, t: float, condition: Condition | None = None) -> np.ndarray:
        """Return the predicted velocity at state ``x_t`` and time ``t``."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling schedule ``t_i = i / steps`` for ``i = 0..steps``."""

    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) / self.steps


@dataclass(frozen=True)
class FlowSample:
    """One point on the interpolation path: data ``x0``, noise ``x1``, time ``t``."""

    x0: np.ndarray
    x1: np.ndarray
    t: float

    def __post_init__(self):
        x0 = as_grid(self.x0, "x0")
        x1 = as_grid(self.x1, "x1")
        check_same_shape(x0, x1, ("x0", "x1"))
        t = float(self.t)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "t", t)


def interpolate(sample: FlowSample) -> np.ndarray:
    """Evaluate the straight-line path: ``(1 - t) * x0 + t * x1``."""
    return (1.0 - sample.t) * sample.x0 + sample.t * sample.x1


def conditional_velocity(sample: FlowSample) -> np.ndarray:
    """Velocity of the straight-line path, ``x1 - x0``; independent of ``t``."""
    return sample.x1 - sample.x0


def euler_step(x_t: np.ndarray, v: np.ndarray, t_from: float, t_to: float) -> np.ndarray:
    """One forward Euler step against the flow, from ``t_from`` down to ``t_to``.

    Sampling moves from noise (t = 1) toward data (t = 0), so ``t_to`` must be
    strictly below ``t_from``.
    """
    x_t = as_grid(x_t, "x_t")
    v = as_grid(v, "v")
    check_same_shape(x_t, v, ("x_t", "v"))
    if not t_to < t_from:
        raise ValueError(f"t_to must be below t_from, got t_from={t_from}, t_to={t_to}")
    return x_t - (t_from - t_to) * v


def fm_loss(model: VelocityModel, batch, condition: Condition | None = None) -> float:
    """Flow-matching regression loss on a batch of path samples.

    Mean over the batch of the squared L2 norm of the residual between the
    model's velocity at ``x_t`` and the path velocity ``x1 - x0``.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("batch must contain at least one sample")
    total = 0.0
    for sample in batch:
        x_t = interpolate(sample)
        pred = model.velocity(x_t, sample.t, condition)
        pred = as_grid(pred, "model velocity")
        check_same_shape(pred, x_t, ("model velocity", "x_t"))
        residual = pred - conditional_velocity(sample)
        total += float(np.sum(residual * residual))
    return total / len(batch)
