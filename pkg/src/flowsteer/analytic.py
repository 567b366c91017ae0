"""Closed-form velocity fields and synthetic edit tasks.

These make every intervention identity exactly checkable without training:
a point-mass flow transports any noise sample onto a single target grid, and
the synthetic tasks pair a source image with a parametric ground-truth edit
plus the exact edit-region mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import Condition, VelocityModel
from .validation import as_grid, as_image_grid, as_mask, check_same_shape

__all__ = [
    "EDIT_NAMES",
    "VOCAB_SIZE",
    "EditTask",
    "GaussianFlow",
    "PointMassFlow",
    "analytic_edit_model",
    "gaussian_velocity",
    "make_task_suite",
    "point_mass_velocity",
]

# Instruction vocabulary. Code 0 is the reserved "no edit" condition.
EDIT_NAMES = {
    0: "identity",
    1: "brighten-disk",
    2: "darken-disk",
    3: "lighten-stripes",
    4: "raise-background",
    5: "gamma-remap",
}
VOCAB_SIZE = len(EDIT_NAMES)

# Per-code edit magnitude ranges. The direction is fixed per code (so a
# conditional model can commit to it) but the intensity varies per task and
# is never encoded in the instruction, mirroring instruction-based editors
# where the prompt under-determines edit strength. Scene levels below keep
# every edited value inside [0, 1] without clipping.
_DISK_BRIGHTEN = (0.30, 0.50)
_DISK_DARKEN = (0.20, 0.38)
_STRIPE_LIFT = (0.30, 0.50)
_BACKGROUND_LIFT = (0.25, 0.45)
_GAMMA = (0.35, 0.55)


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    return t


@dataclass(frozen=True)
class PointMassFlow(VelocityModel):
    """Flow whose data distribution is a single point ``target``.

    The marginal velocity ``(x_t - target) / t`` steers any state straight
    onto the target; integrating it over the full uniform time grid lands on
    the target exactly because the final step scales the gap by zero.
    """

    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", as_grid(self.target, "target"))

    def velocity(self, x_t, t, condition=None):
        return point_mass_velocity(self, x_t, t)


@dataclass(frozen=True)
class GaussianFlow(VelocityModel):
    """Flow for an isotropic Gaussian data distribution N(mean, sigma^2 I)."""

    mean: np.ndarray
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "mean", as_grid(self.mean, "mean"))
        if not float(self.sigma) > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "sigma", float(self.sigma))

    def velocity(self, x_t, t, condition=None):
        return gaussian_velocity(self, x_t, t)


def point_mass_velocity(flow: PointMassFlow, x_t, t: float) -> np.ndarray:
    """Velocity ``(x_t - target) / t`` of a point-mass flow."""
    t = _check_time(t)
    x_t = as_grid(x_t, "x_t")
    check_same_shape(x_t, flow.target, ("x_t", "target"))
    return (x_t - flow.target) / t


def gaussian_velocity(flow: GaussianFlow, x_t, t: float) -> np.ndarray:
    """Posterior-mean velocity ``E[x1 - x0 | x_t]`` for Gaussian data.

    With data ``x0 ~ N(mean, sigma^2 I)`` and noise ``x1 ~ N(0, I)`` the
    state ``x_t = (1 - t) x0 + t x1`` is jointly Gaussian with both ends,
    which gives the closed form

        v(x_t, t) = (t - (1 - t) sigma^2) / s2 * (x_t - (1 - t) mean) - mean

    where ``s2 = (1 - t)^2 sigma^2 + t^2`` is the marginal variance. For
    ``mean = 0, sigma = 1`` this reduces to ``(2t - 1) / ((1-t)^2 + t^2) x_t``
    and in the ``sigma -> 0`` limit it recovers the point-mass velocity.
    """
    t = _check_time(t)
    x_t = as_grid(x_t, "x_t")
    check_same_shape(x_t, flow.mean, ("x_t", "mean"))
    var = flow.sigma * flow.sigma
    s2 = (1.0 - t) ** 2 * var + t * t
    coef = (t - (1.0 - t) * var) / s2
    return coef * (x_t - (1.0 - t) * flow.mean) - flow.mean


@dataclass(frozen=True)
class EditTask:
    """A source image, an edit instruction, and the ground-truth result.

    ``gt_mask`` is true exactly where the fully edited image differs from the
    source.
    """

    id: str
    x_orig: np.ndarray
    instruction: int
    x_edit: np.ndarray
    gt_mask: np.ndarray

    def __post_init__(self):
        x_orig = as_image_grid(self.x_orig, "x_orig")
        x_edit = as_image_grid(self.x_edit, "x_edit")
        check_same_shape(x_orig, x_edit, ("x_orig", "x_edit"))
        mask = as_mask(self.gt_mask, x_orig.shape, "gt_mask")
        if np.any(x_orig < 0.0) or np.any(x_orig > 1.0):
            raise ValueError("x_orig values must lie in [0, 1]")
        if not np.array_equal(mask, x_edit != x_orig):
            raise ValueError("gt_mask must be true exactly where x_edit differs from x_orig")
        if int(self.instruction) not in EDIT_NAMES:
            raise ValueError(f"unknown instruction code {self.instruction}")
        object.__setattr__(self, "x_orig", x_orig)
        object.__setattr__(self, "x_edit", x_edit)
        object.__setattr__(self, "gt_mask", mask)
        object.__setattr__(self, "instruction", int(self.instruction))

    @property
    def shape(self):
        return self.x_orig.shape

    @property
    def condition(self) -> Condition:
        return Condition(x_orig=self.x_orig, instruction=self.instruction)


def _scene(rng: np.random.Generator, shape):
    """Draw a source image: flat background, darker stripes, brighter disk.

    Level ranges are separated so each region can be recovered from pixel
    values alone (stripes < background < disk), which keeps the edits
    learnable by a conditional model that only sees the source image.
    """
    channels, height, width = shape
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]

    radius = max(1, min(height, width) // 4)
    cy = int(rng.integers(radius, height - radius)) if height > 2 * radius else height // 2
    cx = int(rng.integers(radius, width - radius)) if width > 2 * radius else width // 2
    disk2d = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius * radius

    period = int(rng.integers(3, 6)) if width >= 6 else 2
    phase = int(rng.integers(0, period))
    stripe_cols = (np.arange(width) % period) == phase
    stripes2d = np.broadcast_to(stripe_cols[None, :], (height, width)) & ~disk2d
    background2d = ~disk2d & ~np.broadcast_to(stripe_cols[None, :], (height, width))

    base = rng.uniform(0.28, 0.34, size=channels)
    disk_level = base + rng.uniform(0.12, 0.16, size=channels)
    stripe_level = base - rng.uniform(0.18, 0.22, size=channels)

    image = np.empty(shape, dtype=np.float64)
    for c in range(channels):
        image[c] = base[c]
        image[c][stripes2d] = stripe_level[c]
        image[c][disk2d] = disk_level[c]

    expand = lambda m: np.broadcast_to(m[None, :, :], shape).copy()
    return image, expand(disk2d), expand(stripes2d), expand(background2d)


def _apply_edit(code: int, rng: np.random.Generator, image: np.ndarray, disk, stripes, background) -> np.ndarray:
    edited = image.copy()
    if code == 1:
        edited[disk] += rng.uniform(*_DISK_BRIGHTEN)
    elif code == 2:
        edited[disk] -= rng.uniform(*_DISK_DARKEN)
    elif code == 3:
        edited[stripes] += rng.uniform(*_STRIPE_LIFT)
    elif code == 4:
        edited[background] += rng.uniform(*_BACKGROUND_LIFT)
    elif code == 5:
        edited = image ** rng.uniform(*_GAMMA)
    # Clamp at construction only; sampling never clamps.
    np.clip(edited, 0.0, 1.0, out=edited)
    return edited


# Cycle order guarantees the first five tasks already span local recolor,
# local attribute, background, global style, and identity edits.
_CODE_CYCLE = (1, 3, 4, 5, 0, 2)


def make_task_suite(seed: int, count: int, shape=(1, 16, 16)) -> list[EditTask]:
    """Generate a deterministic suite of synthetic edit tasks.

    The same ``(seed, count, shape)`` always produces bit-identical suites.
    """
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or any(s <= 0 for s in shape):
        raise ValueError(f"shape must be three positive dimensions, got {shape}")
    rng = np.random.default_rng(seed)
    tasks = []
    for index in range(count):
        code = _CODE_CYCLE[index % len(_CODE_CYCLE)]
        image, disk, stripes, background = _scene(rng, shape)
        edited = _apply_edit(code, rng, image, disk, stripes, background)
        tasks.append(
            EditTask(
                id=f"t{seed}-{index:03d}",
                x_orig=image,
                instruction=code,
                x_edit=edited,
                gt_mask=edited != image,
            )
        )
    return tasks


def analytic_edit_model(task: EditTask) -> PointMassFlow:
    """Exact editor for a task: the point-mass flow targeting ``x_edit``."""
    return PointMassFlow(target=task.x_edit)
