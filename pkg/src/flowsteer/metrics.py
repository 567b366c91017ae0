"""Evaluation metrics for edit-strength sweeps.

Covers background preservation (PSNR, SSIM, masked L1/L2 restricted to the
non-edited region), trajectory smoothness (the maximal normalized
triangle-inequality slack over consecutive image triples), and instruction
adherence (a directional score built from a pluggable similarity function,
with cosine against the ground-truth edit direction as the desk-scale
default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analytic import EditTask
from .validation import as_grid, as_mask, check_same_shape

__all__ = [
    "DistanceFn",
    "MetricError",
    "MetricReport",
    "StrengthSweep",
    "build_sweep",
    "delta_smooth",
    "dir_score",
    "edit_direction_similarity",
    "l1_distance",
    "l2_distance",
    "masked_distance",
    "mean_abs_distance",
    "per_strength_metrics",
    "psnr",
    "report",
    "ssim",
]

DistanceFn = Callable[[np.ndarray, np.ndarray], float]

DEFAULT_STRENGTHS = (0.2, 0.4, 0.6, 0.8, 1.0)


class MetricError(ValueError):
    """A metric precondition failed (empty mask, zero denominator, ...)."""


def l2_distance(a, b) -> float:
    return float(np.sqrt(np.sum((np.asarray(a) - np.asarray(b)) ** 2)))


def l1_distance(a, b) -> float:
    return float(np.sum(np.abs(np.asarray(a) - np.asarray(b))))


def mean_abs_distance(a, b) -> float:
    return float(np.mean(np.abs(np.asarray(a) - np.asarray(b))))


@dataclass(frozen=True)
class StrengthSweep:
    """A source image followed by its edits at increasing strengths.

    ``images[0]`` is always the source; ``images[i]`` for ``i >= 1`` is the
    output at ``strengths[i - 1]``. ``mask`` selects the non-edited region
    used by the consistency metrics.
    """

    strengths: tuple
    images: tuple
    mask: np.ndarray

    def __post_init__(self):
        strengths = tuple(float(s) for s in self.strengths)
        images = tuple(as_grid(img, f"images[{k}]") for k, img in enumerate(self.images))
        if len(images) != len(strengths) + 1:
            raise ValueError(
                f"need one image per strength plus the source, got {len(images)} images "
                f"for {len(strengths)} strengths"
            )
        for k, img in enumerate(images[1:], start=1):
            check_same_shape(images[0], img, ("images[0]", f"images[{k}]"))
        mask = as_mask(self.mask, images[0].shape, "mask")
        object.__setattr__(self, "strengths", strengths)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class MetricReport:
    """Aggregated scores for one sweep; PSNR may be the +inf sentinel."""

    delta_smooth: float
    dir_score: float
    masked_l1: float
    masked_l2: float
    psnr: float
    ssim: float


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``+inf`` for identical grids."""
    if not float(peak) > 0.0:
        raise ValueError(f"peak must be positive, got {peak}")
    a = as_grid(a, "a")
    b = as_grid(b, "b")
    check_same_shape(a, b, ("a", "b"))
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a, b, peak: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity with a single global statistics window.

    The grids here are far smaller than the sliding-window sizes used on
    photographs, so means, variances (population), and covariance are taken
    over the whole grid:

        SSIM = (2 mu_a mu_b + C1)(2 cov + C2)
               -----------------------------------
               (mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2)

    with ``C1 = (k1 * peak)^2`` and ``C2 = (k2 * peak)^2``.
    """
    a = as_grid(a, "a")
    b = as_grid(b, "b")
    check_same_shape(a, b, ("a", "b"))
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a = float(np.mean(a))
    mu_b = float(np.mean(b))
    var_a = float(np.mean((a - mu_a) ** 2))
    var_b = float(np.mean((b - mu_b) ** 2))
    cov = float(np.mean((a - mu_a) * (b - mu_b)))
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def masked_distance(a, b, mask, order: int = 1) -> float:
    """Mean absolute (order 1) or RMS (order 2) difference over masked elements."""
    a = as_grid(a, "a")
    b = as_grid(b, "b")
    check_same_shape(a, b, ("a", "b"))
    mask = as_mask(mask, a.shape, "mask")
    if not np.any(mask):
        raise MetricError("mask selects no elements")
    diff = a[mask] - b[mask]
    if order == 1:
        return float(np.mean(np.abs(diff)))
    if order == 2:
        return float(np.sqrt(np.mean(diff * diff)))
    raise ValueError(f"order must be 1 or 2, got {order}")


def delta_smooth(sweep: StrengthSweep, distance: DistanceFn = l2_distance) -> float:
    """Maximal normalized triangle defect over consecutive image triples.

    For each triple (x_i, x_{i+1}, x_{i+2}) the defect is

        (d(x_i, x_{i+1}) + d(x_{i+1}, x_{i+2}) - d(x_i, x_{i+2})) / d(x_i, x_{i+2})

    which is 0 exactly when the triple is metrically collinear. A zero
    denominator is an error rather than a silent skip.
    """
    images = sweep.images
    if len(images) < 3:
        raise MetricError(f"need at least 3 images, got {len(images)}")
    worst = 0.0
    for i in range(len(images) - 2):
        d01 = distance(images[i], images[i + 1])
        d12 = distance(images[i + 1], images[i + 2])
        d02 = distance(images[i], images[i + 2])
        if d02 == 0.0:
            raise MetricError(f"zero denominator distance for the triple starting at index {i}")
        worst = max(worst, (d01 + d12 - d02) / d02)
    return worst


def edit_direction_similarity(task: EditTask) -> Callable[[np.ndarray, np.ndarray], float]:
    """Cosine similarity against the task's edit direction, inside the edit mask.

    Returns 0 by convention when either the achieved change or the
    ground-truth direction is the zero vector (a no-op edit scores zero
    adherence).
    """
    direction = (task.x_edit - task.x_orig)[task.gt_mask]
    norm_dir = float(np.sqrt(np.sum(direction * direction)))

    def sim(image, source) -> float:
        diff = (np.asarray(image) - np.asarray(source))[task.gt_mask]
        norm_diff = float(np.sqrt(np.sum(diff * diff)))
        if norm_diff == 0.0 or norm_dir == 0.0:
            return 0.0
        return float(np.dot(diff, direction) / (norm_diff * norm_dir))

    return sim


def dir_score(sweep: StrengthSweep, sim, normalize_by_strength: bool = True) -> float:
    """Directional adherence: mean over strengths of ``sim(x_i, source)``.

    With ``normalize_by_strength`` each term is divided by its strength
    before averaging (so a perfectly linear trajectory scores the mean of
    ``1 / strength``); the plain mean is exposed as the unnormalized
    variant.
    """
    source = sweep.images[0]
    total = 0.0
    for strength, image in zip(sweep.strengths, sweep.images[1:]):
        value = float(sim(image, source))
        if normalize_by_strength:
            if strength == 0.0:
                raise MetricError("strengths must be nonzero when normalizing by strength")
            value /= strength
        total += value
    return total / len(sweep.strengths)


def build_sweep(task: EditTask, edited_images, strengths) -> StrengthSweep:
    """Assemble a sweep from a task and its per-strength outputs."""
    return StrengthSweep(
        strengths=tuple(strengths),
        images=(task.x_orig, *edited_images),
        mask=~task.gt_mask,
    )


def _masked_pair(a, b, mask):
    # Masked selections flattened back into single-row grids so the global
    # PSNR/SSIM formulas apply unchanged to the preservation region.
    av = a[mask]
    bv = b[mask]
    return av.reshape(1, 1, -1), bv.reshape(1, 1, -1)


def per_strength_metrics(sweep: StrengthSweep, peak: float = 1.0) -> dict:
    """Consistency metrics of every swept image against the source.

    All four scores are restricted to the sweep's non-edited region; an
    all-false mask raises :class:`MetricError`.
    """
    if not np.any(sweep.mask):
        raise MetricError("mask selects no elements")
    source = sweep.images[0]
    out = {"masked_l1": [], "masked_l2": [], "psnr": [], "ssim": []}
    for image in sweep.images[1:]:
        out["masked_l1"].append(masked_distance(image, source, sweep.mask, order=1))
        out["masked_l2"].append(masked_distance(image, source, sweep.mask, order=2))
        a, b = _masked_pair(image, source, sweep.mask)
        out["psnr"].append(psnr(a, b, peak))
        out["ssim"].append(ssim(a, b, peak))
    return out


def report(task: EditTask, sweep: StrengthSweep, distance: DistanceFn = l2_distance) -> MetricReport:
    """Aggregate all metrics for one sweep.

    Per-strength consistency scores are averaged uniformly across strengths.
    Degenerate sweeps (a no-op edit gives zero pairwise distances) surface
    as :class:`MetricError` from the component metrics.
    """
    per = per_strength_metrics(sweep)
    return MetricReport(
        delta_smooth=delta_smooth(sweep, distance),
        dir_score=dir_score(sweep, edit_direction_similarity(task)),
        masked_l1=float(np.mean(per["masked_l1"])),
        masked_l2=float(np.mean(per["masked_l2"])),
        psnr=float(np.mean(per["psnr"])),
        ssim=float(np.mean(per["ssim"])),
    )
