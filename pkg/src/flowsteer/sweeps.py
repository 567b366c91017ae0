"""Strength sweeps: one trajectory per blend coefficient, plus metrics.

Every trajectory in a sweep shares the same noise seed so the per-strength
outputs form a comparable family. Metric preconditions that fail for a task
(no preservation region, zero pairwise distance) are recorded as error
strings instead of aborting the sweep.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .analytic import EditTask
from .flow import VelocityModel
from .intervene import InterventionConfig, sample
from .metrics import (
    MetricError,
    StrengthSweep,
    build_sweep,
    delta_smooth,
    dir_score,
    edit_direction_similarity,
    per_strength_metrics,
)
from .nets import CFGVelocityModel, ToyVelocityNet

__all__ = [
    "CFG_SCALES",
    "cfg_sweep_images",
    "run_sweep",
    "sweep_images",
    "sweep_metrics",
]

# Guidance magnitudes used by the naive edit-strength baseline.
CFG_SCALES = (1.0, 2.5, 4.0, 5.5, 7.0)


def sweep_images(
    model: VelocityModel, task: EditTask, config: InterventionConfig, strengths
) -> list[np.ndarray]:
    """Final states of one intervention run per strength, shared seed."""
    images = []
    for strength in strengths:
        cfg = replace(config, alpha=float(strength))
        images.append(sample(model, task.x_orig, task.condition, cfg).final)
    return images


def cfg_sweep_images(
    net: ToyVelocityNet, task: EditTask, scales=CFG_SCALES, steps: int = 6, seed: int = 0
) -> list[np.ndarray]:
    """Final states of plain (no intervention) runs at each guidance scale."""
    images = []
    for scale in scales:
        model = CFGVelocityModel(net=net, scale=float(scale))
        cfg = InterventionConfig(steps=steps, intervention_steps=0, seed=seed)
        images.append(sample(model, task.x_orig, task.condition, cfg).final)
    return images


def sweep_metrics(task: EditTask, sweep: StrengthSweep) -> dict:
    """All metric fields for one sweep, with failures recorded as errors.

    Scalar fields are ``None`` when their precondition failed; ``errors``
    lists one message per failure.
    """
    out = {
        "delta_smooth": None,
        "dir_score": None,
        "masked_l1": None,
        "masked_l2": None,
        "psnr": None,
        "ssim": None,
    }
    errors = []
    try:
        out["delta_smooth"] = delta_smooth(sweep)
    except MetricError as exc:
        errors.append(f"delta_smooth: {exc}")
    try:
        out["dir_score"] = dir_score(sweep, edit_direction_similarity(task))
    except MetricError as exc:
        errors.append(f"dir_score: {exc}")
    try:
        per = per_strength_metrics(sweep)
        out["masked_l1"] = float(np.mean(per["masked_l1"]))
        out["masked_l2"] = float(np.mean(per["masked_l2"]))
        out["psnr"] = per["psnr"]
        out["ssim"] = per["ssim"]
    except MetricError as exc:
        errors.append(f"masked metrics: {exc}")
    out["errors"] = errors
    return out


def run_sweep(model, task, config, strengths):
    """Convenience: images, assembled sweep, and metrics in one call."""
    images = sweep_images(model, task, config, strengths)
    sweep = build_sweep(task, images, strengths)
    return images, sweep, sweep_metrics(task, sweep)
