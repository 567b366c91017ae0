"""HTTP service backing the interactive editing UI.

Endpoints:
    GET  /tasks        task index (list)
    GET  /tasks/{id}   full task payload (arrays plus PGM previews)
    POST /edit         one intervention run; body {task_id, T, N, tau, alpha, seed}
    POST /sweep        same body plus strengths[] (and allow_extrapolation)

All responses are JSON. Failures use {"error": <message>} with 404 for an
unknown task, 400 for an invalid config naming the offending field, and 500
for a sampling failure naming the step index. Handlers are stateless apart
from the immutable task set and model, so concurrent identical requests
return identical bodies.
"""

from __future__ import annotations

import base64
import math

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .analytic import EditTask, analytic_edit_model
from .fileio import pgm_bytes
from .intervene import InterventionConfig, NonFiniteVelocityError, sample
from .metrics import build_sweep
from .nets import ToyVelocityNet
from .sweeps import run_sweep, sweep_metrics
from .validation import ShapeMismatchError

__all__ = ["create_app"]

MAX_STEPS = 256


class _BadConfig(ValueError):
    pass


def _json_safe(value):
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _pgm_b64(grid) -> str | None:
    if grid.shape[0] != 1:
        return None
    return base64.b64encode(pgm_bytes(grid)).decode("ascii")


def _int_field(payload, name, default, low, high):
    value = payload.get(name, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value != int(value):
        raise _BadConfig(f"{name} must be an integer")
    value = int(value)
    if not low <= value <= high:
        raise _BadConfig(f"{name} must lie in [{low}, {high}], got {value}")
    return value


def _float_field(payload, name, default):
    value = payload.get(name, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise _BadConfig(f"{name} must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise _BadConfig(f"{name} must be finite")
    return value


def _config_from_payload(payload) -> InterventionConfig:
    steps = _int_field(payload, "T", 6, 1, MAX_STEPS)
    intervened = _int_field(payload, "N", 1, 0, steps)
    tau = _float_field(payload, "tau", 0.4)
    if not 0.0 <= tau <= 1.0:
        raise _BadConfig(f"tau must lie in [0, 1], got {tau}")
    alpha = _float_field(payload, "alpha", 1.0)
    seed = _int_field(payload, "seed", 0, -(2**53), 2**53)
    config = InterventionConfig(
        steps=steps, intervention_steps=intervened, tau=tau, alpha=alpha, seed=seed
    )
    config.validate()
    return config


def _strengths_from_payload(payload):
    strengths = payload.get("strengths", [0.2, 0.4, 0.6, 0.8, 1.0])
    if not isinstance(strengths, list) or not strengths:
        raise _BadConfig("strengths must be a non-empty list of numbers")
    values = []
    for s in strengths:
        if not isinstance(s, (int, float)) or isinstance(s, bool) or not math.isfinite(float(s)):
            raise _BadConfig("strengths must be a non-empty list of finite numbers")
        values.append(float(s))
    if len(values) != len(set(values)):
        raise _BadConfig("strengths must be distinct")
    if not payload.get("allow_extrapolation", False) and any(s <= 0.0 for s in values):
        raise _BadConfig("strengths must be positive unless allow_extrapolation is set")
    return values


def create_app(tasks: dict[str, EditTask], net: ToyVelocityNet | None = None) -> FastAPI:
    """Build the service over an immutable task set and optional model.

    Without a model every request uses the exact analytic editor for its
    task; with one, the trained network conditioned on the task instruction.
    """
    app = FastAPI(title="flowsteer")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def error(status, message):
        return JSONResponse({"error": str(message)}, status_code=status)

    def model_for(task: EditTask):
        return net if net is not None else analytic_edit_model(task)

    def task_or_none(payload):
        task_id = payload.get("task_id")
        if not isinstance(task_id, str):
            raise _BadConfig("task_id must be a string")
        return tasks.get(task_id)

    @app.get("/tasks")
    def task_index():
        return [
            {
                "id": task.id,
                "instruction": task.instruction,
                "shape": list(task.shape),
            }
            for task in sorted(tasks.values(), key=lambda t: t.id)
        ]

    @app.get("/tasks/{task_id}")
    def task_detail(task_id: str):
        task = tasks.get(task_id)
        if task is None:
            return error(404, f"unknown task_id {task_id!r}")
        return {
            "id": task.id,
            "instruction": task.instruction,
            "shape": list(task.shape),
            "x_orig": task.x_orig.tolist(),
            "x_edit": task.x_edit.tolist(),
            "gt_mask": task.gt_mask.astype(int).tolist(),
            "x_orig_pgm": _pgm_b64(task.x_orig),
            "x_edit_pgm": _pgm_b64(task.x_edit),
        }

    @app.post("/edit")
    async def edit(request: Request):
        payload = await request.json()
        try:
            task = task_or_none(payload)
            if task is None:
                return error(404, f"unknown task_id {payload.get('task_id')!r}")
            config = _config_from_payload(payload)
        except (_BadConfig, ValueError) as exc:
            return error(400, exc)
        try:
            trajectory = sample(model_for(task), task.x_orig, task.condition, config)
        except NonFiniteVelocityError as exc:
            return error(500, exc)
        except ShapeMismatchError as exc:
            return error(500, exc)
        sweep = build_sweep(task, [trajectory.final], [config.alpha])
        metrics = sweep_metrics(task, sweep)
        return _json_safe(
            {
                "task_id": task.id,
                "config": config.to_wire(),
                "image": _pgm_b64(trajectory.final),
                "image_array": trajectory.final.tolist(),
                "similarity_maps": [s.tolist() for s in trajectory.similarity_maps],
                "masks": [
                    {
                        "high": pair.high.astype(int).tolist(),
                        "low": pair.low.astype(int).tolist(),
                    }
                    for pair in trajectory.masks
                ],
                "metrics": metrics,
            }
        )

    @app.post("/sweep")
    async def sweep_endpoint(request: Request):
        payload = await request.json()
        try:
            task = task_or_none(payload)
            if task is None:
                return error(404, f"unknown task_id {payload.get('task_id')!r}")
            config = _config_from_payload(payload)
            strengths = _strengths_from_payload(payload)
        except (_BadConfig, ValueError) as exc:
            return error(400, exc)
        try:
            images, sweep, metrics = run_sweep(model_for(task), task, config, strengths)
        except NonFiniteVelocityError as exc:
            return error(500, exc)
        except ShapeMismatchError as exc:
            return error(500, exc)
        return _json_safe(
            {
                "task_id": task.id,
                "config": config.to_wire(),
                "strengths": strengths,
                "source": task.x_orig.tolist(),
                "source_pgm": _pgm_b64(task.x_orig),
                "images": [_pgm_b64(img) for img in images],
                "image_arrays": [img.tolist() for img in images],
                "delta_smooth": metrics["delta_smooth"],
                "dir_score": metrics["dir_score"],
                "metrics": metrics,
            }
        )

    return app
