"""Command-line harness.

Subcommands: gen-tasks, edit, baseline, sweep, ablate, train, serve. Every
subcommand is deterministic given its flags; all randomness flows from the
explicit --seed (per-task seeds in multi-task runs derive from it by index).
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analytic import analytic_edit_model, make_task_suite
from .fileio import (
    ReportFile,
    load_task,
    load_task_dir,
    report_to_json,
    write_pgm,
    write_task_suite,
)
from .intervene import InterventionConfig, NonFiniteVelocityError, baseline_sample, sample
from .metrics import DEFAULT_STRENGTHS
from .nets import ToyVelocityNet, TrainConfig, load_model, save_model, train
from .sweeps import run_sweep
from .validation import ShapeMismatchError

__all__ = ["entrypoint", "main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_shape(text: str):
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"shape must look like CxHxW, got {text!r}")
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise UsageError(f"shape must be three positive dimensions, got {text!r}")
    return dims


def _parse_floats(text: str, flag: str):
    try:
        return [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError:
        raise UsageError(f"{flag} must be a comma-separated list of numbers, got {text!r}")


def _resolve_model(args, task=None):
    """Analytic point-mass editor or a trained network from --model."""
    if getattr(args, "analytic", False) and getattr(args, "model", None):
        raise UsageError("--model and --analytic are mutually exclusive")
    if getattr(args, "model", None):
        return load_model(args.model)
    if getattr(args, "analytic", False):
        if task is None:
            raise UsageError("--analytic needs a task to build the exact editor")
        return analytic_edit_model(task)
    raise UsageError("one of --model or --analytic is required")


def _config_from_args(args) -> InterventionConfig:
    config = InterventionConfig(
        steps=args.steps,
        intervention_steps=args.intervene,
        tau=args.tau,
        alpha=getattr(args, "alpha", 1.0),
        epsilon=args.epsilon,
        seed=args.seed,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc))
    return config


def _check_strengths(strengths, allow_extrapolation):
    if len(strengths) != len(set(strengths)):
        raise UsageError("strengths must be distinct")
    if not strengths:
        raise UsageError("strengths must contain at least one value")
    if not allow_extrapolation and any(s <= 0.0 for s in strengths):
        raise UsageError(
            "strengths must be positive unless --allow-extrapolation is set"
        )


def cmd_gen_tasks(args) -> int:
    if args.count < 1:
        raise UsageError(f"count must be at least 1, got {args.count}")
    shape = _parse_shape(args.shape)
    tasks = make_task_suite(args.seed, args.count, shape)
    index_path = write_task_suite(tasks, args.out)
    print(f"wrote {len(tasks)} tasks to {index_path.parent}")
    return 0


def _write_trajectory_artifacts(trajectory, out_dir: Path):
    """Per-step similarity heatmaps and high/low mask images."""
    names = []
    for k, (sim_map, pair) in enumerate(zip(trajectory.similarity_maps, trajectory.masks)):
        if sim_map.shape[0] != 1:
            continue
        sim_name = f"similarity_step{k}.pgm"
        mask_name = f"mask_high_step{k}.pgm"
        write_pgm(sim_map, out_dir / sim_name)
        write_pgm(pair.high.astype(np.float64), out_dir / mask_name)
        names.extend([sim_name, mask_name])
    return names


def cmd_edit(args) -> int:
    task = load_task(args.task)
    model = _resolve_model(args, task)
    config = _config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    trajectory = sample(model, task.x_orig, task.condition, config)
    elapsed = time.perf_counter() - started

    artifacts = ["edit.pgm"]
    write_pgm(trajectory.final, out_dir / "edit.pgm")
    artifacts.extend(_write_trajectory_artifacts(trajectory, out_dir))

    from .metrics import build_sweep
    from .sweeps import sweep_metrics

    sweep = build_sweep(task, [trajectory.final], [config.alpha])
    metrics = sweep_metrics(task, sweep)
    errors = metrics.pop("errors")
    report = ReportFile(
        task_id=task.id,
        config=config.to_wire(),
        strengths=[config.alpha],
        metrics=metrics,
        artifact_paths=sorted(artifacts),
        errors=errors,
    )
    (out_dir / "report.json").write_text(report_to_json(report), encoding="utf-8")
    print(f"edited {task.id} in {elapsed:.3f}s -> {out_dir}")
    return 0


def cmd_baseline(args) -> int:
    task = load_task(args.task)
    model = _resolve_model(args, task)
    if args.steps < 1:
        raise UsageError(f"steps must be a positive integer, got {args.steps}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    trajectory = baseline_sample(model, task.x_orig, task.condition, args.steps, args.seed)
    write_pgm(trajectory.final, out_dir / "baseline.pgm")
    print(f"baseline for {task.id} -> {out_dir / 'baseline.pgm'}")
    return 0


def cmd_sweep(args) -> int:
    task = load_task(args.task)
    model = _resolve_model(args, task)
    strengths = _parse_floats(args.strengths, "--strengths")
    _check_strengths(strengths, args.allow_extrapolation)
    config = _config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    images, _, metrics = run_sweep(model, task, config, strengths)
    elapsed = time.perf_counter() - started

    artifacts = []
    for k, image in enumerate(images):
        if image.shape[0] == 1:
            name = f"edit_a{k:02d}.pgm"
            write_pgm(image, out_dir / name)
            artifacts.append(name)
    errors = metrics.pop("errors")
    report = ReportFile(
        task_id=task.id,
        config=config.to_wire(),
        strengths=list(strengths),
        metrics=metrics,
        artifact_paths=sorted(artifacts),
        errors=errors,
    )
    (out_dir / "report.json").write_text(report_to_json(report), encoding="utf-8")

    if args.csv:
        with open(out_dir / "per_strength.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "masked_l1", "masked_l2", "psnr", "ssim"])
            if metrics["masked_l1"] is not None:
                from .metrics import build_sweep, per_strength_metrics

                per = per_strength_metrics(build_sweep(task, images, strengths))
                for k, strength in enumerate(strengths):
                    writer.writerow(
                        [
                            repr(strength),
                            repr(per["masked_l1"][k]),
                            repr(per["masked_l2"][k]),
                            repr(per["psnr"][k]),
                            repr(per["ssim"][k]),
                        ]
                    )
    print(f"swept {task.id} over {len(strengths)} strengths in {elapsed:.3f}s -> {out_dir}")
    return 0


_ABLATE_COLUMNS = ["value", "n_tasks", "delta_smooth", "dir_score", "masked_l1", "masked_l2", "psnr", "ssim"]


def ablation_table(model_for, tasks, parameter, values, base_config, strengths):
    """One row per grid value, metric columns averaged over defined tasks.

    ``model_for(task)`` supplies the velocity model; per-task seeds derive
    from the base seed by task index. Undefined per-task metrics are
    skipped; a column with no defined task at all averages to None.
    """
    rows = []
    for value in values:
        if parameter == "tau":
            config = replace(base_config, tau=float(value))
        else:
            config = replace(base_config, intervention_steps=int(value))
        config.validate()
        collected = {k: [] for k in ("delta_smooth", "dir_score", "masked_l1", "masked_l2", "psnr", "ssim")}
        for index, task in enumerate(tasks):
            cfg = replace(config, seed=config.seed + index)
            _, _, metrics = run_sweep(model_for(task), task, cfg, strengths)
            for key in collected:
                if metrics[key] is None:
                    continue
                if key in ("psnr", "ssim"):
                    collected[key].append(float(np.mean(metrics[key])))
                else:
                    collected[key].append(metrics[key])
        row = {"value": float(value), "n_tasks": len(tasks)}
        for key, vals in collected.items():
            row[key] = float(np.mean(vals)) if vals else None
        rows.append(row)
    return rows


def cmd_ablate(args) -> int:
    values = _parse_floats(args.values, "--values")
    if len(values) < 2:
        raise UsageError("need at least 2 grid values to ablate")
    tasks = list(load_task_dir(args.task_dir).values())
    if len(tasks) < 10:
        raise UsageError(f"need at least 10 tasks for trend statistics, got {len(tasks)}")
    if args.param == "N":
        if any(v != int(v) or v < 0 for v in values):
            raise UsageError("N values must be non-negative integers")
    strengths = _parse_floats(args.strengths, "--strengths")
    _check_strengths(strengths, args.allow_extrapolation)

    if args.model:
        net = load_model(args.model)
        model_for = lambda task: net
    elif args.analytic:
        model_for = analytic_edit_model
    else:
        raise UsageError("one of --model or --analytic is required")

    base = InterventionConfig(
        steps=args.steps,
        intervention_steps=args.intervene,
        tau=args.tau,
        epsilon=args.epsilon,
        seed=args.seed,
    )
    try:
        base.validate()
    except ValueError as exc:
        raise UsageError(str(exc))

    rows = ablation_table(model_for, tasks, args.param, values, base, strengths)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_ABLATE_COLUMNS)
        for row in rows:
            writer.writerow(["" if row[c] is None else repr(row[c]) for c in _ABLATE_COLUMNS])
    print(f"ablated {args.param} over {len(values)} values x {len(tasks)} tasks -> {out_path}")
    return 0


def cmd_train(args) -> int:
    tasks = list(load_task_dir(args.task_dir).values())
    if not tasks:
        raise UsageError(f"no tasks found in {args.task_dir}")
    config = TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        iterations=args.iterations,
        seed=args.seed,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc))
    net = ToyVelocityNet(tasks[0].shape, seed=args.seed)
    net, curve = train(net, tasks, config)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(net, out_path)
    loss_path = out_path.with_suffix(".loss.csv")
    with open(loss_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, loss in enumerate(curve):
            writer.writerow([i, repr(float(loss))])
    print(f"trained on {len(tasks)} tasks: loss {curve[0]:.3f} -> {curve[-1]:.3f}, model at {out_path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    tasks = load_task_dir(args.task_dir)
    net = load_model(args.model) if args.model else None
    app = create_app(tasks, net)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _add_model_flags(p):
    p.add_argument("--model", help="path to a trained model file")
    p.add_argument("--analytic", action="store_true", help="use the exact point-mass editor")


def _add_config_flags(p, tau_default=0.4):
    p.add_argument("--steps", type=int, default=6, help="sampling steps (default 6)")
    p.add_argument("--intervene", type=int, default=1, help="intervention steps (default 1)")
    p.add_argument("--tau", type=float, default=tau_default, help="similarity threshold")
    p.add_argument("--epsilon", type=float, default=1e-8, help="similarity stabilizer")
    p.add_argument("--seed", type=int, default=0, help="noise seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowsteer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tasks", help="generate a synthetic edit-task suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--shape", default="1x16x16")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("edit", help="run one intervention edit")
    p.add_argument("--task", required=True)
    _add_model_flags(p)
    _add_config_flags(p, tau_default=0.4)
    p.add_argument("--alpha", type=float, default=1.0, help="blend coefficient")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("baseline", help="plain sampler with no intervention")
    p.add_argument("--task", required=True)
    _add_model_flags(p)
    p.add_argument("--steps", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="edit at several strengths and score the trajectory")
    p.add_argument("--task", required=True)
    _add_model_flags(p)
    _add_config_flags(p, tau_default=0.8)
    p.add_argument("--strengths", default=",".join(str(s) for s in DEFAULT_STRENGTHS))
    p.add_argument("--allow-extrapolation", action="store_true")
    p.add_argument("--csv", action="store_true", help="also write per-strength metrics CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="grid a parameter over a task suite")
    p.add_argument("--param", choices=("tau", "N"), required=True)
    p.add_argument("--values", required=True, help="comma-separated grid values")
    p.add_argument("--task-dir", required=True)
    _add_model_flags(p)
    _add_config_flags(p, tau_default=0.8)
    p.add_argument("--strengths", default=",".join(str(s) for s in DEFAULT_STRENGTHS))
    p.add_argument("--allow-extrapolation", action="store_true")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("train", help="train the toy velocity network on a task suite")
    p.add_argument("--task-dir", required=True)
    p.add_argument("--learning-rate", type=float, default=0.002)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--iterations", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output model path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("serve", help="HTTP service over a task directory")
    p.add_argument("--task-dir", required=True)
    p.add_argument("--model", help="path to a trained model file (analytic editor otherwise)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ShapeMismatchError, NonFiniteVelocityError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
