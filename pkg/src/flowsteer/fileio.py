"""On-disk interchange formats: 16-bit PGM images, task JSON, report JSON.

Core arithmetic stays in float64; serialized grids are float32. All JSON is
emitted with sorted keys and full-precision number repr so reruns with the
same flags produce byte-identical artifacts. ``+inf`` (the PSNR sentinel for
identical images) is written as the string ``"inf"`` because strict JSON has
no infinity literal.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytic import EditTask
from .validation import as_image_grid

__all__ = [
    "PgmFormatError",
    "ReportFile",
    "dequantize_u16",
    "load_task",
    "load_task_dir",
    "parse_pgm",
    "pgm_bytes",
    "quantize_u16",
    "read_pgm",
    "report_from_json",
    "report_to_json",
    "save_task",
    "task_from_json",
    "task_to_json",
    "write_pgm",
    "write_task_suite",
]

PGM_MAXVAL = 65535


class PgmFormatError(ValueError):
    """A PGM payload is malformed."""


def quantize_u16(grid: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round (half to even) onto 16-bit samples."""
    return np.rint(np.clip(grid, 0.0, 1.0) * PGM_MAXVAL).astype(np.uint16)


def dequantize_u16(samples: np.ndarray) -> np.ndarray:
    return samples.astype(np.float64) / PGM_MAXVAL


def pgm_bytes(grid) -> bytes:
    """Encode a single-channel grid as binary PGM (P5), 16-bit big-endian."""
    grid = as_image_grid(grid)
    if grid.shape[0] != 1:
        raise ValueError(f"PGM holds one channel, got {grid.shape[0]}")
    _, height, width = grid.shape
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    samples = quantize_u16(grid[0]).astype(">u2")
    return header + samples.tobytes()


def write_pgm(grid, path) -> None:
    Path(path).write_bytes(pgm_bytes(grid))


def parse_pgm(blob: bytes) -> np.ndarray:
    """Decode a 16-bit binary PGM into a (1, H, W) grid of [0, 1] floats."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(blob):
            raise PgmFormatError("truncated header")
        ch = blob[pos : pos + 1]
        if ch == b"#":
            nl = blob.find(b"\n", pos)
            pos = len(blob) if nl < 0 else nl + 1
            continue
        if ch.isspace():
            pos += 1
            continue
        end = pos
        while end < len(blob) and not blob[end : end + 1].isspace():
            end += 1
        tokens.append(blob[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise PgmFormatError(f"bad magic {tokens[0]!r}, expected P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise PgmFormatError("non-numeric header field") from exc
    if maxval != PGM_MAXVAL:
        raise PgmFormatError(f"maxval {maxval} unsupported, expected {PGM_MAXVAL}")
    pos += 1  # single whitespace byte separates header from samples
    data = blob[pos:]
    expected = width * height * 2
    if len(data) != expected:
        raise PgmFormatError(f"{len(data)} sample bytes, expected {expected}")
    samples = np.frombuffer(data, dtype=">u2").reshape(height, width)
    return dequantize_u16(samples)[None, :, :]


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def _encode_grid(arr: np.ndarray) -> dict:
    return {
        "shape": [int(s) for s in arr.shape],
        "dtype": "float32",
        "data": base64.b64encode(np.asarray(arr, dtype="<f4").tobytes()).decode("ascii"),
    }


def _encode_mask(mask: np.ndarray) -> dict:
    return {
        "shape": [int(s) for s in mask.shape],
        "dtype": "uint8",
        "data": base64.b64encode(np.asarray(mask, dtype=np.uint8).tobytes()).decode("ascii"),
    }


def _decode_grid(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    shape = tuple(obj["shape"])
    if obj["dtype"] == "float32":
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    if obj["dtype"] == "uint8":
        return np.frombuffer(raw, dtype=np.uint8).astype(bool).reshape(shape)
    raise ValueError(f"unknown grid dtype {obj['dtype']!r}")


def task_to_json(task: EditTask) -> str:
    doc = {
        "id": task.id,
        "instruction": task.instruction,
        "shape": [int(s) for s in task.shape],
        "x_orig": _encode_grid(task.x_orig),
        "x_edit": _encode_grid(task.x_edit),
        "gt_mask": _encode_mask(task.gt_mask),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def task_from_json(text: str) -> EditTask:
    doc = json.loads(text)
    x_orig = _decode_grid(doc["x_orig"])
    x_edit = _decode_grid(doc["x_edit"])
    return EditTask(
        id=doc["id"],
        x_orig=x_orig,
        instruction=int(doc["instruction"]),
        x_edit=x_edit,
        gt_mask=_decode_grid(doc["gt_mask"]),
    )


def save_task(task: EditTask, path) -> None:
    Path(path).write_text(task_to_json(task), encoding="utf-8")


def load_task(path) -> EditTask:
    return task_from_json(Path(path).read_text(encoding="utf-8"))


def write_task_suite(tasks, out_dir) -> Path:
    """Write one JSON per task plus PGM previews and an index file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for i, task in enumerate(tasks):
        stem = f"task_{i:03d}"
        save_task(task, out / f"{stem}.json")
        if task.shape[0] == 1:
            write_pgm(task.x_orig, out / f"{stem}_orig.pgm")
            write_pgm(task.x_edit, out / f"{stem}_edit.pgm")
            write_pgm(task.gt_mask.astype(np.float64), out / f"{stem}_mask.pgm")
        index.append(
            {
                "id": task.id,
                "file": f"{stem}.json",
                "instruction": task.instruction,
                "shape": [int(s) for s in task.shape],
            }
        )
    index_path = out / "index.json"
    index_path.write_text(
        json.dumps({"tasks": index}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return index_path


def load_task_dir(path) -> dict[str, EditTask]:
    """Load every task listed by a directory's index; {} for an empty dir."""
    root = Path(path)
    index_path = root / "index.json"
    tasks: dict[str, EditTask] = {}
    if not index_path.exists():
        return tasks
    index = json.loads(index_path.read_text(encoding="utf-8"))
    for entry in index["tasks"]:
        task = load_task(root / entry["file"])
        tasks[task.id] = task
    return tasks


@dataclass
class ReportFile:
    """One run's results: config, strengths, metric values, artifact names.

    ``metrics`` carries scalars ``delta_smooth``, ``dir_score``,
    ``masked_l1``, ``masked_l2`` (null when undefined for the run) and
    per-strength lists ``psnr`` and ``ssim``. ``errors`` records per-task
    metric preconditions that failed instead of aborting the run.
    """

    task_id: str
    config: dict
    strengths: list
    metrics: dict
    artifact_paths: list
    errors: list = field(default_factory=list)


def _sanitize(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    return value


def _restore(value):
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    if isinstance(value, dict):
        return {k: _restore(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_restore(v) for v in value]
    return value


_REPORT_KEYS = ("task_id", "config", "strengths", "metrics", "artifact_paths", "errors")


def report_to_json(rf: ReportFile) -> str:
    doc = {
        "task_id": rf.task_id,
        "config": _sanitize(rf.config),
        "strengths": _sanitize(list(rf.strengths)),
        "metrics": _sanitize(rf.metrics),
        "artifact_paths": list(rf.artifact_paths),
        "errors": list(rf.errors),
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def report_from_json(text: str) -> ReportFile:
    doc = json.loads(text)
    missing = [k for k in _REPORT_KEYS if k not in doc]
    if missing:
        raise ValueError(f"report is missing fields: {missing}")
    return ReportFile(
        task_id=doc["task_id"],
        config=_restore(doc["config"]),
        strengths=_restore(doc["strengths"]),
        metrics=_restore(doc["metrics"]),
        artifact_paths=list(doc["artifact_paths"]),
        errors=list(doc["errors"]),
    )
