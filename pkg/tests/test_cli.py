import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from flowsteer.cli import main
from flowsteer.fileio import read_pgm, report_from_json


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture
def task_dir(tmp_path):
    out = tmp_path / "tasks"
    assert run_cli("gen-tasks", "--seed", 7, "--count", 12, "--shape", "1x8x8", "--out", out) == 0
    return out


@pytest.fixture
def task_file(task_dir):
    return task_dir / "task_000.json"


class TestGenTasks:
    def test_writes_tasks_and_index(self, tmp_path):
        out = tmp_path / "suite"
        assert run_cli("gen-tasks", "--seed", 3, "--count", 5, "--out", out) == 0
        assert len(list(out.glob("task_*.json"))) == 5
        index = json.loads((out / "index.json").read_text())
        assert len(index["tasks"]) == 5
        assert (out / "task_000_orig.pgm").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("gen-tasks", "--seed", 9, "--count", 4, "--out", out) == 0
        for name in sorted(p.name for p in a.iterdir()):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_zero_count_is_usage_error(self, tmp_path):
        assert run_cli("gen-tasks", "--count", 0, "--out", tmp_path / "x") == 1

    def test_bad_shape_is_usage_error(self, tmp_path):
        assert run_cli("gen-tasks", "--shape", "16x16", "--out", tmp_path / "x") == 1


class TestEdit:
    def test_reconstruction_matches_source_pgm(self, task_dir, task_file, tmp_path):
        out = tmp_path / "edit"
        code = run_cli(
            "edit", "--task", task_file, "--analytic", "--tau", 0.0,
            "--intervene", 6, "--steps", 6, "--seed", 5, "--out", out,
        )
        assert code == 0
        edited = (out / "edit.pgm").read_bytes()
        source = (task_dir / "task_000_orig.pgm").read_bytes()
        assert edited == source

    def test_writes_similarity_and_mask_artifacts(self, task_file, tmp_path):
        out = tmp_path / "edit"
        run_cli("edit", "--task", task_file, "--analytic", "--intervene", 2, "--out", out)
        assert (out / "similarity_step0.pgm").exists()
        assert (out / "mask_high_step1.pgm").exists()
        report = report_from_json((out / "report.json").read_text())
        assert report.config["N"] == 2
        assert "edit.pgm" in report.artifact_paths

    def test_no_intervention_equals_baseline(self, task_file, tmp_path):
        edit_out = tmp_path / "edit"
        base_out = tmp_path / "base"
        run_cli("edit", "--task", task_file, "--analytic", "--intervene", 0,
                "--seed", 3, "--out", edit_out)
        run_cli("baseline", "--task", task_file, "--analytic", "--seed", 3, "--out", base_out)
        assert (edit_out / "edit.pgm").read_bytes() == (base_out / "baseline.pgm").read_bytes()

    def test_zero_alpha_full_intervention_reconstructs(self, task_dir, task_file, tmp_path):
        out = tmp_path / "edit"
        run_cli(
            "edit", "--task", task_file, "--analytic", "--tau", 1.0, "--alpha", 0.0,
            "--intervene", 6, "--seed", 2, "--out", out,
        )
        edited = read_pgm(out / "edit.pgm")
        source = read_pgm(task_dir / "task_000_orig.pgm")
        assert np.max(np.abs(edited - source)) <= 2 / 65535

    def test_invalid_tau_is_usage_error(self, task_file, tmp_path):
        assert run_cli("edit", "--task", task_file, "--analytic", "--tau", 1.5,
                       "--out", tmp_path / "x") == 1

    def test_missing_model_choice_is_usage_error(self, task_file, tmp_path):
        assert run_cli("edit", "--task", task_file, "--out", tmp_path / "x") == 1

    def test_missing_task_file_is_runtime_error(self, tmp_path):
        assert run_cli("edit", "--task", tmp_path / "nope.json", "--analytic",
                       "--out", tmp_path / "x") == 2

    def test_determinism(self, task_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run_cli("edit", "--task", task_file, "--analytic", "--alpha", 0.7,
                    "--intervene", 3, "--seed", 11, "--out", out)
        for name in sorted(p.name for p in a.iterdir()):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestSweep:
    def test_default_strengths(self, task_file, tmp_path):
        out = tmp_path / "sweep"
        assert run_cli("sweep", "--task", task_file, "--analytic", "--out", out) == 0
        report = report_from_json((out / "report.json").read_text())
        assert report.strengths == [0.2, 0.4, 0.6, 0.8, 1.0]
        assert len(report.metrics["psnr"]) == 5

    def test_analytic_full_intervention_trajectory_is_affine(self, task_file, tmp_path):
        out = tmp_path / "sweep"
        run_cli("sweep", "--task", task_file, "--analytic", "--tau", 1.0,
                "--intervene", 6, "--out", out)
        report = report_from_json((out / "report.json").read_text())
        assert report.metrics["delta_smooth"] < 1e-9

    def test_extrapolation_gate(self, task_file, tmp_path):
        # the = form keeps argparse from reading a leading minus as a flag
        args = ["sweep", "--task", task_file, "--analytic", "--strengths=-1.0,0.5,2.0",
                "--out", tmp_path / "x"]
        assert run_cli(*args) == 1
        assert run_cli(*args, "--allow-extrapolation") == 0

    def test_duplicate_strengths_rejected(self, task_file, tmp_path):
        assert run_cli("sweep", "--task", task_file, "--analytic",
                       "--strengths", "0.5,0.5", "--out", tmp_path / "x") == 1

    def test_csv_option(self, task_file, tmp_path):
        out = tmp_path / "sweep"
        run_cli("sweep", "--task", task_file, "--analytic", "--csv", "--out", out)
        lines = (out / "per_strength.csv").read_text().strip().splitlines()
        assert lines[0] == "alpha,masked_l1,masked_l2,psnr,ssim"
        assert len(lines) == 6

    def test_determinism(self, task_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run_cli("sweep", "--task", task_file, "--analytic", "--seed", 4, "--out", out)
        for name in sorted(p.name for p in a.iterdir()):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestAblate:
    def test_tau_grid_produces_csv(self, task_dir, tmp_path):
        out = tmp_path / "ablate.csv"
        code = run_cli(
            "ablate", "--param", "tau", "--values", "0,0.2,0.4,0.6,0.8,1.0",
            "--task-dir", task_dir, "--analytic", "--out", out,
        )
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("value,n_tasks,delta_smooth,dir_score")
        assert len(lines) == 7

    def test_n_grid(self, task_dir, tmp_path):
        out = tmp_path / "ablate.csv"
        code = run_cli(
            "ablate", "--param", "N", "--values", "1,2,3,4,5,6",
            "--task-dir", task_dir, "--analytic", "--out", out,
        )
        assert code == 0
        assert len(out.read_text().strip().splitlines()) == 7

    def test_too_few_values_is_usage_error(self, task_dir, tmp_path):
        assert run_cli("ablate", "--param", "tau", "--values", "0.4",
                       "--task-dir", task_dir, "--analytic", "--out", tmp_path / "x.csv") == 1

    def test_too_few_tasks_is_usage_error(self, tmp_path):
        small = tmp_path / "small"
        run_cli("gen-tasks", "--count", 3, "--out", small)
        assert run_cli("ablate", "--param", "tau", "--values", "0,1",
                       "--task-dir", small, "--analytic", "--out", tmp_path / "x.csv") == 1

    def test_determinism(self, task_dir, tmp_path):
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            run_cli("ablate", "--param", "tau", "--values", "0,0.5,1.0",
                    "--task-dir", task_dir, "--analytic", "--seed", 2, "--out", out)
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestTrain:
    def test_train_writes_model_and_loss_csv(self, task_dir, tmp_path):
        model_path = tmp_path / "model.vfm"
        code = run_cli("train", "--task-dir", task_dir, "--iterations", 50,
                       "--batch-size", 8, "--out", model_path)
        assert code == 0
        assert model_path.exists()
        lines = (tmp_path / "model.loss.csv").read_text().strip().splitlines()
        assert lines[0] == "iteration,loss"
        assert len(lines) == 51

    def test_trained_model_usable_by_edit(self, task_dir, tmp_path):
        model_path = tmp_path / "model.vfm"
        run_cli("train", "--task-dir", task_dir, "--iterations", 50, "--batch-size", 8,
                "--out", model_path)
        out = tmp_path / "edit"
        assert run_cli("edit", "--task", task_dir / "task_001.json", "--model", model_path,
                       "--out", out) == 0
        assert (out / "edit.pgm").exists()

    def test_determinism(self, task_dir, tmp_path):
        blobs = []
        for name in ("m1.vfm", "m2.vfm"):
            path = tmp_path / name
            run_cli("train", "--task-dir", task_dir, "--iterations", 40, "--batch-size", 8,
                    "--seed", 6, "--out", path)
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1]

    def test_empty_task_dir_is_usage_error(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert run_cli("train", "--task-dir", empty, "--out", tmp_path / "m.vfm") == 1


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "flowsteer.cli", "gen-tasks", "--count", "2",
             "--out", str(tmp_path / "suite")],
            capture_output=True, text=True,
        )
        assert result.returncode == 0
        assert (tmp_path / "suite" / "index.json").exists()

    def test_unknown_flag_is_usage_error(self):
        assert main(["gen-tasks", "--nonsense"]) == 1

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
