import math

import numpy as np
import pytest

from flowsteer import make_task_suite
from flowsteer.fileio import (
    PgmFormatError,
    ReportFile,
    load_task,
    load_task_dir,
    parse_pgm,
    pgm_bytes,
    quantize_u16,
    read_pgm,
    report_from_json,
    report_to_json,
    save_task,
    task_from_json,
    task_to_json,
    write_pgm,
    write_task_suite,
)


class TestPgm:
    def test_roundtrip_error_bound(self, rng):
        grid = rng.uniform(size=(1, 16, 16))
        decoded = parse_pgm(pgm_bytes(grid))
        assert decoded.shape == grid.shape
        assert np.max(np.abs(decoded - grid)) < 1e-4

    def test_known_byte_layout(self):
        grid = np.array([[[0.0, 1.0], [0.5, 0.25]]])
        blob = pgm_bytes(grid)
        header = b"P5\n2 2\n65535\n"
        assert blob.startswith(header)
        data = blob[len(header):]
        samples = np.frombuffer(data, dtype=">u2").reshape(2, 2)
        expected = quantize_u16(grid[0])
        np.testing.assert_array_equal(samples, expected)
        assert samples[0, 0] == 0 and samples[0, 1] == 65535

    def test_clamps_out_of_range(self):
        grid = np.array([[[-0.5, 1.5]]])
        decoded = parse_pgm(pgm_bytes(grid))
        np.testing.assert_allclose(decoded, [[[0.0, 1.0]]])

    def test_comment_tolerant_parser(self):
        blob = b"P5\n# a comment\n2 1\n65535\n" + (b"\x00\x01" * 2)
        decoded = parse_pgm(blob)
        assert decoded.shape == (1, 1, 2)

    def test_parse_errors(self):
        with pytest.raises(PgmFormatError, match="magic"):
            parse_pgm(b"P6\n1 1\n65535\n\x00\x00")
        with pytest.raises(PgmFormatError):
            parse_pgm(b"P5\n2 2\n65535\n\x00\x00")  # short data
        with pytest.raises(PgmFormatError, match="maxval"):
            parse_pgm(b"P5\n1 1\n255\n\x00")
        with pytest.raises(PgmFormatError):
            parse_pgm(b"P5\n1 1")

    def test_file_roundtrip(self, tmp_path, rng):
        grid = rng.uniform(size=(1, 4, 4))
        write_pgm(grid, tmp_path / "img.pgm")
        decoded = read_pgm(tmp_path / "img.pgm")
        assert np.max(np.abs(decoded - grid)) < 1e-4

    def test_multichannel_rejected(self):
        with pytest.raises(ValueError):
            pgm_bytes(np.zeros((3, 2, 2)))


class TestTaskJson:
    def test_roundtrip_is_float32_exact(self):
        task = make_task_suite(3, 1)[0]
        restored = task_from_json(task_to_json(task))
        assert restored.id == task.id
        assert restored.instruction == task.instruction
        np.testing.assert_array_equal(
            restored.x_orig, task.x_orig.astype(np.float32).astype(np.float64)
        )
        np.testing.assert_array_equal(restored.gt_mask, task.gt_mask)

    def test_serialization_deterministic(self):
        task = make_task_suite(3, 1)[0]
        assert task_to_json(task) == task_to_json(task)

    def test_file_roundtrip(self, tmp_path):
        task = make_task_suite(4, 1)[0]
        save_task(task, tmp_path / "t.json")
        restored = load_task(tmp_path / "t.json")
        assert restored.id == task.id

    def test_suite_dir_roundtrip(self, tmp_path):
        tasks = make_task_suite(6, 5)
        index_path = write_task_suite(tasks, tmp_path)
        assert index_path.name == "index.json"
        loaded = load_task_dir(tmp_path)
        assert sorted(loaded) == sorted(t.id for t in tasks)
        assert len(list(tmp_path.glob("*_orig.pgm"))) == 5

    def test_empty_dir(self, tmp_path):
        assert load_task_dir(tmp_path) == {}


class TestReportFile:
    def _report(self):
        return ReportFile(
            task_id="t1-000",
            config={"T": 6, "N": 1, "tau": 0.4, "alpha": 1.0, "epsilon": 1e-8, "seed": 0},
            strengths=[0.2, 0.4],
            metrics={
                "delta_smooth": 0.123456789012345,
                "dir_score": None,
                "masked_l1": 0.01,
                "masked_l2": 0.02,
                "psnr": [math.inf, 41.5],
                "ssim": [1.0, 0.999],
            },
            artifact_paths=["edit_a00.pgm", "edit_a01.pgm"],
            errors=["dir_score: strengths must be nonzero when normalizing by strength"],
        )

    def test_roundtrip_identity(self):
        report = self._report()
        assert report_from_json(report_to_json(report)) == report

    def test_infinity_encoded_as_string(self):
        text = report_to_json(self._report())
        assert '"inf"' in text
        assert "Infinity" not in text

    def test_full_precision(self):
        text = report_to_json(self._report())
        assert "0.123456789012345" in text

    def test_missing_field_rejected(self):
        with pytest.raises(ValueError, match="missing"):
            report_from_json('{"task_id": "x"}')

    def test_deterministic_bytes(self):
        report = self._report()
        assert report_to_json(report) == report_to_json(report)
