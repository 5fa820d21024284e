"""Command-line surface: restore, session-replay, bench, fixtures, serve."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from idip.cli import main
from idip.dip import DamageMask
from idip.metrics import read_records
from idip.store import load_image, save_image, save_mask


TINY_CONFIG = {
    "depth": 2,
    "channels": [3, 4],
    "noise_channels": 2,
    "iterations_per_phase": 2,
}


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


def build_triplet(root, name="t0", size=8, with_truth=True, seed=0):
    rng = np.random.default_rng(seed)
    folder = root / name
    folder.mkdir(parents=True)
    truth = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    grid = (rng.uniform(0, 1, (size, size)) < 0.7).astype(np.uint8)
    grid[0, 0] = 1
    corrupted = truth.copy()
    corrupted[grid == 0] = 0
    save_image(corrupted, folder / "corrupted.png")
    save_mask(DamageMask(grid), folder / "mask.png")
    if with_truth:
        save_image(truth, folder / "truth.png")
    return folder


class TestRestore:
    def test_single_iteration_emits_one_image(self, runner, config_path, tmp_path):
        triplet = build_triplet(tmp_path)
        out = tmp_path / "result.png"
        res = runner.invoke(main, ["restore", str(triplet), "--iterations", "1",
                                   "--config", str(config_path), "--out", str(out), "--quiet"])
        assert res.exit_code == 0, res.output
        assert out.exists()
        assert load_image(out).shape == (8, 8, 3)
        assert "DSSIM" in res.output  # metric table printed

    def test_metrics_records_written_next_to_output(self, runner, config_path, tmp_path):
        triplet = build_triplet(tmp_path)
        out = tmp_path / "result.png"
        res = runner.invoke(main, ["restore", str(triplet), "--iterations", "1",
                                   "--config", str(config_path), "--out", str(out), "--quiet"])
        assert res.exit_code == 0, res.output
        (record,) = read_records(tmp_path / "result.metrics.jsonl")
        assert record.image_id == "t0"

    def test_missing_truth_warns_but_restores(self, runner, config_path, tmp_path):
        triplet = build_triplet(tmp_path, with_truth=False)
        res = runner.invoke(main, ["restore", str(triplet), "--iterations", "1",
                                   "--config", str(config_path), "--quiet"])
        assert res.exit_code == 0, res.output
        assert (triplet / "restored.png").exists()
        assert "metrics skipped" in res.output

    def test_incomplete_triplet_fails_with_diagnostic(self, runner, config_path, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        res = runner.invoke(main, ["restore", str(empty), "--config", str(config_path)])
        assert res.exit_code != 0
        assert "corrupted.png" in res.output

    def test_identical_command_lines_are_byte_identical(self, runner, config_path, tmp_path):
        triplet = build_triplet(tmp_path)
        outs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            res = runner.invoke(main, ["restore", str(triplet), "--iterations", "2",
                                       "--seed", "3", "--config", str(config_path),
                                       "--out", str(out), "--quiet", "--deterministic"])
            assert res.exit_code == 0, res.output
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestSessionReplay:
    def test_scripted_two_phase_run(self, runner, config_path, tmp_path):
        triplet = build_triplet(tmp_path)
        script = tmp_path / "strokes.json"
        script.write_text(json.dumps({
            "phases": 2,
            "strokes": [{"phase": 1, "mode": "guidance", "color": [1.0, 0.0, 0.0],
                         "radius": 2, "points": [[4, 4]]}],
        }))
        res = runner.invoke(main, ["session-replay", str(triplet), "--strokes", str(script),
                                   "--iterations", "1", "--config", str(config_path), "--quiet"])
        assert res.exit_code == 0, res.output
        assert "2 phases" in res.output
        assert (triplet / "replayed.png").exists()

    def test_empty_script_matches_doubled_restore(self, runner, config_path, tmp_path):
        triplet = build_triplet(tmp_path)
        replayed = tmp_path / "replayed.png"
        restored = tmp_path / "restored.png"
        res = runner.invoke(main, ["session-replay", str(triplet), "--phases", "2",
                                   "--iterations", "2", "--seed", "1",
                                   "--config", str(config_path), "--out", str(replayed), "--quiet"])
        assert res.exit_code == 0, res.output
        res = runner.invoke(main, ["restore", str(triplet), "--iterations", "4", "--seed", "1",
                                   "--config", str(config_path), "--out", str(restored), "--quiet"])
        assert res.exit_code == 0, res.output
        assert replayed.read_bytes() == restored.read_bytes()

    def test_bad_script_fails_with_field_path(self, runner, config_path, tmp_path):
        triplet = build_triplet(tmp_path)
        script = tmp_path / "strokes.json"
        script.write_text(json.dumps({"strokes": [{"phase": 0, "mode": "wat",
                                                   "radius": 1, "points": [[0, 0]]}]}))
        res = runner.invoke(main, ["session-replay", str(triplet), "--strokes", str(script),
                                   "--config", str(config_path)])
        assert res.exit_code != 0
        assert "strokes[0].mode" in res.output


class TestBench:
    def test_three_triplets_three_records(self, runner, config_path, tmp_path):
        root = tmp_path / "data"
        for i in range(3):
            build_triplet(root, name=f"t{i}", seed=i)
        res = runner.invoke(main, ["bench", str(root), "--iterations", "1",
                                   "--config", str(config_path), "--deterministic"])
        assert res.exit_code == 0, res.output
        records = read_records(root / "bench" / "records.jsonl")
        assert [r.image_id for r in records] == ["t0", "t1", "t2"]
        for i in range(3):
            assert (root / "bench" / f"t{i}.png").exists()
        assert "mean" in res.output

    def test_missing_truth_skips_metrics_row(self, runner, config_path, tmp_path):
        root = tmp_path / "data"
        build_triplet(root, name="has", seed=0)
        build_triplet(root, name="nope", seed=1, with_truth=False)
        res = runner.invoke(main, ["bench", str(root), "--iterations", "1",
                                   "--config", str(config_path), "--deterministic"])
        assert res.exit_code == 0, res.output
        assert "nope has no truth.png" in res.output
        records = read_records(root / "bench" / "records.jsonl")
        assert [r.image_id for r in records] == ["has"]
        assert (root / "bench" / "nope.png").exists()  # restored anyway

    def test_empty_root_fails(self, runner, config_path, tmp_path):
        root = tmp_path / "nothing"
        root.mkdir()
        res = runner.invoke(main, ["bench", str(root), "--config", str(config_path)])
        assert res.exit_code != 0
        assert "no triplets" in res.output


class TestFixtures:
    def test_generates_three_kinds(self, runner, tmp_path):
        root = tmp_path / "fx"
        res = runner.invoke(main, ["fixtures", "--root", str(root), "--size", "16",
                                   "--damage", "0.2", "--seed", "1"])
        assert res.exit_code == 0, res.output
        for kind in ("gradient", "texture", "checker"):
            assert (root / kind / "corrupted.png").exists()
            assert (root / kind / "mask.png").exists()
            assert (root / kind / "truth.png").exists()
            assert kind in res.output


class TestTopLevel:
    def test_version_flag(self, runner):
        res = runner.invoke(main, ["--version"])
        assert res.exit_code == 0
        assert "idip" in res.output

    def test_help_lists_commands(self, runner):
        res = runner.invoke(main, ["--help"])
        assert res.exit_code == 0
        for command in ("restore", "session-replay", "bench", "fixtures", "serve"):
            assert command in res.output
