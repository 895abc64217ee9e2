"""Verification tests for the command-line interface: flag parsing,
output file schemas, determinism of emitted files, and exit codes."""

import json
import math
import subprocess
import sys

import pytest

from mibench.cli import main


def run_cli(args):
    return main(list(args))


FAST = [
    "--d", "2", "--batch-size", "8", "--iters-per-step", "5",
    "--steps", "0.5", "1.0",
]


class TestParsing:
    def test_defaults(self):
        from mibench.cli import build_parser

        args = build_parser().parse_args(["staircase"])
        assert args.d == 20
        assert args.batch_size == 64
        assert args.lr == 5e-4
        assert args.iters_per_step == 4000
        assert args.steps == [2, 4, 6, 8, 10]
        assert args.estimator == "fdime"

    def test_unknown_flag_is_usage_error(self):
        assert run_cli(["staircase", "--no-such-flag"]) != 0

    def test_batch_size_one_is_usage_error(self, tmp_path):
        code = run_cli(
            ["staircase", "--batch-size", "1", "--iters-per-step", "2",
             "--steps", "1", "--out", str(tmp_path)]
        )
        assert code != 0

    def test_missing_subcommand_is_usage_error(self):
        assert run_cli([]) != 0

    def test_cubic_flag_maps_through(self):
        from mibench.cli import build_parser, _train_config

        args = build_parser().parse_args(
            ["staircase", "--estimator", "fdime", "--divergence", "gan", "--cubic",
             "--iters-per-step", "5"]
        )
        cfg = _train_config(args)
        assert cfg.data.cubic
        assert cfg.estimator.label == "gan-dime"


class TestStaircaseOutputs:
    def test_series_and_summary_files(self, tmp_path):
        code = run_cli(["staircase", *FAST, "--out", str(tmp_path)])
        assert code == 0
        lines = (tmp_path / "series.csv").read_text().splitlines()
        assert lines[0] == "iteration,objective,mi_estimate"
        assert len(lines) == 1 + 10  # 2 steps x 5 iterations
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["config"]["generator"] == "numpy-pcg64"
        assert summary["seeds"] == [0]
        assert len(summary["per_seed"][0]["steps"]) == 2

    def test_rerun_is_byte_identical(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        run_cli(["staircase", *FAST, "--seed", "3", "--out", str(a_dir)])
        run_cli(["staircase", *FAST, "--seed", "3", "--out", str(b_dir)])
        assert (a_dir / "series.csv").read_bytes() == (b_dir / "series.csv").read_bytes()
        assert (a_dir / "summary.json").read_bytes() == (b_dir / "summary.json").read_bytes()

    def test_summary_mse_identity(self, tmp_path):
        run_cli(["staircase", *FAST, "--out", str(tmp_path)])
        summary = json.loads((tmp_path / "summary.json").read_text())
        for step in summary["per_seed"][0]["steps"]:
            assert step["mse"] == pytest.approx(
                step["bias"] ** 2 + step["variance"], abs=1e-9
            )

    def test_bits_flag_rescales_display(self, tmp_path):
        nats_dir, bits_dir = tmp_path / "nats", tmp_path / "bits"
        run_cli(["staircase", *FAST, "--out", str(nats_dir)])
        run_cli(["staircase", *FAST, "--bits", "--out", str(bits_dir)])
        nats = json.loads((nats_dir / "summary.json").read_text())
        bits = json.loads((bits_dir / "summary.json").read_text())
        n_bias = nats["per_seed"][0]["steps"][0]["bias"]
        b_bias = bits["per_seed"][0]["steps"][0]["bias"]
        assert b_bias == pytest.approx(n_bias / math.log(2), rel=1e-9)


class TestSingleRun:
    def test_one_iteration_series(self, tmp_path):
        code = run_cli(
            ["single-run", "--d", "2", "--batch-size", "8", "--iters-per-step", "1",
             "--target-mi", "1", "--out", str(tmp_path)]
        )
        assert code == 0
        lines = (tmp_path / "series.csv").read_text().splitlines()
        assert len(lines) == 2

    def test_summary_echoes_true_mi(self, tmp_path):
        run_cli(
            ["single-run", "--d", "2", "--batch-size", "8", "--iters-per-step", "3",
             "--target-mi", "1.5", "--out", str(tmp_path)]
        )
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["true_mi"] == pytest.approx(1.5, abs=1e-10)
        assert summary["diverged"] is False


class TestOracleCheck:
    def test_summary_contents(self, tmp_path):
        code = run_cli(
            ["oracle-check", "--d", "1", "--target-mi", "1", "--samples", "200",
             "--trials", "40", "--out", str(tmp_path)]
        )
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["true_mi"] == pytest.approx(1.0, abs=1e-10)
        assert summary["mc_variance"] > 0.0
        assert summary["predicted_variance"] > 0.0


class TestConfigFile:
    def test_config_file_supplies_defaults(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("d=3\nbatch_size=8\niters_per_step=4\nsteps=0.5 1.0\n")
        out = tmp_path / "out"
        code = run_cli(["staircase", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["d"] == 3
        assert summary["config"]["batch_size"] == 8

    def test_explicit_flags_override_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("d=3\nbatch_size=8\niters_per_step=4\nsteps=0.5 1.0\n")
        out = tmp_path / "out"
        run_cli(["staircase", "--config", str(cfg), "--d", "5", "--out", str(out)])
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["d"] == 5


class TestInstalledEntryPoint:
    def test_module_invocation(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "mibench.cli", "staircase", *FAST,
             "--out", str(tmp_path)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert (tmp_path / "summary.json").exists()
