import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

import pytest
import subprocess
import yaml

from hetv2v.csvio import read_csv

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '../..'))


def run_cli(args, cwd, cache=None):
    env = dict(os.environ)
    env["PYTHONPATH"] = PROJECT_ROOT + os.pathsep + env.get("PYTHONPATH", "")
    if cache is not None:
        env["HETV2V_CACHE_DIR"] = str(cache)
    return subprocess.run(
        [sys.executable, "-m", "hetv2v.cli"] + list(args),
        capture_output=True,
        text=True,
        cwd=str(cwd),
        env=env,
    )


@pytest.fixture
def manifest_file(tmp_path, sample_manifest):
    sample_manifest["calibration"]["cbr_levels"] = [0.0, 0.2]
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(sample_manifest))
    return path


class TestCLI:
    def test_cli_help(self, tmp_path):
        """Test that CLI help command works"""
        result = run_cli(["--help"], tmp_path)
        assert result.returncode == 0
        assert "usage" in result.stdout.lower()
        for command in ("capacity", "calibrate", "simulate", "cost"):
            assert command in result.stdout

    def test_no_command_prints_help(self, tmp_path):
        result = run_cli([], tmp_path)
        assert result.returncode == 0
        assert "usage" in result.stdout.lower()

    def test_cost_command(self, tmp_path):
        result = run_cli(["cost", "--out", str(tmp_path / "out")], tmp_path)
        assert result.returncode == 0
        assert "Wrote 404 rows" in result.stdout
        table, provenance = read_csv(tmp_path / "out" / "cost.csv")
        assert len(table) == 404
        assert provenance["seed"] == "1"
        assert provenance["tool"].startswith("hetv2v")
        row = table[(table.n_neighbors == 50) & (table.cpu_ghz == 1.0)].iloc[0]
        assert row.cycles_per_s == 277071

    def test_cost_measurement_periods(self, tmp_path):
        result = run_cli(["cost", "--out", str(tmp_path), "--t-meas", "0.1", "0.2"], tmp_path)
        assert result.returncode == 0, result.stderr
        table, _ = read_csv(tmp_path / "cost.csv")
        assert len(table) == 808
        assert sorted(set(table.t_meas_s)) == [0.1, 0.2]
        fast = table[(table.n_neighbors == 50) & (table.cpu_ghz == 1.0) & (table.t_meas_s == 0.1)].iloc[0]
        assert fast.overhead_bps == 3468000

        result = run_cli(["cost", "--out", str(tmp_path), "--t-meas", "0"], tmp_path)
        assert result.returncode == 2

    def test_capacity_command(self, tmp_path):
        result = run_cli(["capacity", "--out", str(tmp_path / "out"), "--seed", "5"], tmp_path)
        assert result.returncode == 0
        table, provenance = read_csv(tmp_path / "out" / "capacity.csv")
        assert len(table) == 18
        assert provenance["seed"] == "5"
        assert set(table.rate_mbps) == {0.5, 1.0, 1.5}

    def test_manifest_in_working_directory(self, tmp_path, sample_manifest):
        (tmp_path / "config.yaml").write_text(yaml.safe_dump(sample_manifest))
        result = run_cli(["capacity"], tmp_path)
        assert result.returncode == 0
        table, provenance = read_csv(tmp_path / "results" / "capacity.csv")
        assert len(table) == 6
        assert provenance["seed"] == "3"

    def test_validation_errors_exit_2(self, tmp_path, sample_manifest):
        sample_manifest["simulation"]["schemes"] = ["greedy"]
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(sample_manifest))
        result = run_cli(["simulate", "--manifest", str(path)], tmp_path)
        assert result.returncode == 2
        assert "valid schemes" in result.stderr

        result = run_cli(["cost", "--jobs", "0"], tmp_path)
        assert result.returncode == 2
        assert result.stderr.startswith("Error:")

        result = run_cli(["cost", "--manifest", str(tmp_path / "missing.yaml")], tmp_path)
        assert result.returncode == 2

    def test_calibrate_uses_the_cache(self, tmp_path, manifest_file):
        cache = tmp_path / "cache"
        args = ["calibrate", "--manifest", str(manifest_file)]
        first = run_cli(args, tmp_path, cache)
        assert first.returncode == 0, first.stderr
        assert "Calibrated 5 RAT(s), 0 from cache" in first.stdout
        files = sorted(cache.glob("pdr_*.csv"))
        assert len(files) == 5
        _, header = read_csv(files[0])
        assert header["format"] and len(header["cache_key"]) == 64

        second = run_cli(args, tmp_path, cache)
        assert second.returncode == 0
        assert "Calibrated 0 RAT(s), 5 from cache" in second.stdout

        files[0].write_text("not,a,cache,file\n")
        third = run_cli(args, tmp_path, cache)
        assert third.returncode == 0
        assert "Calibrated 1 RAT(s), 4 from cache" in third.stdout
        assert "corrupted cache file" in third.stderr

    def test_new_seed_misses_the_cache(self, tmp_path, manifest_file):
        cache = tmp_path / "cache"
        run_cli(["calibrate", "--manifest", str(manifest_file)], tmp_path, cache)
        result = run_cli(["calibrate", "--manifest", str(manifest_file), "--seed", "4"], tmp_path, cache)
        assert result.returncode == 0
        assert "Calibrated 5 RAT(s), 0 from cache" in result.stdout
        assert len(list(cache.glob("pdr_*.csv"))) == 10

    def test_simulate_command(self, tmp_path, manifest_file):
        out = tmp_path / "out"
        result = run_cli(["simulate", "--manifest", str(manifest_file), "--out", str(out)], tmp_path)
        assert result.returncode == 0, result.stderr
        assert "Wrote 2 run(s)" in result.stdout
        summary, provenance = read_csv(out / "simulate_summary.csv")
        assert list(summary.scheme) == ["random", "single_rat(1)"]
        assert provenance["seed"] == "3"
        run_dir = out / "simulate" / "single_rat_1_d20_s3"
        for name in ("metrics.csv", "changes.csv", "summary.csv"):
            assert (run_dir / name).exists()
        changes, _ = read_csv(run_dir / "changes.csv")
        assert changes.empty
        stored = yaml.safe_load((run_dir / "config.yaml").read_text())
        assert stored["scheme"] == "single_rat(1)"
        assert stored["seed"] == 3 and stored["density"] == 20.0

    def test_simulate_carhet(self, tmp_path, sample_manifest):
        sample_manifest["calibration"]["cbr_levels"] = [0.0, 0.2]
        sample_manifest["simulation"]["schemes"] = ["carhet"]
        path = tmp_path / "carhet.yaml"
        path.write_text(yaml.safe_dump(sample_manifest))
        cache = tmp_path / "cache"
        result = run_cli(["simulate", "--manifest", str(path), "--out", str(tmp_path / "out")], tmp_path, cache)
        assert result.returncode == 0, result.stderr
        assert "Wrote 1 run(s)" in result.stdout
        assert len(list(cache.glob("pdr_*.csv"))) == 5
        summary, _ = read_csv(tmp_path / "out" / "simulate_summary.csv")
        assert summary.preselection_violations.iloc[0] == 0
