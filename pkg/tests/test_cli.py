"""End-to-end CLI: verbs, outputs, error paths, reproducibility."""

import json

import pytest
import yaml

from pathqkd import cli
from pathqkd.scenario import dump_scenario, load_bundled_scenario


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def fast_scenario(tmp_path_factory):
    """A short-4m variant with a light schedule, for quick CLI runs."""
    scn = load_bundled_scenario("short-4m")
    scn.name = "short-4m-fast"
    for entry in range(len(scn.schedule)):
        scn.schedule[entry] = type(scn.schedule[entry])(
            scn.schedule[entry].basis_alice, scn.schedule[entry].basis_bob, 0.2)
    path = tmp_path_factory.mktemp("scen") / "fast.yaml"
    path.write_text(dump_scenario(scn))
    return path


class TestSimulate:
    def test_outputs_and_qber(self, fast_scenario, tmp_path):
        out = tmp_path / "run"
        assert run_cli("simulate", fast_scenario, "--out", out) == 0
        for name in ("counts.json", "phase_trace.csv", "run.json",
                     "scenario_snapshot.yaml", "phase_trace.png"):
            assert (out / name).exists()
        record = read_json(out / "run.json")
        assert record["seed"] == 20240713
        assert record["qber"]["qber_z"] < 0.06
        assert "scenario_digest" in record

    def test_bundled_scenario_by_name(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli("simulate", "short-4m", "--out", out,
                       "--format", "structured", "--timestamps", 0.001) == 0
        counts = read_json(out / "counts.json")
        assert len(counts["settings"]) == 9
        # Short-link operating point: QBER_Z near 2.58%.
        record = read_json(out / "run.json")
        assert record["qber"]["qber_z"] == pytest.approx(0.0258, abs=0.005)
        assert (out / "timestamps.txt").exists()

    def test_deterministic_outputs(self, fast_scenario, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_cli("simulate", fast_scenario, "--out", out1, "--seed", 99)
        run_cli("simulate", fast_scenario, "--out", out2, "--seed", 99)
        for name in ("counts.json", "phase_trace.csv", "scenario_snapshot.yaml"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_snapshot_reproduces_counts(self, fast_scenario, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_cli("simulate", fast_scenario, "--out", out1)
        run_cli("simulate", out1 / "scenario_snapshot.yaml", "--out", out2)
        assert (out1 / "counts.json").read_bytes() == (out2 / "counts.json").read_bytes()

    def test_malformed_field_diagnostic(self, fast_scenario, tmp_path, capsys):
        doc = yaml.safe_load(fast_scenario.read_text())
        doc["link"]["channel"]["detector_efficiency"] = 2.0
        bad = tmp_path / "bad.yaml"
        bad.write_text(yaml.safe_dump(doc))
        code = run_cli("simulate", bad, "--out", tmp_path / "x")
        err = capsys.readouterr().err
        assert code != 0
        assert "class=ConfigError" in err
        assert "detector_efficiency" in err


class TestTomo:
    def test_bundled_dataset_report(self, tmp_path):
        out = tmp_path / "tomo"
        assert run_cli("tomo", "mcf-80km-tomo", "--runs", 60, "--chsh-runs", 30,
                       "--out", out, "--seed", 5) == 0
        report = read_json(out / "tomo_report.json")
        assert abs(report["fidelity_mean"] - 0.857) < 0.01
        assert abs(report["overlap"] - 0.979) < 0.01
        assert report["chsh"] > 2.0
        for name in ("density_matrix.csv", "density_matrix_polar.csv",
                     "fidelity_samples.csv", "density_matrix.png",
                     "fidelity_histogram.png", "joint_probabilities.png"):
            assert (out / name).exists()

    def test_single_run_zero_std(self, tmp_path):
        out = tmp_path / "tomo1"
        assert run_cli("tomo", "short-4m", "--runs", 1, "--chsh-runs", 1,
                       "--out", out, "--resample-scale", 0.0) == 0
        report = read_json(out / "tomo_report.json")
        assert report["fidelity_std"] == 0.0

    def test_incomplete_counts_rejected(self, tmp_path, capsys):
        code = run_cli("tomo", "mcf-80km", "--out", tmp_path / "x")
        assert code != 0
        assert "class=ValidationError" in capsys.readouterr().err

    def test_deterministic(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            run_cli("tomo", "short-4m", "--runs", 25, "--chsh-runs", 10,
                    "--out", out, "--seed", 3)
        for name in ("density_matrix.csv", "fidelity_samples.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


class TestSkr:
    def test_from_counts_file(self, tmp_path):
        out = tmp_path / "skr"
        assert run_cli("skr", "mcf-80km", "--params", "mcf-80km",
                       "--out", out) == 0
        report = read_json(out / "skr_report.json")
        assert report["key_bases"] == ["Z", "X"]
        # Long-link operating point within 10%.
        assert report["skr_asymptotic_bps"] == pytest.approx(2.03, rel=0.10)
        assert (out / "qber_table.csv").exists()
        assert (out / "skr_table.csv").exists()

    def test_from_qber_values_published_table(self, tmp_path):
        out = tmp_path / "skr4m"
        assert run_cli("skr", "--qber", 0.0258, 0.0560, 0.0727,
                       "--params", "short-4m", "--blocks", "1e8,1e7,1e6,1e5",
                       "--out", out) == 0
        report = read_json(out / "skr_report.json")
        assert report["skr_asymptotic_bps"] == pytest.approx(802.57, rel=0.02)
        finite = {r["block_size"]: r["skr_fin_bps"] for r in report["finite_key"]}
        for n, target in ((10**8, 802), (10**7, 800), (10**6, 794), (10**5, 775)):
            assert finite[n] == pytest.approx(target, rel=0.02)

    def test_trivial_rate(self, tmp_path):
        out = tmp_path / "skr0"
        scn = load_bundled_scenario("short-4m")
        scn.analysis = type(scn.analysis)(f=1.1, sift_ratio=0.5, raw_rate_hz=200.0,
                                          alpha=1.0, eta=1.0)
        path = out.with_suffix(".yaml")
        path.write_text(dump_scenario(scn))
        assert run_cli("skr", "--qber", 0.0, 0.0, 0.0, "--params", path,
                       "--out", out) == 0
        report = read_json(out / "skr_report.json")
        assert report["skr_asymptotic_bps"] == pytest.approx(100.0)

    def test_missing_inputs_rejected(self, tmp_path, capsys):
        code = run_cli("skr", "--out", tmp_path / "x")
        assert code != 0
        assert "class=ConfigError" in capsys.readouterr().err


class TestCalibrate:
    def test_satisfied_targets_zero_rounds(self, tmp_path):
        targets = tmp_path / "targets.yaml"
        targets.write_text(yaml.safe_dump({
            "scenario": "single-chip",
            "targets": {"fidelity": 0.940},
        }))
        out = tmp_path / "cal"
        assert run_cli("calibrate", targets, "--out", out, "--seeds", 4,
                       "--tol", 0.02) == 0
        report = read_json(out / "calibration_report.json")
        assert report["rounds"] == 0
        assert report["converged"]
        assert (out / "single-chip.fitted.yaml").exists()

    def test_deterministic_fit(self, tmp_path):
        targets = tmp_path / "targets.yaml"
        targets.write_text(yaml.safe_dump({
            "scenario": "single-chip",
            "targets": {"fidelity": 0.940},
        }))
        fitted = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            run_cli("calibrate", targets, "--out", out, "--seeds", 3, "--tol", 0.02)
            fitted.append((out / "single-chip.fitted.yaml").read_bytes())
        assert fitted[0] == fitted[1]

    def test_contradictory_targets_fail(self, tmp_path, capsys):
        targets = tmp_path / "targets.yaml"
        targets.write_text(yaml.safe_dump({
            "scenario": "single-chip",
            "targets": {"fidelity": 0.99, "qber_x": 0.2},
        }))
        code = run_cli("calibrate", targets, "--out", tmp_path / "x")
        err = capsys.readouterr().err
        assert code != 0
        assert "class=NoConvergenceError" in err
        assert "fidelity" in err


class TestSweep:
    def test_analytic_endpoints_match_scenarios(self, tmp_path):
        out = tmp_path / "sweep"
        assert run_cli("sweep", "--near", "short-4m", "--far", "mcf-80km",
                       "--lengths", "0.004,40,80", "--no-simulate",
                       "--out", out) == 0
        report = read_json(out / "sweep_report.json")
        rows = {r["length_km"]: r["skr_analytic_bps"] for r in report["rows"]}
        near = load_bundled_scenario("short-4m")
        far = load_bundled_scenario("mcf-80km")
        assert rows[0.004] == pytest.approx(near.expected["skr_asymptotic_bps"], rel=0.01)
        assert rows[80.0] == pytest.approx(far.expected["skr_asymptotic_bps"], rel=0.01)
        skrs = [r["skr_analytic_bps"] for r in report["rows"]]
        assert all(a >= b for a, b in zip(skrs, skrs[1:]))
        assert (out / "skr_vs_length.csv").exists()
        assert (out / "skr_vs_length.png").exists()

    def test_simulated_column_tracks_model(self, tmp_path):
        out = tmp_path / "sweep-sim"
        assert run_cli("sweep", "--near", "short-4m", "--far", "mcf-80km",
                       "--lengths", "0.004,80", "--sim-time", 60.0,
                       "--seed", 77, "--out", out) == 0
        report = read_json(out / "sweep_report.json")
        for row in report["rows"]:
            assert row["skr_simulated_bps"] == pytest.approx(
                row["skr_analytic_bps"], rel=0.35)


class TestMisc:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli("--version")
        assert exc.value.code == 0

    def test_missing_counts_file(self, tmp_path, capsys):
        code = run_cli("tomo", "definitely-missing.json", "--out", tmp_path / "x")
        assert code != 0
        assert "class=ValidationError" in capsys.readouterr().err
