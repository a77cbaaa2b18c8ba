"""Acceptance suite: one test and one printed pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  Monte Carlo sizes follow the CI profile (2000 runs); the desk-scale
20000-run histograms are available through the CLI (`pathqkd tomo --runs
20000`).
"""

import contextlib
import time

import numpy as np
import pytest
import yaml

from pathqkd import cli, keyrate, linksim, quantum, tomography
from pathqkd.phase import PhaseNoiseParams, PllParams, pll_run
from pathqkd.scenario import (bundled_dataset_path, dump_scenario,
                              load_bundled_scenario)

from conftest import dataset_from_state, exact_dataset_from_state, ginibre_state
from oracles import brute_force_chsh


@contextlib.contextmanager
def criterion(number, label):
    started = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"[acceptance] criterion {number} FAIL: {label}")
        raise
    print(f"[acceptance] criterion {number} PASS: {label} "
          f"({time.monotonic() - started:.1f}s)")


def load_dataset(name):
    table, _ = linksim.read_count_table(bundled_dataset_path(name))
    return tomography.TomographyDataset(table)


def test_criterion_1_quantum_core_oracles():
    with criterion(1, "CHSH closed form vs brute force, fidelity shortcut"):
        started = time.monotonic()
        assert quantum.chsh_max(quantum.bell_phi_plus()) == pytest.approx(
            2.0 * np.sqrt(2.0), abs=1e-9)
        rng = np.random.default_rng(11)
        psi = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
        target = quantum.bell_phi_plus()
        for _ in range(50):
            rho = ginibre_state(rng)
            assert quantum.chsh_max(rho) == pytest.approx(
                brute_force_chsh(rho), abs=1e-6)
            shortcut = float(np.real(psi.conj() @ rho @ psi))
            assert quantum.fidelity(rho, target) == pytest.approx(shortcut, abs=1e-9)
        assert time.monotonic() - started < 10.0


def test_criterion_2_mle_oracle():
    with criterion(2, "MLE trace distance < 0.01 and likelihood dominance, 100 states"):
        started = time.monotonic()
        rng = np.random.default_rng(22)
        for _ in range(100):
            rho = ginibre_state(rng)
            ds = dataset_from_state(rho, 10**6, rng)
            result = tomography.mle_reconstruct(ds)
            assert quantum.trace_distance(result.rho, rho) < 0.01
            projected = tomography.project_to_physical(
                tomography.linear_inversion(ds)[0])
            assert result.log_likelihood >= tomography.log_likelihood(projected, ds) - 1e-9
        assert time.monotonic() - started < 300.0


def test_criterion_3_qber_table_reproduction():
    with criterion(3, "QBER (Z, X, Y) of both links within 0.5 pp over 10 seeds"):
        targets = {
            "short-4m": (0.0258, 0.0560, 0.0727),
            "mcf-80km": (0.0681, 0.0726, 0.0863),
        }
        for name, (tz, tx, ty) in targets.items():
            scn = load_bundled_scenario(name)
            seeds = np.random.SeedSequence(scn.seed + 1000).spawn(10)
            qs = []
            for seed in seeds:
                table, _ = linksim.simulate_counts(scn.link, scn.schedule, seed)
                rep = keyrate.qber_report(table)
                qs.append([rep.qber_z, rep.qber_x, rep.qber_y])
            mean = np.mean(qs, axis=0)
            for measured, target in zip(mean, (tz, tx, ty)):
                assert abs(measured - target) < 0.005, (name, mean)


def test_criterion_4_fidelity_reproduction():
    with criterion(4, "Monte Carlo fidelity means/stds on calibrated datasets"):
        started = time.monotonic()
        cases = [
            ("short-4m", 0.925, 0.005),
            ("mcf-80km-tomo", 0.857, 0.002),
        ]
        for name, f_target, std_target in cases:
            ds = load_dataset(name)
            hist = tomography.monte_carlo_fidelity(
                ds, quantum.bell_phi_plus(), 2000, seed=44)
            assert abs(hist.mean - f_target) < 0.01, (name, hist.mean)
            assert std_target / 2 < hist.std < std_target * 2, (name, hist.std)
            assert hist.excluded_runs == 0
        # Single-chip baseline: mean checked, std to order of magnitude.
        hist = tomography.monte_carlo_fidelity(
            load_dataset("single-chip"), quantum.bell_phi_plus(), 400, seed=45)
        assert abs(hist.mean - 0.940) < 0.015
        assert 2e-4 < hist.std < 5e-3
        assert time.monotonic() - started < 600.0


def test_criterion_5_finite_key_table_reproduction():
    with criterion(5, "finite-key SKR table at n in {1e8..1e5} within 2%"):
        tables = {
            "short-4m": ((0.0258, 0.0560),
                         {10**8: 802.0, 10**7: 800.0, 10**6: 794.0, 10**5: 775.0}),
            "mcf-80km": ((0.0681, 0.0726),
                         {10**8: 2.03, 10**7: 2.02, 10**6: 1.98, 10**5: 1.87}),
        }
        for name, ((qz, qx), rows) in tables.items():
            params = load_bundled_scenario(name).analysis
            sifted = params.sifted_rate_bps()
            results = [keyrate.skr_finite(qz, qx, params, n, sifted)
                       for n in sorted(rows)]
            for result in results:
                assert result.skr_fin_bps == pytest.approx(
                    rows[result.block_size], rel=0.02), (name, result)
            rates = [r.skr_fin_bps for r in results]
            assert all(a < b for a, b in zip(rates, rates[1:]))


def test_criterion_6_overlap_reproduction():
    with criterion(6, "joint-probability overlap on the 80 km dataset"):
        ds = load_dataset("mcf-80km-tomo")
        overlap = tomography.matrix_overlap(
            tomography.joint_probability_matrix(ds),
            tomography.ideal_joint_probability_matrix())
        assert abs(overlap - 0.979) < 0.01, overlap
        ideal = exact_dataset_from_state(quantum.bell_phi_plus(), 10**6)
        assert tomography.matrix_overlap(
            tomography.joint_probability_matrix(ideal),
            tomography.ideal_joint_probability_matrix()) == 1.0


def test_criterion_7_pll_properties():
    with criterion(7, "PLL suppression, relock time, unlocked fraction"):
        started = time.monotonic()
        noise = PhaseNoiseParams()
        closed = pll_run(noise, PllParams(), 600.0, seed=77)
        opened = pll_run(noise, PllParams(kp=0, ki=0, kd=0), 600.0, seed=77)
        assert np.array_equal(closed.true_phase_rad, opened.true_phase_rad)
        assert closed.residual_std(locked_only=True) <= opened.residual_std() / 10.0
        assert 1.0 - closed.locked_fraction() < 0.05

        pll = PllParams()
        quiet = PhaseNoiseParams(jump_rate_hz=0.0)
        trace = pll_run(quiet, pll, 30.0, seed=78, inject_jumps=[(15.0, np.pi)])
        tick = int(15.0 * pll.loop_rate_hz)
        run_len, relock_tick = 0, None
        for i, flag in enumerate(trace.locked[tick:]):
            run_len = run_len + 1 if flag else 0
            if run_len >= 100:
                relock_tick = i - 99
                break
        assert relock_tick is not None
        assert relock_tick / pll.loop_rate_hz <= 2.0
        assert time.monotonic() - started < 30.0


def test_criterion_8_chsh_violation_significance():
    with criterion(8, "reconstructed 80 km state violates CHSH at >= 5 sigma"):
        ds = load_dataset("mcf-80km-tomo")
        point = quantum.chsh_max(tomography.mle_reconstruct(ds).rho)
        samples = tomography.monte_carlo_statistic(ds, quantum.chsh_max, 300, seed=88)
        mean, std = float(samples.mean()), float(samples.std())
        assert point > 2.0
        assert (mean - 2.0) / max(std, 1e-12) >= 5.0, (mean, std)


def test_criterion_9_command_determinism(tmp_path):
    with criterion(9, "byte-identical primary outputs for every command"):
        scn = load_bundled_scenario("short-4m")
        scn.schedule = [type(scn.schedule[0])(e.basis_alice, e.basis_bob, 0.2)
                        for e in scn.schedule]
        fast = tmp_path / "fast.yaml"
        fast.write_text(dump_scenario(scn))
        targets = tmp_path / "targets.yaml"
        targets.write_text(yaml.safe_dump({"scenario": "single-chip",
                                           "targets": {"fidelity": 0.940}}))

        compare = {
            "simulate": (["simulate", str(fast), "--seed", "5"],
                         ["counts.json", "phase_trace.csv", "scenario_snapshot.yaml"]),
            "tomo": (["tomo", "short-4m", "--runs", "20", "--chsh-runs", "5",
                      "--seed", "5"],
                     ["density_matrix.csv", "density_matrix_polar.csv",
                      "fidelity_samples.csv"]),
            "skr": (["skr", "mcf-80km", "--params", "mcf-80km", "--seed", "5"],
                    ["qber_table.csv", "skr_table.csv", "skr_report.json"]),
            "calibrate": (["calibrate", str(targets), "--seeds", "2", "--tol", "0.05"],
                          ["single-chip.fitted.yaml"]),
            "sweep": (["sweep", "--lengths", "0.004,40,80", "--no-simulate",
                       "--seed", "5"],
                      ["skr_vs_length.csv", "sweep_report.json"]),
        }
        for verb, (argv, files) in compare.items():
            outs = []
            for run in ("a", "b"):
                out = tmp_path / f"{verb}-{run}"
                code = cli.main(argv + ["--out", str(out)])
                assert code == 0, verb
                outs.append(out)
            for name in files:
                b1 = (outs[0] / name).read_bytes()
                b2 = (outs[1] / name).read_bytes()
                assert b1 == b2, f"{verb}/{name} not byte-identical"
