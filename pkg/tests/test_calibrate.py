"""Calibration: feasibility screening, zero-iteration path, closed forms."""

import numpy as np
import pytest

from pathqkd.calibrate import (calibrate_scenario, feasibility_check,
                               loop_residual_ratio, predicted_metrics)
from pathqkd.errors import ConfigError, NoConvergenceError
from pathqkd.scenario import load_bundled_scenario


class TestFeasibility:
    def test_contradictory_fidelity_and_qber(self):
        # F <= 1 - qber_x/2 = 0.90 for qber_x = 0.2; F = 0.99 is impossible.
        with pytest.raises(NoConvergenceError, match="fidelity"):
            feasibility_check({"fidelity": 0.99, "qber_x": 0.2})

    def test_grid_scan_confirms_infeasibility(self):
        # Oracle: scan the noise model's parameter grid; no configuration
        # reaches fidelity 0.99 while the X error rate is pinned at 0.2.
        best_f = -1.0
        for w in np.linspace(0.0, 0.6, 31):
            for visibility in np.linspace(0.0, 1.0, 41):
                qx = (1 - (1 - w) * visibility) / 2
                if abs(qx - 0.2) > 5e-3:
                    continue
                qz = w / 2
                for qy in (qx, 0.5):  # Y error at least the X error here
                    f = 1 - 0.5 * (qz + qx + qy)
                    best_f = max(best_f, f)
        assert best_f < 0.95

    def test_consistent_triple_accepted(self):
        feasibility_check({"fidelity": 0.8865,
                           "qber_z": 0.0681, "qber_x": 0.0726, "qber_y": 0.0863})

    def test_inconsistent_triple_rejected(self):
        with pytest.raises(NoConvergenceError, match="implies fidelity"):
            feasibility_check({"fidelity": 0.80,
                               "qber_z": 0.0681, "qber_x": 0.0726, "qber_y": 0.0863})

    def test_overlap_fidelity_pair_bounds_y(self):
        with pytest.raises(NoConvergenceError, match="Y-basis"):
            feasibility_check({"fidelity": 0.99, "overlap": 0.90})


class TestCalibrateScenario:
    def test_zero_iteration_exit_when_satisfied(self):
        # The bundled preset already satisfies its own calibration targets.
        scn = load_bundled_scenario("single-chip")
        result = calibrate_scenario(scn, {"fidelity": 0.940}, n_seeds=4,
                                    residual_tol=0.02)
        assert result.rounds == 0
        assert result.evaluations == 1
        assert result.converged
        assert result.residuals["fidelity"] < 0.02

    def test_unknown_target_rejected(self):
        scn = load_bundled_scenario("single-chip")
        with pytest.raises(ConfigError, match="unknown target"):
            calibrate_scenario(scn, {"qber_w": 0.1})

    def test_refit_recovers_perturbed_noise_floor(self):
        scn = load_bundled_scenario("short-4m")
        scn.link = type(scn.link)(
            source=scn.link.source, channel=scn.link.channel,
            phase_noise=scn.link.phase_noise, pll=scn.link.pll,
            noise_floor=min(scn.link.noise_floor * 1.6, 0.3),
            y_basis_phase_rad=scn.link.y_basis_phase_rad)
        targets = dict(qber_z=0.0258, qber_x=0.0560, qber_y=0.0727)
        result = calibrate_scenario(scn, targets, n_seeds=6, max_rounds=4,
                                    residual_tol=0.04, sim_time_scale=2.0)
        assert result.converged
        assert all(r < 0.04 for r in result.residuals.values())
        assert result.scenario.link.noise_floor < scn.link.noise_floor


class TestClosedForms:
    def test_prediction_matches_expected_block(self):
        # Bundled presets were fitted so the closed-form predictions sit on
        # the published operating points.
        scn = load_bundled_scenario("mcf-80km")
        pred = predicted_metrics(scn)
        assert pred["qber_z"] == pytest.approx(scn.expected["qber_z"], abs=2e-3)
        assert pred["coincidence_rate_hz"] == pytest.approx(
            scn.expected["coincidence_rate_hz"], rel=0.02)

    def test_loop_ratio_scales_with_gain(self):
        scn = load_bundled_scenario("mcf-80km")
        ratio = loop_residual_ratio(scn.link)
        assert 0.02 < ratio < 0.2
