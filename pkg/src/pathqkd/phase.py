"""Interferometric phase drift and its active stabilization.

The relative phase between the two signal paths drifts as an
Ornstein-Uhlenbeck (or random-walk) process with occasional large jumps.
A photodiode monitors the leaked-pump interference fringe and feeds a PID
loop that drives the correction phase; lock loss is detected from sustained
photodiode error and recovered with a fringe scan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, InvalidParamError

# Fringe-scan relock: probe points spanning one full fringe, one per loop tick.
SCAN_POINTS = 64
# Consecutive out-of-band ticks before a fringe scan is triggered.
UNLOCK_DWELL_TICKS = 20

TWO_PI = 2.0 * np.pi


def wrap_phase(x):
    """Wrap angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x), TWO_PI)


@dataclass(frozen=True)
class PhaseNoiseParams:
    """Stochastic model of the link's differential phase drift.

    ``process`` is "ornstein_uhlenbeck" (mean-reverting, stationary std equal
    to ``std_rad``) or "random_walk" (diffusive; accumulates ``std_rad`` of
    drift over one correlation time 1/(2 pi bandwidth)).  Sudden jumps of
    fixed magnitude occur as a Poisson process.
    """

    process: str = "ornstein_uhlenbeck"
    bandwidth_hz: float = 0.5
    std_rad: float = np.pi / 2.0
    jump_rate_hz: float = 1.0 / 300.0
    jump_magnitude_rad: float = np.pi

    def __post_init__(self):
        if self.process not in ("ornstein_uhlenbeck", "random_walk"):
            raise ConfigError(f"phase_noise.process: unknown process {self.process!r}")
        if self.bandwidth_hz <= 0:
            raise ConfigError(f"phase_noise.bandwidth_hz: must be > 0, got {self.bandwidth_hz}")
        if self.std_rad < 0:
            raise ConfigError(f"phase_noise.std_rad: must be >= 0, got {self.std_rad}")
        if self.jump_rate_hz < 0:
            raise ConfigError(f"phase_noise.jump_rate_hz: must be >= 0, got {self.jump_rate_hz}")

    def step_coefficients(self, dt_s: float) -> tuple[float, float]:
        """(decay, step std) of the exact one-step update at interval dt."""
        if dt_s <= 0:
            raise DomainError(f"dt_s must be > 0, got {dt_s}")
        if self.process == "ornstein_uhlenbeck":
            lam = float(np.exp(-TWO_PI * self.bandwidth_hz * dt_s))
            sigma = self.std_rad * float(np.sqrt(max(0.0, 1.0 - lam * lam)))
            return lam, sigma
        # Random walk: variance std_rad^2 accumulated over 1/(2 pi bandwidth).
        return 1.0, self.std_rad * float(np.sqrt(TWO_PI * self.bandwidth_hz * dt_s))


@dataclass(frozen=True)
class PllParams:
    """PID feedback loop acting on the photodiode power error.

    Gains are applied to the dimensionless power error and produce radians of
    correction phase.  ``setpoint_fraction`` is the lock target as a fraction
    of the fringe maximum (0.5 = mid-fringe, maximal slope).  All-zero gains
    disable the controller entirely (open loop, no relock scans).
    """

    loop_rate_hz: float = 1000.0
    kp: float = 0.4
    ki: float = 1600.0
    kd: float = 0.0
    setpoint_fraction: float = 0.5
    unlock_threshold: float = 0.4
    relock_strategy: str = "fringe_scan"
    fringe_visibility: float = 1.0

    def __post_init__(self):
        if self.loop_rate_hz <= 0:
            raise ConfigError(f"pll.loop_rate_hz: must be > 0, got {self.loop_rate_hz}")
        if not 0.0 < self.setpoint_fraction < 1.0:
            raise ConfigError(
                f"pll.setpoint_fraction: must be in (0, 1), got {self.setpoint_fraction}"
            )
        if not 0.0 < self.unlock_threshold <= 1.0:
            raise ConfigError(
                f"pll.unlock_threshold: must be in (0, 1], got {self.unlock_threshold}"
            )
        if self.relock_strategy != "fringe_scan":
            raise ConfigError(f"pll.relock_strategy: unknown strategy {self.relock_strategy!r}")
        if not 0.0 <= self.fringe_visibility <= 1.0:
            raise ConfigError(
                f"pll.fringe_visibility: must be in [0, 1], got {self.fringe_visibility}"
            )

    @property
    def enabled(self) -> bool:
        return not (self.kp == 0.0 and self.ki == 0.0 and self.kd == 0.0)


@dataclass
class PhaseTrace:
    """Time series produced by the closed-loop phase simulation."""

    time_s: np.ndarray
    true_phase_rad: np.ndarray
    correction_rad: np.ndarray
    residual_rad: np.ndarray
    pd_power_norm: np.ndarray
    locked: np.ndarray
    loop_rate_hz: float = 0.0

    def __post_init__(self):
        n = len(self.time_s)
        for name in ("true_phase_rad", "correction_rad", "residual_rad", "pd_power_norm", "locked"):
            if len(getattr(self, name)) != n:
                raise InvalidParamError(f"PhaseTrace.{name}: length mismatch")

    def __len__(self) -> int:
        return len(self.time_s)

    def locked_fraction(self) -> float:
        return float(np.mean(self.locked)) if len(self) else 0.0

    def residual_std(self, locked_only: bool = False) -> float:
        r = self.residual_rad[self.locked] if locked_only else self.residual_rad
        return float(np.std(r)) if len(r) else float("nan")

    def decimated(self, stride: int) -> "PhaseTrace":
        if stride <= 1:
            return self
        s = slice(None, None, stride)
        return PhaseTrace(
            self.time_s[s], self.true_phase_rad[s], self.correction_rad[s],
            self.residual_rad[s], self.pd_power_norm[s], self.locked[s],
            loop_rate_hz=self.loop_rate_hz / stride,
        )

    def summary(self) -> dict:
        return {
            "samples": int(len(self)),
            "duration_s": float(self.time_s[-1] - self.time_s[0]) if len(self) else 0.0,
            "locked_fraction": self.locked_fraction(),
            "residual_std_rad": self.residual_std(),
            "residual_std_locked_rad": self.residual_std(locked_only=True),
        }


def pd_power(residual_phase_rad, fringe_visibility: float):
    """Normalized photodiode power (1 + v cos(phi)) / 2 on the pump fringe."""
    if not 0.0 <= fringe_visibility <= 1.0:
        raise InvalidParamError(
            f"fringe_visibility must be in [0, 1], got {fringe_visibility}"
        )
    return (1.0 + fringe_visibility * np.cos(residual_phase_rad)) / 2.0


def phase_step(phase: float, dt_s: float, params: PhaseNoiseParams, rng: np.random.Generator) -> float:
    """Advance the phase process by one interval dt."""
    lam, sigma = params.step_coefficients(dt_s)
    phase = phase * lam + sigma * rng.standard_normal()
    if params.jump_rate_hz > 0 and rng.random() < params.jump_rate_hz * dt_s:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        phase += sign * params.jump_magnitude_rad
    return float(phase)


class PhaseLoop:
    """Sequential closed-loop phase simulator at the PLL tick rate.

    The noise stream is drawn in blocks from a dedicated generator, so a
    given (noise, duration, seed) triple yields an identical phase history
    whatever the controller does; paired open-/closed-loop comparisons see
    the same disturbance.
    """

    def __init__(self, noise: PhaseNoiseParams, pll: PllParams, seed,
                 inject_jumps=()):
        if pll.loop_rate_hz <= 2.0 * noise.bandwidth_hz:
            raise ConfigError(
                "pll.loop_rate_hz: undersampled controller "
                f"({pll.loop_rate_hz} Hz <= 2 x {noise.bandwidth_hz} Hz noise bandwidth)"
            )
        self.noise = noise
        self.pll = pll
        self.dt = 1.0 / pll.loop_rate_hz
        self.decay, self.sigma_step = noise.step_coefficients(self.dt)
        self.jump_prob = noise.jump_rate_hz * self.dt
        self.rng = np.random.default_rng(seed)

        v = pll.fringe_visibility
        self.setpoint_power = pll.setpoint_fraction * (1.0 + v) / 2.0
        if pll.enabled:
            if v <= 0.0:
                raise ConfigError("pll.fringe_visibility: controller needs a visible fringe")
            cos_off = (2.0 * self.setpoint_power - 1.0) / v
            if not -1.0 < cos_off < 1.0:
                raise ConfigError(
                    "pll.setpoint_fraction: setpoint power unreachable at this fringe visibility"
                )
            # Static lock offset: the monitored fringe sits at phi_offset when
            # the signal-path residual is zero, giving a monotone error signal.
            self.phi_offset = float(np.arccos(cos_off))
        else:
            self.phi_offset = 0.0

        self.phi = float(noise.std_rad * self.rng.standard_normal()) \
            if noise.process == "ornstein_uhlenbeck" else 0.0
        self.tick = 0
        self.time = 0.0
        self.correction = 0.0
        self.base_offset = 0.0
        self.integral = 0.0
        self.prev_error = 0.0
        self.scan_count = 0
        self._dwell = 0
        self._scan_idx = -1
        self._scan_offsets = None
        self._scan_monitors = np.empty(SCAN_POINTS)
        self._inject = {}
        for t_s, mag in inject_jumps:
            self._inject[int(round(t_s * pll.loop_rate_hz))] = \
                self._inject.get(int(round(t_s * pll.loop_rate_hz)), 0.0) + mag
        if pll.enabled:
            self._start_scan()

    def _start_scan(self):
        self._scan_idx = 0
        self._scan_offsets = self.correction - np.pi + TWO_PI * np.arange(SCAN_POINTS) / SCAN_POINTS
        self.scan_count += 1
        self._dwell = 0

    def _finish_scan(self):
        m = self._scan_monitors
        slope = np.roll(m, -1) - np.roll(m, 1)
        candidates = np.flatnonzero(slope > 0)
        if candidates.size == 0:
            candidates = np.arange(SCAN_POINTS)
        best = candidates[np.argmin(np.abs(m[candidates] - self.setpoint_power))]
        self.base_offset = float(self._scan_offsets[best])
        self.correction = self.base_offset
        self.integral = 0.0
        self.prev_error = 0.0
        self._scan_idx = -1

    def run(self, n_ticks: int) -> PhaseTrace:
        """Advance the loop n_ticks, returning the per-tick trace segment."""
        pll, dt = self.pll, self.dt
        v = pll.fringe_visibility
        enabled = pll.enabled
        sp = self.setpoint_power
        phi_off = self.phi_offset
        kp, ki, kd = pll.kp, pll.ki, pll.kd
        decay, sigma_step, jump_prob = self.decay, self.sigma_step, self.jump_prob
        jump_mag = self.noise.jump_magnitude_rad

        true_arr = np.empty(n_ticks)
        corr_arr = np.empty(n_ticks)
        resid_arr = np.empty(n_ticks)
        power_arr = np.empty(n_ticks)
        locked_arr = np.zeros(n_ticks, dtype=bool)

        normals = self.rng.standard_normal(n_ticks)
        if jump_prob > 0.0:
            jump_u = self.rng.random(n_ticks)
            jump_sign = np.where(self.rng.random(n_ticks) < 0.5, 1.0, -1.0)
        else:
            jump_u = None
            jump_sign = None

        phi = self.phi
        correction = self.correction
        base_offset = self.base_offset
        integral = self.integral
        prev_error = self.prev_error
        dwell = self._dwell
        scan_idx = self._scan_idx
        inject = self._inject
        tick = self.tick
        time = self.time

        for n in range(n_ticks):
            phi = phi * decay + sigma_step * normals[n]
            if jump_u is not None and jump_u[n] < jump_prob:
                phi += jump_sign[n] * jump_mag
            if tick in inject:
                phi += inject[tick]

            if scan_idx >= 0:
                correction = float(self._scan_offsets[scan_idx])

            residual = np.pi - (np.pi - (phi - correction)) % TWO_PI
            monitor = (1.0 + v * np.cos(residual + phi_off)) / 2.0
            error = sp - monitor

            if enabled and scan_idx < 0 and abs(error) <= pll.unlock_threshold:
                locked_arr[n] = True

            true_arr[n] = phi
            corr_arr[n] = correction
            resid_arr[n] = residual
            power_arr[n] = monitor

            if enabled:
                if scan_idx >= 0:
                    self._scan_monitors[scan_idx] = monitor
                    scan_idx += 1
                    if scan_idx >= SCAN_POINTS:
                        self.correction = correction
                        self._finish_scan()
                        correction = self.correction
                        base_offset = self.base_offset
                        integral = self.integral
                        prev_error = self.prev_error
                        scan_idx = -1
                        dwell = 0
                else:
                    integral += error * dt
                    correction = base_offset + kp * error + ki * integral \
                        + kd * (error - prev_error) / dt
                    prev_error = error
                    if abs(error) > pll.unlock_threshold:
                        dwell += 1
                        if dwell >= UNLOCK_DWELL_TICKS:
                            self.correction = correction
                            self._start_scan()
                            scan_idx = 0
                            dwell = 0
                    else:
                        dwell = 0

            tick += 1
            time += dt

        start = time - n_ticks * dt
        times = start + dt * (1 + np.arange(n_ticks))
        self.phi = phi
        self.correction = correction
        self.base_offset = base_offset
        self.integral = integral
        self.prev_error = prev_error
        self._dwell = dwell
        self._scan_idx = scan_idx
        self.tick = tick
        self.time = time
        return PhaseTrace(times, true_arr, corr_arr, resid_arr, power_arr, locked_arr,
                          loop_rate_hz=pll.loop_rate_hz)


def pll_run(noise: PhaseNoiseParams, pll: PllParams, duration_s: float, seed,
            inject_jumps=()) -> PhaseTrace:
    """Closed-loop phase simulation over duration_s at the controller rate."""
    if duration_s <= 0:
        raise DomainError(f"duration_s must be > 0, got {duration_s}")
    loop = PhaseLoop(noise, pll, seed, inject_jumps=inject_jumps)
    n_ticks = int(round(duration_s * pll.loop_rate_hz))
    return loop.run(max(n_ticks, 1))
