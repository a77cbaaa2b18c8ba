"""Stochastic simulation of the full entanglement-distribution link.

Per loop tick of the phase/PLL simulation, pair creation, per-arm survival,
joint-outcome sampling from the Born probabilities of the instantaneous
effective state, and accidental coincidences are drawn from a seeded
generator, yielding integer coincidence-count tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import quantum
from .errors import ConfigError, DomainError, InvalidParamError, ValidationError
from .phase import PhaseLoop, PhaseNoiseParams, PhaseTrace, PllParams

# Keep returned phase traces at or below this many samples; counts always use
# the full-rate residuals internally.
MAX_TRACE_SAMPLES = 200_000


@dataclass(frozen=True)
class SourceParams:
    """Photon-pair source: pulsed pump driving two interfering spirals."""

    rep_rate_hz: float = 5.0e7
    pair_prob_per_pulse: float = 0.02
    multi_pair_fraction: float = 0.03
    spiral_imbalance: float = 1.0

    def __post_init__(self):
        if self.rep_rate_hz <= 0:
            raise ConfigError(f"source.rep_rate_hz: must be > 0, got {self.rep_rate_hz}")
        if not 0.0 < self.pair_prob_per_pulse < 0.1:
            raise ConfigError(
                f"source.pair_prob_per_pulse: must be in (0, 0.1), got {self.pair_prob_per_pulse}"
            )
        if not 0.0 <= self.multi_pair_fraction < 1.0:
            raise ConfigError(
                f"source.multi_pair_fraction: must be in [0, 1), got {self.multi_pair_fraction}"
            )
        if self.spiral_imbalance < 0:
            raise ConfigError(
                f"source.spiral_imbalance: must be >= 0, got {self.spiral_imbalance}"
            )


@dataclass(frozen=True)
class ChannelParams:
    """Loss budget of both arms plus detection parameters."""

    length_km: float = 0.0
    atten_db_per_km: float = 0.20
    coupling_loss_db_per_facet: float = 7.0
    n_facets_signal: int = 3
    n_facets_idler: int = 1
    insertion_loss_db: float = 0.0
    detector_efficiency: float = 0.91
    dark_count_rate_hz: float = 100.0
    coincidence_window_s: float = 2.0e-10

    def __post_init__(self):
        for name in ("length_km", "atten_db_per_km", "coupling_loss_db_per_facet",
                     "insertion_loss_db"):
            if getattr(self, name) < 0:
                raise ConfigError(f"channel.{name}: must be >= 0, got {getattr(self, name)}")
        if self.n_facets_signal < 0 or self.n_facets_idler < 0:
            raise ConfigError("channel.n_facets_*: must be >= 0")
        if not 0.0 < self.detector_efficiency <= 1.0:
            raise ConfigError(
                f"channel.detector_efficiency: must be in (0, 1], got {self.detector_efficiency}"
            )
        if self.dark_count_rate_hz < 0:
            raise ConfigError(
                f"channel.dark_count_rate_hz: must be >= 0, got {self.dark_count_rate_hz}"
            )
        if self.coincidence_window_s <= 0:
            raise ConfigError(
                f"channel.coincidence_window_s: must be > 0, got {self.coincidence_window_s}"
            )

    def signal_loss_db(self) -> float:
        """Total signal-arm optical loss: chip facets + fiber + lumped insertion."""
        return (self.coupling_loss_db_per_facet * self.n_facets_signal
                + self.atten_db_per_km * self.length_km + self.insertion_loss_db)

    def idler_loss_db(self) -> float:
        """Idler-arm optical loss: local chip facets only."""
        return self.coupling_loss_db_per_facet * self.n_facets_idler

    def transmittances(self) -> tuple[float, float]:
        """(signal, idler) optical transmittances, detector efficiency excluded."""
        return (10.0 ** (-self.signal_loss_db() / 10.0),
                10.0 ** (-self.idler_loss_db() / 10.0))


@dataclass(frozen=True)
class LinkConfig:
    """Every physical parameter of one link scenario."""

    source: SourceParams = field(default_factory=SourceParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    phase_noise: PhaseNoiseParams = field(default_factory=PhaseNoiseParams)
    pll: PllParams = field(default_factory=PllParams)
    noise_floor: float = 0.0
    y_basis_phase_rad: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.noise_floor < 1.0:
            raise ConfigError(f"noise_floor: must be in [0, 1), got {self.noise_floor}")
        if self.pll.loop_rate_hz <= 2.0 * self.phase_noise.bandwidth_hz:
            raise ConfigError(
                "pll.loop_rate_hz: undersampled controller "
                f"({self.pll.loop_rate_hz} Hz <= 2 x {self.phase_noise.bandwidth_hz} Hz)"
            )


@dataclass(frozen=True)
class ScheduleEntry:
    """One measurement setting held for a fixed integration time."""

    basis_alice: str
    basis_bob: str
    integration_s: float

    def __post_init__(self):
        if self.basis_alice not in quantum.BASES or self.basis_bob not in quantum.BASES:
            raise ConfigError(
                f"schedule: unknown basis pair ({self.basis_alice!r}, {self.basis_bob!r})"
            )
        if self.integration_s <= 0:
            raise ConfigError(f"schedule: integration_s must be > 0, got {self.integration_s}")


@dataclass
class CountTable:
    """Coincidence counts per (basis_alice, basis_bob, outcome).

    ``counts`` maps (basis_alice, basis_bob) to a length-4 integer array in
    quantum.OUTCOMES order; ``integration_s`` and ``accidental_estimate``
    carry, per setting, the wall time and the expected number of accidental
    coincidences.
    """

    counts: dict
    integration_s: dict
    accidental_estimate: dict

    def settings(self) -> list[tuple[str, str]]:
        return list(self.counts.keys())

    def setting_counts(self, basis_alice: str, basis_bob: str) -> np.ndarray:
        key = (basis_alice, basis_bob)
        if key not in self.counts:
            raise ValidationError(f"setting {key} not present in count table")
        return np.asarray(self.counts[key], dtype=np.int64)

    def total(self, basis_alice: str, basis_bob: str) -> int:
        return int(self.setting_counts(basis_alice, basis_bob).sum())

    def validate(self) -> "CountTable":
        for key, arr in self.counts.items():
            arr = np.asarray(arr)
            if arr.shape != (4,) or np.any(arr < 0):
                raise ValidationError(f"setting {key}: counts must be 4 non-negative integers")
            if key not in self.integration_s or self.integration_s[key] <= 0:
                raise ValidationError(f"setting {key}: missing or non-positive integration time")
        return self

    def to_dict(self) -> dict:
        settings = []
        for (ba, bb), arr in self.counts.items():
            arr = np.asarray(arr, dtype=np.int64)
            settings.append({
                "basis_alice": ba,
                "basis_bob": bb,
                "integration_s": float(self.integration_s[(ba, bb)]),
                "counts": {o: int(v) for o, v in zip(quantum.OUTCOMES, arr)},
                "accidental_estimate": float(self.accidental_estimate.get((ba, bb), 0.0)),
            })
        return {"settings": settings}

    @classmethod
    def from_dict(cls, doc: dict) -> "CountTable":
        if "settings" not in doc or not isinstance(doc["settings"], list):
            raise ValidationError("counts document: missing 'settings' list")
        counts, integ, acc = {}, {}, {}
        for idx, s in enumerate(doc["settings"]):
            try:
                key = (s["basis_alice"], s["basis_bob"])
                raw = s["counts"]
                arr = np.array([int(raw[o]) for o in quantum.OUTCOMES], dtype=np.int64)
                integ_s = float(s["integration_s"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"counts document: settings[{idx}] malformed: {exc}") from exc
            if key[0] not in quantum.BASES or key[1] not in quantum.BASES:
                raise ValidationError(f"counts document: settings[{idx}]: unknown bases {key}")
            if key in counts:
                raise ValidationError(f"counts document: duplicate setting {key}")
            counts[key] = arr
            integ[key] = integ_s
            acc[key] = float(s.get("accidental_estimate", 0.0))
        table = cls(counts, integ, acc)
        return table.validate()


def write_count_table(path, table: CountTable, header: dict | None = None):
    """Write a count table as a structured JSON document."""
    doc = dict(header or {})
    doc.update(table.to_dict())
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_count_table(path) -> tuple[CountTable, dict]:
    """Read a count table; returns (table, header metadata)."""
    with open(path) as fh:
        doc = json.load(fh)
    table = CountTable.from_dict(doc)
    header = {k: v for k, v in doc.items() if k != "settings"}
    return table, header


def effective_state(residual_phase_rad: float, source: SourceParams,
                    noise_floor: float) -> np.ndarray:
    """Instantaneous two-qubit state behind the detectors.

    A phase-rotated (and possibly amplitude-imbalanced) Bell state mixed with
    white noise of weight w = 1 - (1 - noise_floor)(1 - multi_pair_fraction).
    """
    if not 0.0 <= noise_floor < 1.0:
        raise InvalidParamError(f"noise_floor must be in [0, 1), got {noise_floor}")
    w = 1.0 - (1.0 - noise_floor) * (1.0 - source.multi_pair_fraction)
    pure = quantum.phased_bell(residual_phase_rad, source.spiral_imbalance)
    return (1.0 - w) * pure + w * quantum.maximally_mixed()


def accidental_rate(singles_a_hz: float, singles_b_hz: float, window_s: float) -> float:
    """Expected accidental coincidences per second for two singles streams."""
    if singles_a_hz < 0 or singles_b_hz < 0 or window_s < 0:
        raise DomainError("accidental_rate arguments must be >= 0")
    return singles_a_hz * singles_b_hz * window_s


def singles_rates(config: LinkConfig) -> tuple[float, float]:
    """Detected singles rates (idler side, signal side), dark counts included.

    Each side has two detectors, so the dark contribution enters twice.
    """
    t_sig, t_idl = config.channel.transmittances()
    eta = config.channel.detector_efficiency
    mu = config.source.pair_prob_per_pulse
    rep = config.source.rep_rate_hz
    dark = 2.0 * config.channel.dark_count_rate_hz
    return (mu * rep * t_idl * eta + dark, mu * rep * t_sig * eta + dark)


def expected_coincidence_rate(config: LinkConfig) -> float:
    """Closed-form true-pair coincidence rate mu R T_sig T_idl eta^2 (per second)."""
    t_sig, t_idl = config.channel.transmittances()
    eta = config.channel.detector_efficiency
    return (config.source.pair_prob_per_pulse * config.source.rep_rate_hz
            * t_sig * t_idl * eta * eta)


def expected_accidental_rate(config: LinkConfig) -> float:
    """Closed-form accidental coincidence rate from the singles products."""
    s_a, s_b = singles_rates(config)
    return accidental_rate(s_a, s_b, config.channel.coincidence_window_s)


def _setting_outcome_probabilities(residuals: np.ndarray, config: LinkConfig,
                                   basis_alice: str, basis_bob: str) -> np.ndarray:
    """Joint outcome probabilities per tick, vectorized over residual phases.

    Equivalent to born_probabilities(effective_state(phi_eff, ...)) with
    phi_eff = residual - y_basis_phase_rad when Bob measures Y (the receiver's
    Y-basis phase setting carries a fixed calibration offset).
    """
    src = config.source
    w = 1.0 - (1.0 - config.noise_floor) * (1.0 - src.multi_pair_fraction)
    a2 = 1.0 / (1.0 + src.spiral_imbalance)
    b2 = 1.0 - a2
    two_ab = 2.0 * np.sqrt(a2 * b2)

    phi = np.asarray(residuals, dtype=float)
    if basis_bob == "Y":
        phi = phi - config.y_basis_phase_rad

    equatorial_angle = {"X": 0.0, "Y": np.pi / 2.0}
    n = len(phi)
    if basis_alice == "Z" and basis_bob == "Z":
        ma = mb = (1.0 - w) * (a2 - b2)
        corr = np.full(n, 1.0 - w)
        ma = np.full(n, ma)
        mb = np.full(n, mb)
    elif basis_alice == "Z":
        ma = np.full(n, (1.0 - w) * (a2 - b2))
        mb = np.zeros(n)
        corr = np.zeros(n)
    elif basis_bob == "Z":
        ma = np.zeros(n)
        mb = np.full(n, (1.0 - w) * (a2 - b2))
        corr = np.zeros(n)
    else:
        ma = np.zeros(n)
        mb = np.zeros(n)
        total_angle = equatorial_angle[basis_alice] + equatorial_angle[basis_bob]
        corr = (1.0 - w) * two_ab * np.cos(total_angle - phi)

    probs = np.empty((n, 4))
    probs[:, 0] = 1.0 + ma + mb + corr
    probs[:, 1] = 1.0 + ma - mb - corr
    probs[:, 2] = 1.0 - ma + mb - corr
    probs[:, 3] = 1.0 - ma - mb + corr
    return np.clip(probs / 4.0, 0.0, None)


def simulate_counts(config: LinkConfig, schedule, seed,
                    trace_stride: int | None = None) -> tuple[CountTable, PhaseTrace]:
    """Run the link over a measurement schedule, returning counts and phase trace.

    The phase/PLL loop runs continuously across the schedule; within each
    loop tick, pair creation is binomial over the pump pulses, each photon
    survives its arm independently, surviving pairs draw a joint outcome from
    the instantaneous effective state, and accidentals arrive as a Poisson
    stream split uniformly over outcomes.
    """
    schedule = list(schedule)
    if not schedule:
        raise ConfigError("schedule must not be empty")
    for entry in schedule:
        if not isinstance(entry, ScheduleEntry):
            raise ConfigError("schedule entries must be ScheduleEntry instances")

    loop_rate = config.pll.loop_rate_hz
    dt = 1.0 / loop_rate
    pulses_per_tick = int(round(config.source.rep_rate_hz * dt))
    if pulses_per_tick < 1:
        raise ConfigError("source.rep_rate_hz: fewer than one pulse per PLL tick")

    t_sig, t_idl = config.channel.transmittances()
    eta = config.channel.detector_efficiency
    p_coinc = config.source.pair_prob_per_pulse * t_sig * t_idl * eta * eta
    acc_per_tick = expected_accidental_rate(config) * dt

    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    phase_seed, counts_seed = seq.spawn(2)
    loop = PhaseLoop(config.phase_noise, config.pll, phase_seed)
    rng = np.random.default_rng(counts_seed)

    counts, integ, acc_est = {}, {}, {}
    segments = []
    total_ticks = 0

    for entry in schedule:
        n_ticks = max(1, int(round(entry.integration_s * loop_rate)))
        total_ticks += n_ticks
        segment = loop.run(n_ticks)
        segments.append(segment)

        tallies = np.zeros(4, dtype=np.int64)
        n_cc = rng.binomial(pulses_per_tick, p_coinc, size=n_ticks)
        hit = np.flatnonzero(n_cc)
        if hit.size:
            probs = _setting_outcome_probabilities(
                segment.residual_rad[hit], config, entry.basis_alice, entry.basis_bob)
            row_sums = probs.sum(axis=1, keepdims=True)
            probs = probs / row_sums
            for idx, tick in enumerate(hit):
                tallies += rng.multinomial(n_cc[tick], probs[idx])
        if acc_per_tick > 0.0:
            n_acc = int(rng.poisson(acc_per_tick * n_ticks))
            if n_acc:
                tallies += rng.multinomial(n_acc, [0.25, 0.25, 0.25, 0.25])

        key = (entry.basis_alice, entry.basis_bob)
        if key in counts:
            counts[key] = counts[key] + tallies
            integ[key] += entry.integration_s
            acc_est[key] += acc_per_tick * n_ticks
        else:
            counts[key] = tallies
            integ[key] = entry.integration_s
            acc_est[key] = acc_per_tick * n_ticks

    trace = PhaseTrace(
        np.concatenate([s.time_s for s in segments]),
        np.concatenate([s.true_phase_rad for s in segments]),
        np.concatenate([s.correction_rad for s in segments]),
        np.concatenate([s.residual_rad for s in segments]),
        np.concatenate([s.pd_power_norm for s in segments]),
        np.concatenate([s.locked for s in segments]),
        loop_rate_hz=loop_rate,
    )
    if trace_stride is None:
        trace_stride = max(1, total_ticks // MAX_TRACE_SAMPLES)
    trace = trace.decimated(trace_stride)

    table = CountTable(counts, integ, acc_est).validate()
    return table, trace


def export_timestamps(config: LinkConfig, duration_s: float, seed, path):
    """Emit a synthetic detection-timestamp stream (off the hot path).

    Line format: ``channel_id, time_ps, detector_id`` with non-decreasing
    times per channel.  Channel 0 is the idler (local) side, channel 1 the
    signal (remote) side; detector_id 0/1 are the two outputs of each side.
    """
    if duration_s <= 0:
        raise DomainError(f"duration_s must be > 0, got {duration_s}")
    rng = np.random.default_rng(seed)
    s_a, s_b = singles_rates(config)
    with open(path, "w") as fh:
        fh.write("# channel_id, time_ps, detector_id\n")
        for channel, rate in ((0, s_a), (1, s_b)):
            n = rng.poisson(rate * duration_s)
            times = np.sort(rng.random(n) * duration_s)
            detectors = rng.integers(0, 2, size=n)
            for t, d in zip(times, detectors):
                fh.write(f"{channel}, {int(round(t * 1e12))}, {int(d)}\n")
