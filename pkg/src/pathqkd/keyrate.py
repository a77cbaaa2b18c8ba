"""BBM92 key-rate analysis: QBER extraction, asymptotic and finite-key SKR.

The asymptotic rate is the lower bound
``[1 - f H2(QBER_Z) - H2(QBER_X)] S R_r alpha eta``; finite-size effects
subtract a Hoeffding statistical penalty and an error-verification cost,
both converted to bit/s through the sifted-bit rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import quantum
from .errors import (BasisMismatchError, ConfigError, DomainError,
                     EmptySettingError)
from .linksim import CountTable


@dataclass(frozen=True)
class SkrParams:
    """Symbols of the key-rate bound.

    ``raw_rate_hz`` (R_r) is the coincidence rate before sifting.  When rates
    come from simulated counts, channel transmittance and detector efficiency
    are already folded into the measured rate, so ``alpha`` and ``eta`` stay
    at 1; the analytic mode sets them explicitly.
    """

    f: float = 1.1
    sift_ratio: float = 0.5
    raw_rate_hz: float = 1.0
    alpha: float = 1.0
    eta: float = 0.91
    eps_sec: float = 1e-12
    eps_cor: float = 1e-12

    def __post_init__(self):
        if self.f < 1.0:
            raise ConfigError(f"analysis.f: must be >= 1, got {self.f}")
        if not 0.0 < self.sift_ratio <= 1.0:
            raise ConfigError(f"analysis.sift_ratio: must be in (0, 1], got {self.sift_ratio}")
        if self.raw_rate_hz <= 0:
            raise ConfigError(f"analysis.raw_rate_hz: must be > 0, got {self.raw_rate_hz}")
        if self.alpha <= 0:
            raise ConfigError(f"analysis.alpha: must be > 0, got {self.alpha}")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"analysis.eta: must be in (0, 1], got {self.eta}")
        for name in ("eps_sec", "eps_cor"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"analysis.{name}: must be in (0, 1)")

    def sifted_rate_bps(self) -> float:
        """Sifted bit rate S R_r alpha eta."""
        return self.sift_ratio * self.raw_rate_hz * self.alpha * self.eta

    def with_raw_rate(self, raw_rate_hz: float) -> "SkrParams":
        return replace(self, raw_rate_hz=raw_rate_hz)


@dataclass
class QberReport:
    """Per-basis error rates with the totals they were computed from."""

    qber_z: float
    qber_x: float
    qber_y: float
    counts_z: int
    counts_x: int
    counts_y: int

    def qber(self, basis: str) -> float:
        return {"Z": self.qber_z, "X": self.qber_x, "Y": self.qber_y}[basis]

    def avg_qber_zx(self) -> float:
        return 0.5 * (self.qber_z + self.qber_x)


@dataclass
class FiniteKeyResult:
    """Finite-block key rate and its penalty terms."""

    block_size: int
    acquisition_time_s: float
    delta: float
    lambda_ev_bits: float
    skr_fin_bps: float
    block_too_small: bool = False


def binary_entropy(p: float) -> float:
    """Binary Shannon entropy H2(p) in bits, H2(0) = H2(1) = 0."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"binary_entropy: p must be in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return float(-p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p))


# Outcomes counted as errors per matching basis: Z and X correlate (+ with +),
# Y anti-correlates for the Phi+ target, so same-sign outcomes are the errors.
_ERROR_OUTCOME_IDX = {"Z": (1, 2), "X": (1, 2), "Y": (0, 3)}


def qber_from_counts(table: CountTable, basis_alice: str, basis_bob: str) -> float:
    """Error fraction of a matching-basis setting."""
    if basis_alice != basis_bob:
        raise BasisMismatchError(
            f"QBER needs matching bases, got ({basis_alice}, {basis_bob})"
        )
    if basis_alice not in quantum.BASES:
        raise DomainError(f"unknown basis {basis_alice!r}")
    counts = table.setting_counts(basis_alice, basis_bob)
    total = counts.sum()
    if total <= 0:
        raise EmptySettingError(f"setting ({basis_alice}, {basis_bob}) has zero counts")
    i, j = _ERROR_OUTCOME_IDX[basis_alice]
    return float((counts[i] + counts[j]) / total)


def qber_report(table: CountTable) -> QberReport:
    """QBER for all three matching-basis settings of a count table."""
    values = {}
    totals = {}
    for basis in quantum.BASES:
        values[basis] = qber_from_counts(table, basis, basis)
        totals[basis] = table.total(basis, basis)
    return QberReport(values["Z"], values["X"], values["Y"],
                      totals["Z"], totals["X"], totals["Y"])


def secret_fraction(qber_z: float, qber_x: float, f: float) -> float:
    """Asymptotic secret fraction 1 - f H2(QBER_Z) - H2(QBER_X), not clamped."""
    for q in (qber_z, qber_x):
        if not 0.0 <= q <= 0.5:
            raise DomainError(f"QBER must be in [0, 0.5], got {q}")
    return 1.0 - f * binary_entropy(qber_z) - binary_entropy(qber_x)


def skr_asymptotic(qber_z: float, qber_x: float, params: SkrParams) -> float:
    """Asymptotic secret key rate in bit/s, clamped at zero."""
    return max(0.0, secret_fraction(qber_z, qber_x, params.f) * params.sifted_rate_bps())


def skr_finite(qber_z: float, qber_x: float, params: SkrParams, block_size: int,
               sifted_rate_bps: float) -> FiniteKeyResult:
    """Finite-key rate for one block size.

    delta = sqrt(ln(1/eps_sec)/n_Z) is the Hoeffding penalty per sifted bit,
    lambda_EV = log2(2/eps_cor)/tau_n the error-verification cost of the
    block; both are subtracted from the asymptotic rate as bit/s.
    """
    if block_size < 1000:
        raise DomainError(f"block_size must be >= 1e3, got {block_size}")
    if sifted_rate_bps <= 0:
        raise DomainError(f"sifted_rate_bps must be > 0, got {sifted_rate_bps}")
    skr_inf = max(0.0, secret_fraction(qber_z, qber_x, params.f) * sifted_rate_bps)
    delta = math.sqrt(math.log(1.0 / params.eps_sec) / block_size)
    tau = block_size / sifted_rate_bps
    lambda_ev = math.log2(2.0 / params.eps_cor) / tau
    skr_fin = skr_inf - delta * sifted_rate_bps - lambda_ev
    too_small = skr_fin <= 0.0
    return FiniteKeyResult(
        block_size=int(block_size),
        acquisition_time_s=tau,
        delta=delta,
        lambda_ev_bits=math.log2(2.0 / params.eps_cor),
        skr_fin_bps=max(0.0, skr_fin),
        block_too_small=too_small,
    )


# Candidate (key, check) basis pairs in tie-break preference order.
_PAIR_PREFERENCE = (("Z", "X"), ("Z", "Y"), ("X", "Z"), ("X", "Y"), ("Y", "Z"), ("Y", "X"))


def select_key_bases(report: QberReport, f: float = 1.1) -> tuple[str, str]:
    """Ordered basis pair maximizing the asymptotic secret fraction.

    The key basis carries the f-weighted error-correction term; ties prefer
    Z as key basis (then the _PAIR_PREFERENCE order).
    """
    best_pair = _PAIR_PREFERENCE[0]
    best_value = -np.inf
    for key_basis, check_basis in _PAIR_PREFERENCE:
        value = secret_fraction(min(report.qber(key_basis), 0.5),
                                min(report.qber(check_basis), 0.5), f)
        if value > best_value + 1e-15:
            best_value = value
            best_pair = (key_basis, check_basis)
    return best_pair


@dataclass(frozen=True)
class SweepModel:
    """Analytic SKR-versus-length model through two calibrated link points.

    True coincidences fall as 10^(-a_eff (L - L_anchor)/10); the
    accidental-to-true ratio grows inversely with the true rate, and the
    intrinsic (state-level) error rates interpolate linearly in length
    between the two calibrated operating points (long-haul spurious noise
    grows with fiber length).  Exact at both anchors by construction.
    """

    anchor_length_km: float
    far_length_km: float
    sifted_rate_anchor_bps: float
    atten_db_per_km_eff: float
    accidental_to_true_anchor: float
    qber_z_intrinsic: tuple
    qber_x_intrinsic: tuple
    params: SkrParams

    def relative_true_rate(self, length_km: float) -> float:
        return 10.0 ** (-self.atten_db_per_km_eff * (length_km - self.anchor_length_km) / 10.0)

    def _frac(self, length_km: float) -> float:
        return ((length_km - self.anchor_length_km)
                / (self.far_length_km - self.anchor_length_km))

    def qbers(self, length_km: float) -> tuple[float, float]:
        g = self.relative_true_rate(length_km)
        x = self.accidental_to_true_anchor / g
        frac = self._frac(length_km)
        qz_s = self.qber_z_intrinsic[0] + frac * (self.qber_z_intrinsic[1]
                                                  - self.qber_z_intrinsic[0])
        qx_s = self.qber_x_intrinsic[0] + frac * (self.qber_x_intrinsic[1]
                                                  - self.qber_x_intrinsic[0])
        qz = (qz_s + 0.5 * x) / (1.0 + x)
        qx = (qx_s + 0.5 * x) / (1.0 + x)
        return min(max(qz, 0.0), 0.5), min(max(qx, 0.0), 0.5)

    def sifted_rate(self, length_km: float) -> float:
        g = self.relative_true_rate(length_km)
        x0 = self.accidental_to_true_anchor
        return self.sifted_rate_anchor_bps * (g + x0) / (1.0 + x0)

    def skr(self, length_km: float) -> float:
        qz, qx = self.qbers(length_km)
        return max(0.0, secret_fraction(qz, qx, self.params.f) * self.sifted_rate(length_km))


def fit_sweep_model(anchor_length_km: float, sifted_rate_anchor_bps: float,
                    qber_z_anchor: float, qber_x_anchor: float,
                    far_length_km: float, qber_z_far: float, qber_x_far: float,
                    sifted_rate_far_bps: float, params: SkrParams,
                    accidental_to_true_anchor: float = 0.0) -> SweepModel:
    """Build the two-point sweep model from calibrated operating points.

    The effective attenuation reproduces the measured rate ratio exactly and
    the intrinsic error interpolation is chosen so both anchors' QBERs are
    reproduced exactly after the accidental correction.
    """
    if far_length_km <= anchor_length_km:
        raise ConfigError("fit_sweep_model: far length must exceed anchor length")
    for name, q in (("qber_z_anchor", qber_z_anchor), ("qber_x_anchor", qber_x_anchor),
                    ("qber_z_far", qber_z_far), ("qber_x_far", qber_x_far)):
        if not 0.0 <= q < 0.5:
            raise ConfigError(f"fit_sweep_model: {name} outside [0, 0.5)")
    if qber_z_far < qber_z_anchor or qber_x_far < qber_x_anchor:
        raise ConfigError("fit_sweep_model: far QBERs must not be below anchor QBERs")
    if not 0.0 < sifted_rate_far_bps < sifted_rate_anchor_bps:
        raise ConfigError("fit_sweep_model: far sifted rate must be below the anchor's")

    x0 = max(accidental_to_true_anchor, 0.0)
    rate_ratio = sifted_rate_far_bps / sifted_rate_anchor_bps
    g_far = rate_ratio * (1.0 + x0) - x0
    if g_far <= 0:
        raise ConfigError("fit_sweep_model: accidental floor exceeds the far rate")
    a_eff = -10.0 * math.log10(g_far) / (far_length_km - anchor_length_km)
    x_far = x0 / g_far

    def intrinsic(q_meas, x):
        return q_meas * (1.0 + x) - 0.5 * x

    return SweepModel(
        anchor_length_km=anchor_length_km,
        far_length_km=far_length_km,
        sifted_rate_anchor_bps=sifted_rate_anchor_bps,
        atten_db_per_km_eff=a_eff,
        accidental_to_true_anchor=x0,
        qber_z_intrinsic=(intrinsic(qber_z_anchor, x0), intrinsic(qber_z_far, x_far)),
        qber_x_intrinsic=(intrinsic(qber_x_anchor, x0), intrinsic(qber_x_far, x_far)),
        params=params,
    )


def skr_vs_distance(model: SweepModel, lengths_km) -> list[tuple[float, float]]:
    """Evaluate the analytic SKR model over a sorted list of lengths."""
    lengths = [float(x) for x in lengths_km]
    if any(x < 0 for x in lengths):
        raise ConfigError("skr_vs_distance: lengths must be non-negative")
    if lengths != sorted(lengths):
        raise ConfigError("skr_vs_distance: lengths must be sorted ascending")
    return [(length, model.skr(length)) for length in lengths]
