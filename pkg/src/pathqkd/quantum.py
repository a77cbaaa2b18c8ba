"""Dense two-qubit state algebra.

States are plain 4x4 complex numpy arrays in the computational basis
|00>, |01>, |10>, |11> (first qubit = Alice / idler, second = Bob / signal).
All operations are pure functions over immutable inputs and are safe to call
concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, InvalidStateError

# Pauli matrices, indexed I, X, Y, Z (sigma_0 .. sigma_3).
PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
PAULI_ORDER = ("I", "X", "Y", "Z")

# Measurement bases available on either side, and joint outcome labels in the
# fixed order (+,+), (+,-), (-,+), (-,-).
BASES = ("Z", "X", "Y")
OUTCOMES = ("pp", "pm", "mp", "mm")

# Tolerances for the state invariants (Hermiticity, unit trace, positivity).
HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = -1e-10

_SQ2 = 1.0 / np.sqrt(2.0)

# Single-qubit eigenvectors (plus outcome, minus outcome) per basis.
BASIS_VECTORS = {
    "Z": (np.array([1.0, 0.0], dtype=complex), np.array([0.0, 1.0], dtype=complex)),
    "X": (np.array([_SQ2, _SQ2], dtype=complex), np.array([_SQ2, -_SQ2], dtype=complex)),
    "Y": (np.array([_SQ2, 1j * _SQ2], dtype=complex), np.array([_SQ2, -1j * _SQ2], dtype=complex)),
}


def validate_state(rho: np.ndarray, name: str = "rho") -> np.ndarray:
    """Check the density-matrix invariants, returning rho as complex128.

    Raises InvalidStateError if rho is not 4x4 Hermitian with unit trace and
    eigenvalues above the PSD tolerance.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise InvalidStateError(f"{name}: expected a 4x4 matrix, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITICITY_TOL:
        raise InvalidStateError(f"{name}: not Hermitian (max deviation {herm:.3e})")
    tr = rho.trace()
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvalidStateError(f"{name}: trace {tr:.15g} != 1")
    min_eig = float(np.linalg.eigvalsh(rho)[0])
    if min_eig < PSD_TOL:
        raise InvalidStateError(f"{name}: not positive semidefinite (min eigenvalue {min_eig:.3e})")
    return rho


def is_physical(rho: np.ndarray) -> bool:
    """True when rho satisfies all state invariants."""
    try:
        validate_state(rho)
    except InvalidStateError:
        return False
    return True


def bell_phi_plus() -> np.ndarray:
    """Density matrix of (|00> + |11>)/sqrt(2)."""
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = rho[0, 3] = rho[3, 0] = rho[3, 3] = 0.5
    return rho


def bell_phi_minus() -> np.ndarray:
    """Density matrix of (|00> - |11>)/sqrt(2)."""
    return phased_bell(np.pi)


def phased_bell(phase_rad: float, imbalance: float = 1.0) -> np.ndarray:
    """Pure state a|00> + b e^{i phase}|11> as a density matrix.

    ``imbalance`` is the ratio of the |11> generation rate to the |00> rate,
    so b^2/a^2 = imbalance; imbalance 1 gives the balanced Bell family.
    """
    if imbalance < 0:
        raise DomainError(f"imbalance must be >= 0, got {imbalance}")
    a = np.sqrt(1.0 / (1.0 + imbalance))
    b = np.sqrt(imbalance / (1.0 + imbalance))
    psi = np.zeros(4, dtype=complex)
    psi[0] = a
    psi[3] = b * np.exp(1j * phase_rad)
    return np.outer(psi, psi.conj())


def maximally_mixed() -> np.ndarray:
    """The two-qubit maximally mixed state I/4."""
    return np.eye(4, dtype=complex) / 4.0


def pauli_expectation(rho: np.ndarray, i: str, j: str) -> float:
    """Expectation value Tr(rho (sigma_i x sigma_j)) for i, j in I, X, Y, Z."""
    rho = validate_state(rho)
    if i not in PAULI or j not in PAULI:
        raise DomainError(f"unknown Pauli index pair ({i!r}, {j!r})")
    op = np.kron(PAULI[i], PAULI[j])
    value = np.trace(rho @ op)
    if abs(value.imag) > 1e-10:
        raise InvalidStateError(f"expectation <{i}{j}> has imaginary part {value.imag:.3e}")
    return float(value.real)


def correlation_tensor(rho: np.ndarray) -> np.ndarray:
    """Full 4x4 tensor of Pauli expectation values c_ij (c_00 = 1)."""
    c = np.empty((4, 4))
    for a, i in enumerate(PAULI_ORDER):
        for b, j in enumerate(PAULI_ORDER):
            c[a, b] = pauli_expectation(rho, i, j)
    return c


def state_from_correlations(c: np.ndarray) -> tuple[np.ndarray, bool]:
    """Linear-inversion state rho = 1/4 sum_ij c_ij (sigma_i x sigma_j).

    Returns (rho, physical). rho is Hermitian with unit trace by construction
    but may have negative eigenvalues; ``physical`` flags whether it passes
    the PSD tolerance.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (4, 4):
        raise DomainError(f"correlation tensor must be 4x4, got {c.shape}")
    if abs(c[0, 0] - 1.0) > 1e-9:
        raise DomainError(f"c_00 must be 1, got {c[0, 0]!r}")
    rho = np.zeros((4, 4), dtype=complex)
    for a, i in enumerate(PAULI_ORDER):
        for b, j in enumerate(PAULI_ORDER):
            rho += c[a, b] * np.kron(PAULI[i], PAULI[j])
    rho /= 4.0
    rho = 0.5 * (rho + rho.conj().T)
    physical = float(np.linalg.eigvalsh(rho)[0]) >= PSD_TOL
    return rho, physical


def _clamped_eigh(rho: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition with tiny negative eigenvalues clamped to zero.

    Eigenvalues in [PSD_TOL, 0) are numerical noise from optimizers and are
    set to 0 with the spectrum renormalized; anything more negative raises.
    """
    vals, vecs = np.linalg.eigh(rho)
    if float(vals[0]) < PSD_TOL:
        raise InvalidStateError(f"{name}: min eigenvalue {vals[0]:.3e} below tolerance")
    vals = np.clip(vals, 0.0, None)
    vals = vals / vals.sum()
    return vals, vecs


def fidelity(rho_exp: np.ndarray, rho_th: np.ndarray) -> float:
    """Uhlmann fidelity F = (Tr sqrt(sqrt(rho_exp) rho_th sqrt(rho_exp)))^2.

    Evaluated as the squared nuclear norm of sqrt(rho_th) sqrt(rho_exp),
    whose singular values are exactly the eigenvalue square roots of the
    Uhlmann product; summing singular values avoids taking square roots of
    numerically noisy near-zero eigenvalues.
    """
    rho_exp = np.asarray(rho_exp, dtype=complex)
    rho_th = np.asarray(rho_th, dtype=complex)
    for m, name in ((rho_exp, "rho_exp"), (rho_th, "rho_th")):
        if m.shape != (4, 4):
            raise InvalidStateError(f"{name}: expected 4x4 matrix")
        if np.max(np.abs(m - m.conj().T)) > 1e-9:
            raise InvalidStateError(f"{name}: not Hermitian")
        if abs(m.trace() - 1.0) > 1e-9:
            raise InvalidStateError(f"{name}: trace != 1")
    vals_e, vecs_e = _clamped_eigh(rho_exp, "rho_exp")
    vals_t, vecs_t = _clamped_eigh(rho_th, "rho_th")
    sqrt_exp = (vecs_e * np.sqrt(vals_e)) @ vecs_e.conj().T
    sqrt_th = (vecs_t * np.sqrt(vals_t)) @ vecs_t.conj().T
    singular = np.linalg.svd(sqrt_th @ sqrt_exp, compute_uv=False)
    f = float(singular.sum() ** 2)
    return min(max(f, 0.0), 1.0)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Trace distance 0.5 * Tr|rho - sigma|."""
    diff = np.asarray(rho, dtype=complex) - np.asarray(sigma, dtype=complex)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


def chsh_max(rho: np.ndarray) -> float:
    """Maximal CHSH value 2 sqrt(t1 + t2) from the correlation block.

    t1 >= t2 are the two largest eigenvalues of T^T T, where T is the 3x3
    block of Pauli correlations over X, Y, Z.
    """
    rho = validate_state(rho)
    t = np.empty((3, 3))
    for a, i in enumerate(PAULI_ORDER[1:]):
        for b, j in enumerate(PAULI_ORDER[1:]):
            op = np.kron(PAULI[i], PAULI[j])
            t[a, b] = np.trace(rho @ op).real
    sing = np.linalg.eigvalsh(t.T @ t)
    return float(2.0 * np.sqrt(sing[-1] + sing[-2]))


def setting_projectors(basis_alice: str, basis_bob: str) -> list[np.ndarray]:
    """Four joint projectors for a basis pair, in OUTCOMES order."""
    if basis_alice not in BASIS_VECTORS or basis_bob not in BASIS_VECTORS:
        raise DomainError(f"unknown basis pair ({basis_alice!r}, {basis_bob!r})")
    va = BASIS_VECTORS[basis_alice]
    vb = BASIS_VECTORS[basis_bob]
    projs = []
    for sa in (0, 1):
        for sb in (0, 1):
            vec = np.kron(va[sa], vb[sb])
            projs.append(np.outer(vec, vec.conj()))
    return projs


def born_probabilities(rho: np.ndarray, basis_alice: str, basis_bob: str) -> np.ndarray:
    """Joint outcome probabilities (++, +-, -+, --) for a basis pair."""
    rho = validate_state(rho)
    probs = np.array(
        [np.trace(rho @ p).real for p in setting_projectors(basis_alice, basis_bob)]
    )
    probs = np.clip(probs, 0.0, None)
    total = probs.sum()
    if abs(total - 1.0) > 1e-12:
        raise InvalidStateError(f"outcome probabilities sum to {total:.15g}")
    return probs / total
