"""Two-qubit state reconstruction from 9-setting coincidence data.

Linear inversion gives a fast (possibly unphysical) estimate; maximum
likelihood estimation over the physical set is the production path, with
Poissonian Monte Carlo resampling for uncertainty bars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quantum
from .errors import DomainError, EmptySettingError, NotNormalizedError, ValidationError
from .linksim import CountTable

ALL_SETTINGS = tuple((a, b) for a in quantum.BASES for b in quantum.BASES)

PROB_FLOOR = 1e-12
DEFAULT_MAX_ITERATIONS = 5000
DEFAULT_TOL = 1e-10

# Projector stack for all 9 settings x 4 outcomes, plus its flattened form for
# fast probability evaluation: probs = MEAS_MATRIX @ rho.reshape(16).
_PROJECTORS = np.array(
    [p for (a, b) in ALL_SETTINGS for p in quantum.setting_projectors(a, b)]
)
_MEAS_MATRIX = _PROJECTORS.transpose(0, 2, 1).reshape(36, 16)


@dataclass
class TomographyDataset:
    """A complete 9-setting count table (36 integers)."""

    table: CountTable

    def __post_init__(self):
        for key in ALL_SETTINGS:
            if key not in self.table.counts:
                raise ValidationError(f"tomography dataset: missing setting {key}")
            if self.table.total(*key) <= 0:
                raise EmptySettingError(f"tomography dataset: setting {key} has zero counts")

    @classmethod
    def from_count_table(cls, table: CountTable) -> "TomographyDataset":
        return cls(table)

    def counts_vector(self) -> np.ndarray:
        """All 36 counts, settings in ALL_SETTINGS order, outcomes within."""
        return np.concatenate([self.table.setting_counts(a, b) for a, b in ALL_SETTINGS])

    def setting_totals(self) -> np.ndarray:
        return np.array([self.table.total(a, b) for a, b in ALL_SETTINGS], dtype=float)

    def with_counts_vector(self, vec: np.ndarray) -> "TomographyDataset":
        counts = {}
        for idx, key in enumerate(ALL_SETTINGS):
            counts[key] = np.asarray(vec[4 * idx: 4 * idx + 4], dtype=np.int64)
        table = CountTable(counts, dict(self.table.integration_s),
                           dict(self.table.accidental_estimate))
        return TomographyDataset(table)


@dataclass
class ReconstructionResult:
    rho: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    physical_inversion: bool


@dataclass
class FidelityHistogram:
    """Monte Carlo fidelity samples with their moments."""

    samples: np.ndarray
    mean: float
    std: float
    excluded_runs: int = 0


def _outcome_signs(basis_alice: str, basis_bob: str) -> np.ndarray:
    """Products s_a * s_b for the four outcomes of a setting."""
    return np.array([1.0, -1.0, -1.0, 1.0])


def correlations_from_counts(data: TomographyDataset) -> np.ndarray:
    """Estimate the full 4x4 Pauli correlation tensor from counts.

    Block entries come from the matching setting; single-party entries are
    marginals averaged over the other party's three bases; c_00 = 1.
    """
    freq = {}
    for key in ALL_SETTINGS:
        n = data.table.setting_counts(*key).astype(float)
        total = n.sum()
        if total <= 0:
            raise EmptySettingError(f"setting {key} has zero counts")
        freq[key] = n / total

    idx = {"X": 1, "Y": 2, "Z": 3}
    c = np.zeros((4, 4))
    c[0, 0] = 1.0
    for a in quantum.BASES:
        for b in quantum.BASES:
            f = freq[(a, b)]
            c[idx[a], idx[b]] = f[0] - f[1] - f[2] + f[3]
    for a in quantum.BASES:
        marg = [freq[(a, b)][0] + freq[(a, b)][1] - freq[(a, b)][2] - freq[(a, b)][3]
                for b in quantum.BASES]
        c[idx[a], 0] = float(np.mean(marg))
    for b in quantum.BASES:
        marg = [freq[(a, b)][0] - freq[(a, b)][1] + freq[(a, b)][2] - freq[(a, b)][3]
                for a in quantum.BASES]
        c[0, idx[b]] = float(np.mean(marg))
    return c


def linear_inversion(data: TomographyDataset) -> tuple[np.ndarray, bool]:
    """Linear-inversion state from the measured correlation tensor."""
    return quantum.state_from_correlations(correlations_from_counts(data))


def project_to_physical(rho: np.ndarray) -> np.ndarray:
    """Clamp negative eigenvalues to zero and renormalize."""
    rho = 0.5 * (rho + rho.conj().T)
    vals, vecs = np.linalg.eigh(rho)
    vals = np.clip(vals, 0.0, None)
    total = vals.sum()
    if total <= 0:
        return quantum.maximally_mixed()
    vals /= total
    return (vecs * vals) @ vecs.conj().T


def _probabilities(rho: np.ndarray) -> np.ndarray:
    probs = (_MEAS_MATRIX @ rho.reshape(16)).real
    return np.clip(probs, PROB_FLOOR, None)


def log_likelihood(rho: np.ndarray, data: TomographyDataset) -> float:
    """Multinomial log-likelihood sum_k n_k log p_k over all 36 bins."""
    n = data.counts_vector().astype(float)
    return float(np.dot(n, np.log(_probabilities(rho))))


def _ascend(rho: np.ndarray, n: np.ndarray, max_iterations: int,
            tol: float) -> tuple[np.ndarray, float, int, bool]:
    """Monotone R rho R likelihood ascent from a given starting state."""
    n_total = n.sum()
    eye = np.eye(4)
    logl = float(np.dot(n, np.log(_probabilities(rho))))
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        probs = _probabilities(rho)
        weights = n / probs
        r_op = np.einsum("k,kij->ij", weights, _PROJECTORS) / n_total
        candidate = r_op @ rho @ r_op
        candidate = 0.5 * (candidate + candidate.conj().T)
        candidate /= candidate.trace().real
        new_logl = float(np.dot(n, np.log(_probabilities(candidate))))

        if new_logl < logl:
            # Diluted step: contract toward the identity until ascent resumes.
            eps = 0.5
            while eps > 1e-6:
                mixed = (eye + eps * r_op) @ rho @ (eye + eps * r_op)
                mixed = 0.5 * (mixed + mixed.conj().T)
                mixed /= mixed.trace().real
                new_logl = float(np.dot(n, np.log(_probabilities(mixed))))
                if new_logl >= logl:
                    candidate = mixed
                    break
                eps *= 0.5
            if new_logl < logl:
                break

        delta = new_logl - logl
        rho = candidate
        logl = new_logl
        if abs(delta) < tol * max(abs(logl), 1.0):
            converged = True
            break
    return rho, logl, iterations, converged


def mle_reconstruct(data: TomographyDataset,
                    max_iterations: int = DEFAULT_MAX_ITERATIONS,
                    tol: float = DEFAULT_TOL) -> ReconstructionResult:
    """Maximum-likelihood state estimate via the iterative R rho R ascent.

    Starts from the maximally mixed state and applies the fixed-point update
    rho <- R rho R / Tr(.) with R = sum_k (n_k / p_k) Pi_k, diluting the step
    whenever it would not increase the likelihood; the result is positive
    semidefinite with unit trace by construction.  Converged means the
    relative log-likelihood change fell below ``tol``.  If the stopped
    iterate falls short of the projected linear inversion's likelihood (the
    fixed point crawls in flat directions), the ascent restarts from that
    projection, so the returned likelihood always dominates it.
    """
    n = data.counts_vector().astype(float)
    inversion, physical_inv = linear_inversion(data)

    rho, logl, iterations, converged = _ascend(
        quantum.maximally_mixed(), n, max_iterations, tol)

    projected = project_to_physical(inversion)
    if float(np.dot(n, np.log(_probabilities(projected)))) > logl:
        rho2, logl2, iters2, conv2 = _ascend(projected, n, max_iterations, tol)
        if logl2 > logl:
            rho, logl, converged = rho2, logl2, conv2
        iterations += iters2

    rho = project_to_physical(rho)
    return ReconstructionResult(
        rho=rho,
        log_likelihood=float(np.dot(n, np.log(_probabilities(rho)))),
        iterations=iterations,
        converged=converged,
        physical_inversion=physical_inv,
    )


def resampled_datasets(data: TomographyDataset, n_runs: int, seed,
                       resample_scale: float = 1.0):
    """Yield Poisson-resampled datasets, one per run.

    Each count n is redrawn as Poisson(n); ``resample_scale`` scales the
    fluctuation around the observed counts (0 disables resampling, 1 is pure
    Poisson), for noise models estimated empirically rather than assumed.
    """
    if n_runs < 1:
        raise DomainError(f"n_runs must be >= 1, got {n_runs}")
    if resample_scale < 0:
        raise DomainError(f"resample_scale must be >= 0, got {resample_scale}")
    base = data.counts_vector()
    seeds = np.random.SeedSequence(seed).spawn(n_runs)
    for run_seed in seeds:
        rng = np.random.default_rng(run_seed)
        if resample_scale == 0.0:
            yield data
            continue
        drawn = rng.poisson(base).astype(float)
        vec = base + resample_scale * (drawn - base)
        vec = np.clip(np.rint(vec), 0, None).astype(np.int64)
        # Keep every setting non-empty so the dataset invariant holds.
        for idx in range(9):
            if vec[4 * idx: 4 * idx + 4].sum() == 0:
                vec[4 * idx] = 1
        yield data.with_counts_vector(vec)


def monte_carlo_fidelity(data: TomographyDataset, target: np.ndarray, n_runs: int,
                         seed=0, resample_scale: float = 1.0,
                         max_iterations: int = DEFAULT_MAX_ITERATIONS) -> FidelityHistogram:
    """Distribution of fidelity-to-target over Poisson-resampled datasets.

    Non-converged reconstructions are excluded from the histogram and
    reported in ``excluded_runs``.
    """
    target = quantum.validate_state(target, "target")
    samples = []
    excluded = 0
    for ds in resampled_datasets(data, n_runs, seed, resample_scale):
        result = mle_reconstruct(ds, max_iterations=max_iterations)
        if not result.converged:
            excluded += 1
            continue
        samples.append(quantum.fidelity(result.rho, target))
    arr = np.asarray(samples, dtype=float)
    mean = float(arr.mean()) if arr.size else float("nan")
    if arr.size and np.all(arr == arr[0]):
        std = 0.0
    else:
        std = float(arr.std()) if arr.size else float("nan")
    return FidelityHistogram(samples=arr, mean=mean, std=std, excluded_runs=excluded)


def monte_carlo_statistic(data: TomographyDataset, statistic, n_runs: int, seed=0,
                          resample_scale: float = 1.0) -> np.ndarray:
    """Resample counts and evaluate ``statistic(rho)`` on each reconstruction."""
    values = []
    for ds in resampled_datasets(data, n_runs, seed, resample_scale):
        result = mle_reconstruct(ds)
        if result.converged:
            values.append(statistic(result.rho))
    return np.asarray(values, dtype=float)


# Joint probabilities in the Z/X subspace (four normalized 2x2 blocks).
_JOINT_BLOCK_ORDER = (("X", "X"), ("X", "Z"), ("Z", "X"), ("Z", "Z"))


def joint_probability_matrix(data: TomographyDataset) -> np.ndarray:
    """4x4 matrix of block-normalized Z/X joint outcome probabilities.

    Block rows and columns are ordered [X, Z] per party, outcomes [+, -]
    within a block; each 2x2 block sums to 1.
    """
    m = np.empty((4, 4))
    for bi, (a, b) in enumerate(_JOINT_BLOCK_ORDER):
        n = data.table.setting_counts(a, b).astype(float)
        total = n.sum()
        if total <= 0:
            raise EmptySettingError(f"setting {(a, b)} has zero counts")
        block = (n / total).reshape(2, 2)
        r, c = divmod(bi, 2)
        m[2 * r: 2 * r + 2, 2 * c: 2 * c + 2] = block
    return m


def ideal_joint_probability_matrix(rho: np.ndarray | None = None) -> np.ndarray:
    """Joint probability matrix of a given state (default: the Phi+ target)."""
    if rho is None:
        rho = quantum.bell_phi_plus()
    m = np.empty((4, 4))
    for bi, (a, b) in enumerate(_JOINT_BLOCK_ORDER):
        block = quantum.born_probabilities(rho, a, b).reshape(2, 2)
        r, c = divmod(bi, 2)
        m[2 * r: 2 * r + 2, 2 * c: 2 * c + 2] = block
    return m


def matrix_overlap(p_exp: np.ndarray, p_th: np.ndarray) -> float:
    """Overlap score 1 - mean total-variation distance over the four blocks."""
    p_exp = np.asarray(p_exp, dtype=float)
    p_th = np.asarray(p_th, dtype=float)
    if p_exp.shape != (4, 4) or p_th.shape != (4, 4):
        raise DomainError("joint probability matrices must be 4x4")
    tv_sum = 0.0
    for bi in range(4):
        r, c = divmod(bi, 2)
        be = p_exp[2 * r: 2 * r + 2, 2 * c: 2 * c + 2]
        bt = p_th[2 * r: 2 * r + 2, 2 * c: 2 * c + 2]
        for name, block in (("p_exp", be), ("p_th", bt)):
            if abs(block.sum() - 1.0) > 1e-6:
                raise NotNormalizedError(
                    f"{name}: block ({r},{c}) sums to {block.sum():.9g}, expected 1"
                )
        tv_sum += 0.5 * float(np.abs(be - bt).sum())
    return 1.0 - tv_sum / 4.0
