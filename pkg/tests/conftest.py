"""Shared helpers for the test suite."""

import numpy as np
import pytest

from pathqkd import quantum
from pathqkd.linksim import CountTable
from pathqkd.tomography import TomographyDataset


def ginibre_state(rng: np.random.Generator) -> np.ndarray:
    """Random full-rank physical two-qubit state (Ginibre ensemble)."""
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = g @ g.conj().T
    return rho / rho.trace().real


def dataset_from_state(rho: np.ndarray, n_per_setting: int,
                       rng: np.random.Generator) -> TomographyDataset:
    """Multinomial counts sampled from a state's Born probabilities."""
    counts, integ, acc = {}, {}, {}
    for a in quantum.BASES:
        for b in quantum.BASES:
            p = quantum.born_probabilities(rho, a, b)
            counts[(a, b)] = rng.multinomial(n_per_setting, p)
            integ[(a, b)] = 1.0
            acc[(a, b)] = 0.0
    return TomographyDataset(CountTable(counts, integ, acc))


def exact_dataset_from_state(rho: np.ndarray, n_per_setting: int) -> TomographyDataset:
    """Counts equal to rounded expected values (no sampling noise)."""
    counts, integ, acc = {}, {}, {}
    for a in quantum.BASES:
        for b in quantum.BASES:
            p = quantum.born_probabilities(rho, a, b)
            counts[(a, b)] = np.rint(p * n_per_setting).astype(np.int64)
            integ[(a, b)] = 1.0
            acc[(a, b)] = 0.0
    return TomographyDataset(CountTable(counts, integ, acc))


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)
