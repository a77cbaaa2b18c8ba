"""Independent reference implementations used only to check production code."""

import numpy as np

from pathqkd import quantum as q


def brute_force_chsh(rho: np.ndarray, refine_to: float = 1e-4) -> float:
    """CHSH maximum by direct search over measurement directions.

    E(a, b) = a . T b with T built from explicit operator expectation values;
    for fixed Bob directions b, b' the Alice optimum is exactly
    |T b + T b'| + |T b - T b'| (Cauchy-Schwarz), so only Bob's two
    directions are searched, on a grid refined below ``refine_to`` radians.
    """
    sig = [q.PAULI["X"], q.PAULI["Y"], q.PAULI["Z"]]
    t = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            t[i, j] = np.trace(rho @ np.kron(sig[i], sig[j])).real

    def pair_values(angles_b, angles_b2):
        def dirs(angles):
            theta, phi = angles[:, 0], angles[:, 1]
            st = np.sin(theta)
            return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)

        tb = dirs(angles_b) @ t.T
        tb2 = dirs(angles_b2) @ t.T
        plus = np.linalg.norm(tb[:, None, :] + tb2[None, :, :], axis=2)
        minus = np.linalg.norm(tb[:, None, :] - tb2[None, :, :], axis=2)
        return plus + minus

    thetas = np.linspace(0.0, np.pi, 13)
    phis = np.linspace(0.0, 2 * np.pi, 25, endpoint=False)
    coarse = np.array([(th, ph) for th in thetas for ph in phis])
    values = pair_values(coarse, coarse)
    i, j = np.unravel_index(np.argmax(values), values.shape)
    best = float(values[i, j])
    center_b, center_b2 = coarse[i].copy(), coarse[j].copy()

    window = np.pi / 12
    while window > refine_to / 2:
        offs = np.linspace(-window, window, 7)
        grid_b = np.array([(center_b[0] + a, center_b[1] + b)
                           for a in offs for b in offs])
        grid_b2 = np.array([(center_b2[0] + a, center_b2[1] + b)
                            for a in offs for b in offs])
        values = pair_values(grid_b, grid_b2)
        i, j = np.unravel_index(np.argmax(values), values.shape)
        if values[i, j] > best:
            best = float(values[i, j])
            center_b, center_b2 = grid_b[i].copy(), grid_b2[j].copy()
        window /= 3.0
    return best


def high_precision_binary_entropy(p: str, digits: int = 50) -> float:
    """H2 evaluated with mpmath at ``digits`` precision (independent oracle)."""
    import mpmath

    with mpmath.workdps(digits):
        x = mpmath.mpf(p)
        if x == 0 or x == 1:
            return 0.0
        ln2 = mpmath.log(2)
        h = -(x * mpmath.log(x) + (1 - x) * mpmath.log(1 - x)) / ln2
        return float(h)
