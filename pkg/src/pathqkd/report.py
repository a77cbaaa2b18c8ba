"""Delimited report files and their companion matplotlib figures.

Every writer stamps the tool version, seed, and scenario digest into comment
headers so outputs are traceable and reproducible byte-for-byte.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.colors import hsv_to_rgb

from . import __version__
from .phase import PhaseTrace

_FLOAT_FMT = "{:.17g}"


def _fmt(x) -> str:
    return _FLOAT_FMT.format(float(x))


def header_lines(meta: dict | None) -> list[str]:
    lines = [f"# pathqkd {__version__}"]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={value}")
    return lines


def write_delimited(path, columns: list[str], rows, meta: dict | None = None,
                    formats=None):
    """Write a comma-delimited table with comment headers."""
    with open(path, "w") as fh:
        for line in header_lines(meta):
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for idx, value in enumerate(row):
                if formats and formats[idx] is not None:
                    cells.append(formats[idx].format(value))
                elif isinstance(value, (bool, np.bool_)):
                    cells.append("1" if value else "0")
                elif isinstance(value, (int, np.integer)):
                    cells.append(str(int(value)))
                elif isinstance(value, str):
                    cells.append(value)
                else:
                    cells.append(_fmt(value))
            fh.write(",".join(cells) + "\n")


def read_delimited(path) -> tuple[list[str], list[list[str]]]:
    columns, rows = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if not columns:
                columns = line.split(",")
            else:
                rows.append(line.split(","))
    return columns, rows


def write_phase_trace_csv(path, trace: PhaseTrace, meta: dict | None = None):
    rows = zip(trace.time_s, trace.true_phase_rad, trace.correction_rad,
               trace.residual_rad, trace.pd_power_norm, trace.locked)
    write_delimited(path, ["t_s", "true_phase", "correction", "residual",
                           "pd_power", "locked"], rows, meta)


def read_phase_trace_csv(path) -> PhaseTrace:
    _, rows = read_delimited(path)
    arr = np.array([[float(c) for c in row] for row in rows])
    return PhaseTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4],
                      arr[:, 5] > 0.5)


def write_density_matrix_csv(path, rho: np.ndarray, meta: dict | None = None):
    """Row-major 4x4 complex entries as re,im pairs."""
    rho = np.asarray(rho, dtype=complex)
    with open(path, "w") as fh:
        for line in header_lines(meta):
            fh.write(line + "\n")
        fh.write("# row-major 4x4, entries as re,im pairs\n")
        for row in rho:
            cells = []
            for z in row:
                cells.append(_fmt(z.real))
                cells.append(_fmt(z.imag))
            fh.write(",".join(cells) + "\n")


def read_density_matrix_csv(path) -> np.ndarray:
    _, rows = read_delimited(path)
    rho = np.empty((4, 4), dtype=complex)
    for i, row in enumerate(rows):
        vals = [float(c) for c in row]
        for j in range(4):
            rho[i, j] = vals[2 * j] + 1j * vals[2 * j + 1]
    return rho


def write_density_matrix_polar_csv(path, rho: np.ndarray, meta: dict | None = None):
    """Row-major 4x4 entries as amplitude,phase pairs (for bar plotting)."""
    rho = np.asarray(rho, dtype=complex)
    with open(path, "w") as fh:
        for line in header_lines(meta):
            fh.write(line + "\n")
        fh.write("# row-major 4x4, entries as amplitude,phase pairs\n")
        for row in rho:
            cells = []
            for z in row:
                cells.append(_fmt(abs(z)))
                cells.append(_fmt(np.angle(z)))
            fh.write(",".join(cells) + "\n")


def write_fidelity_samples_csv(path, samples, meta: dict | None = None):
    write_delimited(path, ["run", "fidelity"],
                    [(i, s) for i, s in enumerate(samples)], meta)


def write_qber_table_csv(path, rows, meta: dict | None = None):
    """Rows of (label, qber_z, qber_x, qber_y, avg_zx), fractions in percent."""
    table = [(label, 100 * qz, 100 * qx, 100 * qy, 100 * 0.5 * (qz + qx))
             for label, qz, qx, qy in rows]
    write_delimited(path, ["scenario", "qber_z_pct", "qber_x_pct", "qber_y_pct",
                           "avg_qber_zx_pct"], table, meta)


def write_skr_table_csv(path, asymptotic_bps: float, finite_results,
                        meta: dict | None = None):
    rows = [("asymptotic", "", asymptotic_bps, "", "")]
    for r in finite_results:
        rows.append(("finite", r.block_size, r.skr_fin_bps, r.delta,
                     r.acquisition_time_s))
    write_delimited(path, ["kind", "block_size", "skr_bps", "delta",
                           "acquisition_time_s"], rows, meta)


# ---------------------------------------------------------------- figures

_BASIS_LABELS = ("|00>", "|01>", "|10>", "|11>")


def fig_phase_trace(trace: PhaseTrace, path):
    fig, axes = plt.subplots(2, 1, figsize=(9, 5.5), sharex=True)
    t = trace.time_s
    axes[0].plot(t, trace.pd_power_norm, lw=0.6, color="tab:blue")
    axes[0].set_ylabel("PD power (norm.)")
    axes[0].set_ylim(-0.05, 1.05)
    axes[1].plot(t, trace.residual_rad, lw=0.6, color="tab:orange",
                 label="residual")
    unlocked = ~trace.locked
    if unlocked.any():
        axes[1].plot(t[unlocked], trace.residual_rad[unlocked], ".",
                     ms=2, color="tab:red", label="unlocked")
    axes[1].set_ylabel("residual phase (rad)")
    axes[1].set_xlabel("time (s)")
    axes[1].legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def fig_density_matrix(rho: np.ndarray, path):
    """3D bars: height = amplitude, color = phase of each entry."""
    rho = np.asarray(rho, dtype=complex)
    amp = np.abs(rho)
    phase = np.angle(rho)
    fig = plt.figure(figsize=(7, 5.5))
    ax = fig.add_subplot(projection="3d")
    xs, ys = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    heights = amp.ravel()
    hue = (phase.ravel() + np.pi) / (2 * np.pi)
    colors = hsv_to_rgb(np.stack([hue, 0.85 * np.ones_like(hue),
                                  0.9 * np.ones_like(hue)], axis=1))
    ax.bar3d(xs - 0.35, ys - 0.35, np.zeros_like(heights), 0.7, 0.7, heights,
             color=colors, shade=True)
    ax.set_xticks(range(4), _BASIS_LABELS)
    ax.set_yticks(range(4), _BASIS_LABELS)
    ax.set_zlim(0, max(0.55, heights.max() * 1.05))
    ax.set_zlabel("|rho_ij|")
    ax.set_title("Reconstructed density matrix (color = phase)")
    fig.subplots_adjust(left=0.02, right=0.98, bottom=0.05, top=0.95)
    fig.savefig(path, dpi=130)
    plt.close(fig)


def fig_fidelity_histogram(samples, mean: float, std: float, path, bins: int = 60):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.hist(samples, bins=bins, color="tab:blue", alpha=0.8)
    ax.axvline(mean, color="k", lw=1.0)
    ax.set_xlabel("fidelity to target")
    ax.set_ylabel("runs")
    ax.set_title(f"Monte Carlo fidelity: {mean:.4f} +/- {std:.4f} "
                 f"({len(samples)} runs)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def fig_joint_probabilities(matrix: np.ndarray, path):
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0, vmax=0.5)
    labels = ("X+", "X-", "Z+", "Z-")
    ax.set_xticks(range(4), labels)
    ax.set_yticks(range(4), labels)
    ax.set_xlabel("signal (Bob)")
    ax.set_ylabel("idler (Alice)")
    for i in range(4):
        for j in range(4):
            ax.text(j, i, f"{matrix[i, j]:.3f}", ha="center", va="center",
                    color="white" if matrix[i, j] < 0.3 else "black", fontsize=8)
    ax.axhline(1.5, color="w", lw=1.5)
    ax.axvline(1.5, color="w", lw=1.5)
    fig.colorbar(im, ax=ax, label="probability (block-normalized)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def fig_skr_blocks(asymptotic_bps: float, finite_results, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ns = [r.block_size for r in finite_results]
    rates = [r.skr_fin_bps for r in finite_results]
    ax.semilogx(ns, rates, "o-", color="tab:green", label="finite-key")
    ax.axhline(asymptotic_bps, color="k", ls="--", lw=1.0, label="asymptotic")
    ax.set_xlabel("block size n")
    ax.set_ylabel("SKR (bit/s)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def fig_skr_vs_length(rows, path):
    """rows: (length_km, skr_analytic, skr_simulated or None)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    lengths = [r[0] for r in rows]
    analytic = [r[1] for r in rows]
    ax.semilogy(lengths, np.maximum(analytic, 1e-6), "--", color="k",
                label="analytic model")
    sim = [(r[0], r[2]) for r in rows if len(r) > 2 and r[2] is not None]
    if sim:
        ax.semilogy([s[0] for s in sim], np.maximum([s[1] for s in sim], 1e-6),
                    "o", color="tab:blue", label="simulated")
    ax.set_xlabel("fiber length (km)")
    ax.set_ylabel("SKR (bit/s)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
