"""pathqkd: simulator and analysis toolkit for path-encoded entanglement QKD.

Synthesizes coincidence-count data from a parametric link model (pair
source, lossy arms, phase drift, PLL stabilization, detectors) and runs the
full analysis chain: MLE state tomography with Monte Carlo error bars, CHSH
evaluation, per-basis QBER, and asymptotic / finite-key BBM92 secret key
rates.
"""

__version__ = "0.1.0"
