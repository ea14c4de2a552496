"""Set-Sequence panel modeling toolkit.

A numpy package (numba-accelerated hot kernels with a pure-numpy fallback,
selected via the SETSEQ_BACKEND environment variable) implementing:

* a default-contagion panel simulator with exact transition probabilities,
* a Kalman-filter oracle for the latent group intensity under partial
  observation,
* a reverse-mode autodiff core and the Set-Sequence architecture (mean,
  attention, and gated cross-sectional summaries),
* training loops (masked cross-entropy and Sharpe-ratio objectives),
* an evaluation suite (pairwise AUC, KL, R^2, correlation, portfolio
  statistics, interpretability probes), and
* a synthetic factor market with a cost-aware backtester.
"""

__version__ = "0.1.0"

from .backend import ACTIVE_BACKEND  # noqa: F401
