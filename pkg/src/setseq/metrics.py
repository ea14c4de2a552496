"""Evaluation suite: ranking, divergence, fit, and portfolio statistics.

The AUC treats tied scores as half wins, which is the expectation of
breaking ties with vanishing random noise; the fast path uses average ranks
and agrees with the quadratic pairwise count exactly. Probability metrics
compare against exact transition probabilities, so zero predicted mass is
floored rather than allowed to produce infinities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError

PRED_FLOOR = 1e-12


class UndefinedMetric(Exception):
    """Signal that a metric has no defined value on the given inputs."""


def _rankdata(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mean rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_binary(scores: np.ndarray, positives: np.ndarray) -> float | None:
    """Probability a positive outscores a negative, ties counted half.

    Returns None when either class is empty (undefined, deliberately not 0).
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _rankdata(scores)
    rank_sum = ranks[positives].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_one_vs_rest(scores: np.ndarray, labels: np.ndarray, k: int) -> float | None:
    """One-vs-rest AUC for class k from that class's scores."""
    return auc_binary(scores, np.asarray(labels) == k)


def auc_pairwise_reference(scores: np.ndarray, positives: np.ndarray) -> float | None:
    """Quadratic pairwise count; the independent oracle for the fast path."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    pos = scores[positives]
    neg = scores[~positives]
    if len(pos) == 0 or len(neg) == 0:
        return None
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def kl_metrics(true_probs: np.ndarray, pred_probs: np.ndarray,
               absorbing: int = 2) -> tuple[float, float]:
    """(kl over the absorbing entry, kl over full rows), both cell averages.

    Predictions are floored at 1e-12 before the log; 0 * log(0/q) is 0.
    """
    p = np.asarray(true_probs, dtype=np.float64)
    q = np.asarray(pred_probs, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    if np.isnan(p).any() or np.isnan(q).any():
        raise NumericError("kl_metrics: NaN input")
    q = np.maximum(q, PRED_FLOOR)
    ratio = np.zeros_like(p)
    nz = p > 0
    ratio[nz] = p[nz] * np.log(p[nz] / q[nz])
    kl_absorbing = float(ratio[..., absorbing].mean())
    kl_full = float(ratio.sum(axis=-1).mean())
    return kl_absorbing, kl_full


def pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        return None
    return float((da * db).sum() / denom)


def spearman(a: np.ndarray, b: np.ndarray) -> float | None:
    return pearson(_rankdata(np.asarray(a, dtype=np.float64)),
                   _rankdata(np.asarray(b, dtype=np.float64)))


def r2_and_corr(p: np.ndarray, p_hat: np.ndarray):
    """(R^2, Pearson rho); either may be None when its denominator vanishes."""
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != p_hat.shape or p.size < 2:
        raise ValueError("r2_and_corr needs two aligned series of length >= 2")
    ss_res = float(((p - p_hat) ** 2).sum())
    ss_tot = float(((p - p.mean()) ** 2).sum())
    r2 = None if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return r2, pearson(p, p_hat)


# -- classification bundles ---------------------------------------------------


@dataclass
class ClassificationEval:
    auc_per_class: dict
    auc_absorbing: float | None
    kl_absorbing: float
    kl_full: float
    r2_absorbing: float | None
    corr_absorbing: float | None
    transition_counts: dict
    avg_auc: float | None

    def to_dict(self) -> dict:
        return {
            "auc_per_class": {str(k): v for k, v in self.auc_per_class.items()},
            "auc_absorbing": self.auc_absorbing,
            "kl_absorbing": self.kl_absorbing,
            "kl_full": self.kl_full,
            "r2_absorbing": self.r2_absorbing,
            "corr_absorbing": self.corr_absorbing,
            "transition_counts": {f"{a}->{b}": c for (a, b), c in self.transition_counts.items()},
            "avg_auc": self.avg_auc,
        }


def classification_eval(true_probs: np.ndarray, pred_probs: np.ndarray,
                        labels: np.ndarray, from_states: np.ndarray | None = None,
                        absorbing: int = 2, min_count: int = 10) -> ClassificationEval:
    """Evaluate flattened prediction cells.

    true_probs/pred_probs are (N, C) rows for cells with a realized next
    label in ``labels`` (0-based). ``from_states`` (0-based states at the
    cell's period) enables the per-transition average AUC.
    """
    n, n_classes = pred_probs.shape
    auc_per_class = {
        k: auc_one_vs_rest(pred_probs[:, k], labels, k) for k in range(n_classes)
    }
    kl_abs, kl_full = kl_metrics(true_probs, pred_probs, absorbing=absorbing)
    r2, corr = r2_and_corr(true_probs[:, absorbing], pred_probs[:, absorbing])

    counts: dict = {}
    avg_auc = None
    if from_states is not None:
        aucs = []
        for s in np.unique(from_states):
            sel = from_states == s
            for k in range(n_classes):
                cnt = int((labels[sel] == k).sum())
                counts[(int(s), k)] = cnt
                if cnt >= min_count:
                    a = auc_one_vs_rest(pred_probs[sel, k], labels[sel], k)
                    if a is not None:
                        aucs.append(a)
        avg_auc = float(np.mean(aucs)) if aucs else None
    return ClassificationEval(
        auc_per_class=auc_per_class,
        auc_absorbing=auc_per_class.get(absorbing),
        kl_absorbing=kl_abs,
        kl_full=kl_full,
        r2_absorbing=r2,
        corr_absorbing=corr,
        transition_counts=counts,
        avg_auc=avg_auc,
    )


def transition_auc_matrix(from_states: np.ndarray, labels: np.ndarray,
                          pred_probs: np.ndarray, groups: np.ndarray | None = None,
                          min_count: int = 10):
    """Per-(from, to) AUC with counts and across-group standard deviations.

    Returns a dict (from, to) -> {"auc": float|None, "std": float|None,
    "count": int}. Transitions below ``min_count`` occurrences keep their
    count but report auc=None.
    """
    n_classes = pred_probs.shape[1]
    out = {}
    for s in np.unique(from_states):
        sel = from_states == s
        for k in range(n_classes):
            cnt = int((labels[sel] == k).sum())
            cell = {"auc": None, "std": None, "count": cnt}
            if cnt >= min_count:
                if groups is None:
                    cell["auc"] = auc_one_vs_rest(pred_probs[sel, k], labels[sel], k)
                else:
                    vals = []
                    for g in np.unique(groups):
                        gsel = sel & (groups == g)
                        a = auc_one_vs_rest(pred_probs[gsel, k], labels[gsel], k)
                        if a is not None:
                            vals.append(a)
                    if vals:
                        cell["auc"] = float(np.mean(vals))
                        cell["std"] = float(np.std(vals)) if len(vals) > 1 else None
            out[(int(s), k)] = cell
    return out


# -- portfolio ----------------------------------------------------------------


@dataclass
class PortfolioEval:
    sharpe_annualized: float
    mean_return_annualized: float
    std_return_annualized: float
    beta: float | None
    daily_turnover: float
    short_fraction: float
    cumulative_return: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "sharpe_annualized": self.sharpe_annualized,
            "mean_return_annualized": self.mean_return_annualized,
            "std_return_annualized": self.std_return_annualized,
            "beta": self.beta,
            "daily_turnover": self.daily_turnover,
            "short_fraction": self.short_fraction,
            "final_cumulative_return": float(self.cumulative_return[-1]),
        }


def sharpe_ratio(returns: np.ndarray) -> float:
    """Daily Sharpe with the population standard deviation."""
    r = np.asarray(returns, dtype=np.float64)
    sd = r.std()
    if sd == 0.0:
        raise NumericError("sharpe_ratio: zero return variance")
    return float(r.mean() / sd)


def portfolio_stats(weights: np.ndarray, unit_returns: np.ndarray,
                    market_returns: np.ndarray | None = None,
                    realized: np.ndarray | None = None,
                    trading_days: int = 252) -> PortfolioEval:
    """Summary statistics of a daily weight/return ledger.

    weights (T, N) are the held weights, unit_returns (T, N) the matching
    realized per-unit returns. ``realized`` overrides the per-period
    portfolio return series (e.g. net of costs).
    """
    w = np.asarray(weights, dtype=np.float64)
    y = np.asarray(unit_returns, dtype=np.float64)
    if w.shape != y.shape:
        raise ValueError(f"weights {w.shape} vs returns {y.shape}")
    r = (w * y).sum(axis=1) if realized is None else np.asarray(realized, dtype=np.float64)
    root = np.sqrt(trading_days)
    sr = sharpe_ratio(r) * root
    beta = None
    if market_returns is not None:
        mkt = np.asarray(market_returns, dtype=np.float64)
        var_m = mkt.var()
        if var_m > 0:
            beta = float(((r - r.mean()) * (mkt - mkt.mean())).mean() / var_m)
    turnover = float(np.abs(np.diff(w, axis=0)).sum(axis=1).mean()) if len(w) > 1 else 0.0
    short_frac = float(np.maximum(-w, 0.0).sum(axis=1).mean())
    return PortfolioEval(
        sharpe_annualized=sr,
        mean_return_annualized=float(r.mean() * trading_days),
        std_return_annualized=float(r.std() * root),
        beta=beta,
        daily_turnover=turnover,
        short_fraction=short_frac,
        cumulative_return=np.cumprod(1.0 + r) - 1.0,
    )


# -- interpretability ----------------------------------------------------------


def interpretability_corr(trace, lam_series: np.ndarray, dim: int = 0,
                          batch: int = 0) -> np.ndarray:
    """|Pearson rho| between each layer's summary dim and a latent series.

    Layers whose recorded summary has zero variance yield NaN (undefined).
    """
    out = np.empty(trace.n_layers, dtype=np.float64)
    for layer in range(trace.n_layers):
        rho = pearson(trace.series(layer, dim=dim, batch=batch), lam_series)
        out[layer] = np.nan if rho is None else abs(rho)
    return out


def interpretability_matrix(traces: list, lam_list: list, dim: int = 0) -> np.ndarray:
    """Average per-layer |rho| across episodes (NaN-propagating)."""
    rows = [interpretability_corr(tr, lam, dim=dim) for tr, lam in zip(traces, lam_list)]
    return np.mean(np.stack(rows), axis=0)
