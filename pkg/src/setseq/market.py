"""Synthetic factor market with a known learnable signal, plus the backtest.

Returns decompose into an observable autoregressive alpha signal, common
factor moves (the first factor carries a positive drift and near-uniform
loadings, so the equal-weight market earns a mildly positive Sharpe), and
idiosyncratic noise. ``signal_strength`` sets the average fraction of
next-day return variance the signal explains. Features expose the signal
only through cross-sectional rank normalization, so a weight rule built
from exact signal levels (the oracle) stays ahead of anything trained on
the features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import PortfolioEval, portfolio_stats
from .sim import DomainError
from .streams import substream
from .training import CostConfig


@dataclass(frozen=True)
class MarketConfig:
    n_assets: int = 500
    t_train: int = 504
    t_test: int = 252
    signal_strength: float = 0.1
    n_factors: int = 3
    idio_vol: float = 0.01
    signal_persistence: float = 0.9
    market_factor_vol: float = 0.008
    other_factor_vol: float = 0.004
    market_drift: float = 0.0004
    seed: int = 0

    def __post_init__(self):
        if self.n_assets < 2:
            raise DomainError("n_assets must be >= 2")
        if not 0.0 <= self.signal_strength < 1.0:
            raise DomainError("signal_strength must be in [0, 1)")
        if self.t_train < 3 or self.t_test < 3:
            raise DomainError("t_train and t_test must be >= 3")
        if not 0.0 <= self.signal_persistence < 1.0:
            raise DomainError("signal_persistence must be in [0, 1)")


FEATURE_NAMES = ("signal_rank", "return_rank", "vol_rank", "noise_rank", "intercept")


@dataclass(frozen=True)
class Market:
    features: np.ndarray        # (N, T, d) float32, rank-normalized
    returns: np.ndarray         # (N, T) float64, return realized on day t
    market_returns: np.ndarray  # (T,) equal-weight average return
    oracle_weights: np.ndarray  # (N, T) weights formed at t for day t+1
    signal: np.ndarray          # (N, T) latent alpha level (diagnostics)
    config: MarketConfig

    @property
    def t_total(self) -> int:
        return self.returns.shape[1]

    def train_slice(self) -> slice:
        return slice(0, self.config.t_train)

    def test_slice(self) -> slice:
        return slice(self.config.t_train, self.config.t_train + self.config.t_test)


def _rank_normalize(values: np.ndarray) -> np.ndarray:
    """Map each day's cross-section to (-1, 1) by rank."""
    n, t_len = values.shape
    out = np.empty_like(values, dtype=np.float64)
    for t in range(t_len):
        order = np.argsort(values[:, t], kind="mergesort")
        ranks = np.empty(n)
        ranks[order] = np.arange(1, n + 1)
        out[:, t] = 2.0 * (ranks / (n + 1.0) - 0.5)
    return out


def l1_normalized(raw: np.ndarray, axis: int = 0) -> np.ndarray:
    return raw / (np.abs(raw).sum(axis=axis, keepdims=True) + 1e-12)


def generate_market(cfg: MarketConfig):
    """Build one market draw; returns a :class:`Market`."""
    n, t_len = cfg.n_assets, cfg.t_train + cfg.t_test
    rng = substream(cfg.seed, "market", 0)

    phi = cfg.signal_persistence
    sig = np.empty((n, t_len))
    sig[:, 0] = rng.standard_normal(n)
    innov = rng.standard_normal((n, t_len - 1)) * np.sqrt(1.0 - phi * phi)
    for t in range(1, t_len):
        sig[:, t] = phi * sig[:, t - 1] + innov[:, t - 1]

    loadings = np.empty((n, cfg.n_factors))
    loadings[:, 0] = 1.0 + 0.2 * rng.standard_normal(n)
    if cfg.n_factors > 1:
        loadings[:, 1:] = 0.5 * rng.standard_normal((n, cfg.n_factors - 1))
    fac_vol = np.full(cfg.n_factors, cfg.other_factor_vol)
    fac_vol[0] = cfg.market_factor_vol
    fac_drift = np.zeros(cfg.n_factors)
    fac_drift[0] = cfg.market_drift
    factors = fac_drift + fac_vol * rng.standard_normal((t_len, cfg.n_factors))

    non_signal_var = float(((loadings ** 2) * (fac_vol ** 2)).sum(axis=1).mean()
                           + cfg.idio_vol ** 2)
    delta = cfg.signal_strength
    c = np.sqrt(delta / (1.0 - delta) * non_signal_var) if delta > 0 else 0.0
    alpha = c * sig

    idio = cfg.idio_vol * rng.standard_normal((n, t_len))
    returns = np.empty((n, t_len))
    returns[:, 0] = loadings @ factors[0] + idio[:, 0]
    # the return realized on day t responds to the signal observed at t-1
    returns[:, 1:] = alpha[:, :-1] + (loadings @ factors[1:].T) + idio[:, 1:]

    trailing_ret = np.zeros((n, t_len))
    trailing_ret[:, 1:] = returns[:, :-1]
    vol_proxy = np.zeros((n, t_len))
    for t in range(1, t_len):
        lo = max(0, t - 10)
        vol_proxy[:, t] = returns[:, lo:t].std(axis=1) if t - lo > 1 else np.abs(returns[:, t - 1])
    noise = rng.standard_normal((n, t_len))

    features = np.stack([
        _rank_normalize(sig),
        _rank_normalize(trailing_ret),
        _rank_normalize(vol_proxy),
        _rank_normalize(noise),
        np.ones((n, t_len)),
    ], axis=-1).astype(np.float32)

    oracle_weights = l1_normalized(sig, axis=0)
    return Market(
        features=features,
        returns=returns,
        market_returns=returns.mean(axis=0),
        oracle_weights=oracle_weights,
        signal=sig,
        config=cfg,
    )


# -- weight sources ------------------------------------------------------------


def equal_weight_source(market: Market) -> np.ndarray:
    n, t_len = market.returns.shape
    return np.full((n, t_len), 1.0 / n)


def buy_and_hold_source(market: Market) -> np.ndarray:
    """Equal start, then holdings drift with realized returns (long-only)."""
    n, t_len = market.returns.shape
    w = np.empty((n, t_len))
    w[:, 0] = 1.0 / n
    for t in range(1, t_len):
        grown = w[:, t - 1] * (1.0 + market.returns[:, t])
        w[:, t] = grown / np.abs(grown).sum()
    return w


def model_weight_source(params, config, market: Market) -> np.ndarray:
    """Raw model outputs at each position, L1-normalized per day."""
    from . import autodiff as ad
    from .model import forward

    with ad.no_grad(), ad.arena():
        out, _ = forward(params, config, market.features)
        raw = out.data[:, :, 0].astype(np.float64)
    return l1_normalized(raw, axis=0)


# -- backtest -------------------------------------------------------------------


@dataclass
class BacktestLedger:
    days: np.ndarray            # day indices where returns were realized
    weights: np.ndarray         # (T, N) weights held on each realized day
    gross: np.ndarray           # (T,)
    cost: np.ndarray            # (T,)
    net: np.ndarray             # (T,)
    cumulative: np.ndarray = field(repr=False)

    def rows(self):
        for i, d in enumerate(self.days):
            yield (int(d), float(self.gross[i]), float(self.net[i]),
                   float(self.cost[i]),
                   float(np.abs(self.weights[i] - self.weights[i - 1]).sum()) if i else 0.0)


def backtest(weights_at: np.ndarray, market: Market, span: slice | None = None,
             costs: CostConfig | None = None):
    """Run the one-step-ahead ledger.

    ``weights_at[:, t]`` must be formed from information up to day t; it is
    applied to the returns realized on day t+1. ``span`` selects the
    formation days (default: the market's test window shifted to predict
    within itself). Returns (BacktestLedger, PortfolioEval).
    """
    n, t_len = market.returns.shape
    if weights_at.shape != (n, t_len):
        raise DomainError(f"weights_at must be (N, T) = {(n, t_len)}, got {weights_at.shape}")
    span = market.test_slice() if span is None else span
    t0, t1 = span.start, min(span.stop, t_len - 1)
    form_days = np.arange(t0, t1)
    held = weights_at[:, form_days].T                         # (T, N) held on day t+1
    realized_days = form_days + 1
    y = market.returns[:, realized_days].T                    # (T, N)
    gross = (held * y).sum(axis=1)
    cost = np.zeros_like(gross)
    if costs is not None:
        short = np.maximum(-held, 0.0).sum(axis=1) * costs.short_rate
        turn = np.zeros_like(gross)
        turn[1:] = np.abs(np.diff(held, axis=0)).sum(axis=1) * costs.turnover_rate
        cost = short + turn
    net = gross - cost
    ledger = BacktestLedger(
        days=realized_days,
        weights=held,
        gross=gross,
        cost=cost,
        net=net,
        cumulative=np.cumprod(1.0 + net) - 1.0,
    )
    stats = portfolio_stats(held, y, market_returns=market.market_returns[realized_days],
                            realized=net)
    return ledger, stats
