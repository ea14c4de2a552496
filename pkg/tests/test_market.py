import numpy as np
import pytest

from setseq.market import (Market, MarketConfig, backtest, buy_and_hold_source,
                           equal_weight_source, generate_market, l1_normalized,
                           model_weight_source)
from setseq.sim import DomainError
from setseq.training import CostConfig


@pytest.fixture(scope="module")
def market():
    return generate_market(MarketConfig(n_assets=80, t_train=120, t_test=60, seed=2))


class TestGenerate:
    def test_deterministic(self):
        cfg = MarketConfig(n_assets=20, t_train=30, t_test=20, seed=4)
        a, b = generate_market(cfg), generate_market(cfg)
        assert np.array_equal(a.returns, b.returns)
        assert np.array_equal(a.features, b.features)

    def test_shapes_and_ranks(self, market):
        n, t = 80, 180
        assert market.features.shape == (n, t, 5)
        assert market.returns.shape == (n, t)
        # rank-normalized features live in (-1, 1) with zero cross-sectional mean
        ranks = market.features[:, :, 0]
        assert ranks.min() > -1 and ranks.max() < 1
        np.testing.assert_allclose(ranks.mean(axis=0), 0.0, atol=1e-6)

    def test_oracle_weights_unit_leverage(self, market):
        np.testing.assert_allclose(np.abs(market.oracle_weights).sum(axis=0), 1.0,
                                   atol=1e-9)

    def test_signal_strength_fraction(self):
        cfg = MarketConfig(n_assets=400, t_train=500, t_test=100, seed=8,
                           signal_strength=0.1)
        mkt = generate_market(cfg)
        # regression R^2 of next-day returns on the exact signal level
        y = mkt.returns[:, 1:].ravel()
        x = mkt.signal[:, :-1].ravel()
        beta = np.cov(x, y)[0, 1] / x.var()
        explained = (beta * x).var() / y.var()
        assert 0.05 < explained < 0.15

    def test_null_market_oracle_sharpe(self):
        srs = []
        for seed in range(10):
            mkt = generate_market(MarketConfig(signal_strength=0.0, n_assets=300,
                                               t_train=400, t_test=200, seed=seed))
            _, stats = backtest(mkt.oracle_weights, mkt,
                                span=slice(0, mkt.t_total - 1), costs=None)
            srs.append(stats.sharpe_annualized)
        assert abs(np.mean(srs)) < 0.5

    def test_oracle_sharpe_band(self):
        # frozen Monte-Carlo band for the stock desk configuration
        srs = []
        for seed in range(3):
            mkt = generate_market(MarketConfig(n_assets=300, t_train=400, t_test=200,
                                               signal_strength=0.1, seed=seed))
            _, stats = backtest(mkt.oracle_weights, mkt, costs=None)
            srs.append(stats.sharpe_annualized)
        assert 40.0 < np.mean(srs) < 160.0

    def test_validation(self):
        with pytest.raises(DomainError):
            MarketConfig(signal_strength=1.0)
        with pytest.raises(DomainError):
            MarketConfig(n_assets=1)


class TestBacktest:
    def test_ledger_identity(self, market):
        ledger, _ = backtest(market.oracle_weights, market, costs=CostConfig())
        assert np.array_equal(ledger.net, ledger.gross - ledger.cost)
        assert (ledger.cost >= 0.0).all()

    def test_cost_only_hurts(self, market):
        _, gross_stats = backtest(market.oracle_weights, market, costs=None)
        _, net_stats = backtest(market.oracle_weights, market, costs=CostConfig())
        assert net_stats.sharpe_annualized <= gross_stats.sharpe_annualized

    def test_equal_weight_beta_one(self, market):
        _, stats = backtest(equal_weight_source(market), market, costs=None)
        assert abs(stats.beta - 1.0) < 1e-9
        assert stats.daily_turnover < 1e-12

    def test_buy_and_hold_turnover_from_drift(self, market):
        w = buy_and_hold_source(market)
        ledger, stats = backtest(w, market, costs=None)
        span = market.test_slice()
        drift = np.abs(np.diff(w[:, span.start: span.stop - 1].T, axis=0)).sum(axis=1)
        assert abs(stats.daily_turnover - drift.mean()) < 1e-12
        assert stats.daily_turnover > 0.0
        assert abs(stats.beta - 1.0) < 0.2

    def test_weights_shape_checked(self, market):
        with pytest.raises(DomainError):
            backtest(market.oracle_weights[:, :10], market)

    def test_causal_shift(self, market):
        # bumping the returns on day t+1 cannot change the weights held then,
        # and earlier ledger rows are untouched
        w = market.oracle_weights
        span = market.test_slice()
        bump_day = span.start + 30
        bumped = Market(
            features=market.features,
            returns=market.returns.copy(),
            market_returns=market.market_returns,
            oracle_weights=market.oracle_weights,
            signal=market.signal,
            config=market.config,
        )
        bumped.returns[:, bump_day + 1] += 0.05
        a, _ = backtest(w, market, costs=None)
        b, _ = backtest(w, bumped, costs=None)
        i = np.where(a.days == bump_day + 1)[0][0]
        assert np.array_equal(a.gross[:i], b.gross[:i])
        assert not np.isclose(a.gross[i], b.gross[i])
        assert np.array_equal(a.weights[i], b.weights[i])

    def test_model_source_is_causal(self):
        # perturbing features after day t leaves model weights at <= t intact
        from setseq.model import SetSeqConfig, init_params

        cfg = MarketConfig(n_assets=12, t_train=40, t_test=20, seed=6)
        mkt = generate_market(cfg)
        model_cfg = SetSeqConfig(n_setseq_layers=1, n_plain_seq_layers=0, d_in=5,
                                 d_model=6, chunk_len=2, summary_dim=2, phi_out_dim=4,
                                 kernel_len=5, output_dim=1, dtype="float64")
        params = init_params(model_cfg, seed=0)
        w1 = model_weight_source(params, model_cfg, mkt)
        feats = mkt.features.copy()
        feats[:, 45:, :] += 1.5
        bumped = Market(features=feats, returns=mkt.returns,
                        market_returns=mkt.market_returns,
                        oracle_weights=mkt.oracle_weights, signal=mkt.signal,
                        config=mkt.config)
        w2 = model_weight_source(params, model_cfg, bumped)
        np.testing.assert_allclose(w1[:, :45], w2[:, :45], atol=1e-12)
        assert not np.allclose(w1[:, 45:], w2[:, 45:])


class TestNormalize:
    def test_l1_normalized(self, rng):
        w = l1_normalized(rng.standard_normal((30, 10)), axis=0)
        np.testing.assert_allclose(np.abs(w).sum(axis=0), 1.0, atol=1e-9)
