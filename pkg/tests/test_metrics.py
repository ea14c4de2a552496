import math

import numpy as np
import pytest

from setseq.autodiff import NumericError
from setseq.metrics import (auc_binary, auc_one_vs_rest, auc_pairwise_reference,
                            classification_eval, interpretability_corr, kl_metrics,
                            pearson, portfolio_stats, r2_and_corr, sharpe_ratio,
                            spearman, transition_auc_matrix)
from setseq.model import LayerTrace


class TestAuc:
    def test_perfect_ranking(self):
        assert auc_one_vs_rest(np.array([0.9, 0.1]), np.array([1, 0]), 1) == 1.0

    def test_all_ties(self):
        assert auc_binary(np.full(10, 0.5), np.arange(10) < 4) == 0.5

    def test_hand_pairwise(self):
        # positives: score 0.3; negatives: 0.5 and 0.1 -> one win, one loss
        auc = auc_one_vs_rest(np.array([0.3, 0.5, 0.1]), np.array([1, 0, 0]), 1)
        assert auc == 0.5

    def test_undefined_without_both_classes(self):
        assert auc_binary(np.array([0.1, 0.2]), np.array([True, True])) is None
        assert auc_binary(np.array([0.1, 0.2]), np.array([False, False])) is None

    def test_fast_equals_naive_with_ties(self, rng):
        for trial in range(1000):
            n = int(rng.integers(5, 40))
            scores = rng.integers(0, 6, n).astype(float)  # heavy ties
            positives = rng.random(n) < 0.4
            if positives.all() or not positives.any():
                continue
            fast = auc_binary(scores, positives)
            naive = auc_pairwise_reference(scores, positives)
            assert abs(fast - naive) < 1e-12

    def test_matches_expected_noise_injection(self, rng):
        # half-weighting ties equals the expectation of adding vanishing
        # noise to break them
        scores = np.array([0.5, 0.5, 0.5, 0.2])
        positives = np.array([True, False, True, False])
        base = auc_binary(scores, positives)
        sims = []
        for _ in range(4000):
            noisy = scores + rng.random(4) * 1e-9
            sims.append(auc_pairwise_reference(noisy, positives))
        assert abs(np.mean(sims) - base) < 0.02


class TestKl:
    def test_zero_on_equal(self, rng):
        p = rng.dirichlet(np.ones(3), size=50)
        kl_abs, kl_full = kl_metrics(p, p)
        assert kl_abs == 0.0 and kl_full == 0.0

    def test_hand_floored_value(self):
        p = np.array([[1.0, 0.0, 0.0]])
        q = np.array([[0.5, 0.5, 0.0]])
        kl_abs, kl_full = kl_metrics(p, q)
        assert abs(kl_full - math.log(2.0)) < 1e-12
        assert kl_abs == 0.0  # 0 * log(0/q) term

    def test_nonnegative_gibbs(self, rng):
        p = rng.dirichlet(np.ones(4), size=10_000)
        q = rng.dirichlet(np.ones(4), size=10_000)
        _, kl_full = kl_metrics(p, q)
        assert kl_full >= 0.0
        per_row = (p * np.log(p / np.maximum(q, 1e-12))).sum(axis=1)
        assert per_row.min() > -1e-12

    def test_class_permutation_invariance(self, rng):
        p = rng.dirichlet(np.ones(3), size=100)
        q = rng.dirichlet(np.ones(3), size=100)
        perm = np.array([2, 0, 1])
        _, a = kl_metrics(p, q)
        _, b = kl_metrics(p[:, perm], q[:, perm])
        assert abs(a - b) < 1e-12

    def test_nan_rejected(self):
        p = np.array([[0.5, 0.5, np.nan]])
        with pytest.raises(NumericError):
            kl_metrics(p, p)


class TestR2Corr:
    def test_perfect(self, rng):
        p = rng.random(20)
        r2, corr = r2_and_corr(p, p)
        assert abs(r2 - 1.0) < 1e-12 and abs(corr - 1.0) < 1e-12

    def test_constant_prediction_zero_r2(self, rng):
        p = rng.random(50)
        r2, corr = r2_and_corr(p, np.full(50, p.mean()))
        assert abs(r2) < 1e-9
        assert corr is None  # zero-variance prediction

    def test_hand_four_points(self):
        p = np.array([0.0, 1.0, 2.0, 3.0])
        q = np.array([0.5, 0.5, 2.5, 2.5])
        ss_res = ((p - q) ** 2).sum()
        ss_tot = ((p - p.mean()) ** 2).sum()
        r2, corr = r2_and_corr(p, q)
        assert abs(r2 - (1 - ss_res / ss_tot)) < 1e-12
        dp, dq = p - p.mean(), q - q.mean()
        assert abs(corr - (dp @ dq) / math.sqrt((dp @ dp) * (dq @ dq))) < 1e-12

    def test_r2_at_most_one(self, rng):
        for _ in range(200):
            p = rng.random(10)
            q = rng.random(10)
            r2, _ = r2_and_corr(p, q)
            assert r2 <= 1.0

    def test_zero_variance_truth(self):
        r2, corr = r2_and_corr(np.ones(5), np.arange(5.0))
        assert r2 is None and corr is None


class TestPortfolioStats:
    def test_constant_weights_vs_self_market(self, rng):
        n, t = 4, 60
        w = np.full((t, n), 0.25)
        y = rng.standard_normal((t, n)) * 0.01 + 0.0005
        r = (w * y).sum(axis=1)
        ev = portfolio_stats(w, y, market_returns=r)
        assert abs(ev.beta - 1.0) < 1e-9
        assert ev.daily_turnover == 0.0
        assert ev.short_fraction == 0.0

    def test_alternating_turnover(self):
        a = np.array([0.7, -0.3])
        b = np.array([0.2, 0.8])
        w = np.stack([a, b, a, b, a])
        y = np.zeros((5, 2)) + 0.01
        y[::2] += 0.005
        ev = portfolio_stats(w, y)
        assert abs(ev.daily_turnover - np.abs(a - b).sum()) < 1e-12

    def test_hand_three_day_ledger(self):
        w = np.array([[0.6, -0.4], [0.5, -0.5], [0.5, 0.5]])
        y = np.array([[0.01, -0.02], [0.00, 0.01], [0.02, 0.00]])
        r = (w * y).sum(axis=1)
        ev = portfolio_stats(w, y, trading_days=252)
        sr_daily = r.mean() / r.std()
        assert abs(ev.sharpe_annualized - sr_daily * math.sqrt(252)) < 1e-12
        turn = (np.abs(w[1] - w[0]).sum() + np.abs(w[2] - w[1]).sum()) / 2
        assert abs(ev.daily_turnover - turn) < 1e-12
        shorts = (0.4 + 0.5 + 0.0) / 3
        assert abs(ev.short_fraction - shorts) < 1e-12

    def test_scale_invariant_sharpe(self, rng):
        w = rng.standard_normal((40, 3))
        y = rng.standard_normal((40, 3)) * 0.01 + 0.001
        a = portfolio_stats(w, y).sharpe_annualized
        b = portfolio_stats(w, y * 7.0).sharpe_annualized
        assert abs(a - b) < 1e-9

    def test_zero_variance_raises(self):
        with pytest.raises(NumericError):
            sharpe_ratio(np.full(10, 0.5))

    def test_zero_market_variance_beta_none(self, rng):
        w = rng.standard_normal((10, 2))
        y = rng.standard_normal((10, 2)) * 0.01
        ev = portfolio_stats(w, y, market_returns=np.zeros(10))
        assert ev.beta is None


class TestInterpretability:
    def test_affine_transform_perfect(self, rng):
        lam = np.cumsum(rng.standard_normal(100))
        trace = LayerTrace(summaries=[(-(2.5 * lam) + 3.0).reshape(1, 100, 1),
                                      rng.standard_normal((1, 100, 1))])
        out = interpretability_corr(trace, lam)
        assert abs(out[0] - 1.0) < 1e-12
        assert out[1] < 1.0

    def test_independent_noise_low(self, rng):
        vals = []
        for _ in range(40):
            lam = np.cumsum(rng.standard_normal(100))
            trace = LayerTrace(summaries=[rng.standard_normal((1, 100, 2))])
            vals.append(interpretability_corr(trace, lam)[0])
        assert np.mean(vals) < 0.2

    def test_zero_variance_undefined(self):
        trace = LayerTrace(summaries=[np.zeros((1, 50, 2))])
        out = interpretability_corr(trace, np.arange(50.0))
        assert np.isnan(out[0])


class TestRankHelpers:
    def test_spearman_monotone(self, rng):
        x = rng.standard_normal(50)
        assert abs(spearman(x, np.exp(x)) - 1.0) < 1e-12
        assert abs(spearman(x, -np.exp(x)) + 1.0) < 1e-12

    def test_pearson_constant_none(self):
        assert pearson(np.ones(5), np.arange(5.0)) is None


class TestClassificationBundle:
    def test_avg_auc_min_count_rule(self, rng):
        n = 400
        labels = rng.integers(0, 3, n)
        from_states = np.zeros(n, dtype=int)
        pred = rng.dirichlet(np.ones(3), size=n)
        true = rng.dirichlet(np.ones(3), size=n)
        ev = classification_eval(true, pred, labels, from_states=from_states)
        assert ev.avg_auc is not None
        assert set(ev.transition_counts) == {(0, 0), (0, 1), (0, 2)}

    def test_transition_matrix_counts(self, rng):
        labels = np.array([0] * 12 + [1] * 3)
        from_states = np.zeros(15, dtype=int)
        pred = rng.dirichlet(np.ones(2), size=15)
        mat = transition_auc_matrix(from_states, labels, pred, min_count=10)
        assert mat[(0, 0)]["count"] == 12 and mat[(0, 0)]["auc"] is not None
        assert mat[(0, 1)]["count"] == 3 and mat[(0, 1)]["auc"] is None

    def test_group_std(self, rng):
        n = 600
        labels = rng.integers(0, 2, n)
        from_states = np.zeros(n, dtype=int)
        pred = rng.dirichlet(np.ones(2), size=n)
        groups = rng.integers(0, 5, n)
        mat = transition_auc_matrix(from_states, labels, pred, groups=groups)
        assert mat[(0, 1)]["std"] is not None and mat[(0, 1)]["std"] >= 0.0
