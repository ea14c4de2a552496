import numpy as np
import pytest

from setseq import kernels
from setseq.sim import (ABSORBING_STATE, DomainError, SimConfig, full_observation,
                        observation_from_ids, observe, permute_episode, simulate,
                        transition_matrix)


class TestTransitionMatrix:
    def test_zero_intensity_symmetry(self):
        m = transition_matrix(0, 0.0, 0.0)
        np.testing.assert_array_equal(m[0], [0.5, 0.5, 0.0])
        np.testing.assert_array_equal(m[1], [0.5, 0.5, 0.0])
        np.testing.assert_array_equal(m[2], [0.0, 0.0, 1.0])

    def test_hand_normalization_x0(self):
        # unnormalized first row (1, 1, 0.021), divided by its sum
        m = transition_matrix(0, 0.02, 0.001)
        expected = np.array([1.0, 1.0, 0.021]) / 2.021
        np.testing.assert_allclose(m[0], expected, rtol=0, atol=1e-15)

    def test_hand_normalization_x1(self):
        # hazard picks up the 1.1 factor and the diagonal the +1
        m = transition_matrix(1, 0.02, 0.001)
        h = (0.02 + 0.001) * 1.1
        expected = np.array([2.0, 1.0, h]) / (3.0 + h)
        np.testing.assert_allclose(m[0], expected, rtol=0, atol=1e-15)
        np.testing.assert_allclose(m[1], np.array([1.0, 2.0, h]) / (3.0 + h), atol=1e-15)

    def test_rows_stochastic(self, rng):
        for _ in range(50):
            m = transition_matrix(int(rng.integers(2)), float(rng.random()), float(rng.random()))
            np.testing.assert_allclose(m.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            transition_matrix(0, -0.1, 0.0)
        with pytest.raises(DomainError):
            transition_matrix(0, 0.1, -1e-9)
        with pytest.raises(DomainError):
            transition_matrix(2, 0.1, 0.0)


class TestSimConfig:
    def test_validation(self):
        with pytest.raises(DomainError):
            SimConfig(m_units=3)
        with pytest.raises(DomainError):
            SimConfig(t_periods=1)
        with pytest.raises(DomainError):
            SimConfig(beta=1.0)
        with pytest.raises(DomainError):
            SimConfig(denominator_mode="both")


class TestSimulate:
    def test_zero_hazard_never_defaults(self):
        ep = simulate(SimConfig(m_units=100, t_periods=50, alpha=0.0, mu=0.0, seed=1))
        assert not (ep.states == ABSORBING_STATE).any()

    def test_deterministic(self, small_config):
        a = simulate(small_config, episode=4)
        b = simulate(small_config, episode=4)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.lam, b.lam)
        assert np.array_equal(a.true_probs, b.true_probs)

    def test_distinct_episodes_differ(self, small_config):
        a = simulate(small_config, episode=0)
        b = simulate(small_config, episode=1)
        assert not np.array_equal(a.states, b.states)

    def test_row_stochastic(self, small_episodes):
        for ep in small_episodes:
            np.testing.assert_allclose(ep.true_probs.sum(axis=2), 1.0, rtol=0, atol=1e-12)

    def test_absorption(self, small_episodes):
        for ep in small_episodes:
            absorbed = ep.states == ABSORBING_STATE
            # once absorbed, absorbed at every later period
            assert np.array_equal(np.maximum.accumulate(absorbed, axis=1), absorbed)
            assert (ep.true_probs[absorbed] == np.array([0.0, 0.0, 1.0])).all()

    def test_intensity_recursion_exact(self, small_episodes, default_episode):
        for ep in list(small_episodes) + [default_episode]:
            cfg = ep.config
            expect = cfg.beta * ep.lam[:, :-1] + cfg.alpha * ep.frac_default[:, :-1]
            assert np.array_equal(ep.lam[:, 1:], expect)

    def test_feature_split(self, default_episode):
        x = default_episode.x
        assert (x == 0).sum() == (x == 1).sum() == len(x) // 2

    def test_intensity_and_fraction_ranges(self, small_episodes, default_episode):
        for ep in list(small_episodes) + [default_episode]:
            assert (ep.lam >= 0.0).all()
            assert (ep.frac_default >= 0.0).all() and (ep.frac_default <= 1.0).all()

    def test_default_rate_calibration(self):
        # defaults per unit-period at the stock parameters sit near 1%
        total_defaults, total_cells = 0, 0
        for i in range(50):
            ep = simulate(SimConfig(seed=11), episode=i)
            entered = (ep.states[:, :-1] != ABSORBING_STATE) & (ep.states[:, 1:] == ABSORBING_STATE)
            total_defaults += int(entered.sum())
            total_cells += ep.m_units * ep.t_periods
        rate = total_defaults / total_cells
        assert 0.005 <= rate <= 0.02

    def test_total_denominator_mode(self):
        ep = simulate(SimConfig(m_units=100, t_periods=30, denominator_mode="total", seed=2))
        entered = (ep.states[:, :-1] != ABSORBING_STATE) & (ep.states[:, 1:] == ABSORBING_STATE)
        is1 = ep.x == 1
        for g, mask in ((0, ~is1), (1, is1)):
            counts = entered[mask].sum(axis=0)
            np.testing.assert_array_equal(ep.frac_default[g, :-1], counts / 50.0)

    def test_backends_bit_identical(self, small_config):
        ep = simulate(small_config, episode=2)
        m, t_len = ep.m_units, ep.t_periods
        x = np.zeros(m, dtype=np.uint8)
        x[m // 2:] = 1
        from setseq.streams import substream
        init = (substream(small_config.seed, "init_states", 2).random(m) < 0.5).astype(np.uint8) + 1
        uni = np.empty((t_len - 1, m))
        for t in range(t_len - 1):
            uni[t] = substream(small_config.seed, "transitions", 2, t).random(m)
        states = np.empty((m, t_len), np.uint8)
        lam = np.empty((2, t_len))
        frac = np.empty((2, t_len))
        tp = np.empty((m, t_len, 3))
        kernels._np_sim_paths(x, init, uni, small_config.mu, small_config.alpha,
                              small_config.beta, small_config.lambda0, True,
                              states, lam, frac, tp)
        assert np.array_equal(states, ep.states)
        assert np.array_equal(lam, ep.lam)
        assert np.array_equal(frac, ep.frac_default)
        assert np.array_equal(tp, ep.true_probs)


class TestObserve:
    def test_full_observation_matches(self, default_episode):
        obs = full_observation(default_episode)
        assert np.array_equal(obs.frac_default_obs, default_episode.frac_default)

    def test_out_of_range(self, small_episodes):
        with pytest.raises(DomainError):
            observe(small_episodes[0], 0)
        with pytest.raises(DomainError):
            observe(small_episodes[0], small_episodes[0].m_units + 1)

    def test_single_unit(self, default_episode):
        obs = observe(default_episode, 1)
        g_seen = int(default_episode.x[obs.observed_ids[0]])
        g_other = 1 - g_seen
        vals = obs.frac_default_obs[g_seen][~obs.missing[g_seen]]
        assert set(np.unique(vals)).issubset({0.0, 1.0})
        # unobserved group reports 0 and is flagged missing everywhere
        assert obs.missing[g_other].all()
        assert (obs.frac_default_obs[g_other] == 0.0).all()

    def test_half_sample_unbiased(self, default_episode):
        ep = default_episode
        # pick a well-populated default period for group 0
        active = ep.group_active_counts()[0, : ep.t_periods - 1]
        frac = ep.frac_default[0, : ep.t_periods - 1]
        cand = np.where((frac > 0.0) & (active >= 100))[0]
        t_star = int(cand[np.argmax((frac * active)[cand])])
        truth = ep.frac_default[0, t_star]
        vals = []
        for d in range(400):
            obs = observe(ep, ep.m_units // 2, draw=d)
            if not obs.missing[0, t_star]:
                vals.append(obs.frac_default_obs[0, t_star])
        vals = np.array(vals)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - truth) < 3 * se + 1e-12

    def test_deterministic_draws(self, default_episode):
        a = observe(default_episode, 100, draw=5)
        b = observe(default_episode, 100, draw=5)
        assert np.array_equal(a.observed_ids, b.observed_ids)
        c = observe(default_episode, 100, draw=6)
        assert not np.array_equal(a.observed_ids, c.observed_ids)

    def test_distinct_ids(self, default_episode):
        obs = observe(default_episode, 250, draw=1)
        assert len(np.unique(obs.observed_ids)) == 250

    def test_observed_fraction_ranges(self, default_episode):
        obs = observe(default_episode, 77, draw=2)
        assert (obs.frac_default_obs >= 0.0).all()
        assert (obs.frac_default_obs <= 1.0).all()
        assert (obs.n_active_obs >= 0).all()

    def test_permutation_consistency(self, default_episode):
        # relabeling units then observing the relabeled subset reproduces
        # the original subset's series
        perm = np.random.default_rng(9).permutation(default_episode.m_units)
        permuted = permute_episode(default_episode, perm)
        ids = np.arange(0, default_episode.m_units, 7)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        obs_orig = observation_from_ids(default_episode, ids)
        obs_perm = observation_from_ids(permuted, np.sort(inv[ids]))
        assert np.array_equal(obs_orig.frac_default_obs, obs_perm.frac_default_obs)
        assert np.array_equal(obs_orig.n_active_obs, obs_perm.n_active_obs)
