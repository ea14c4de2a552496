"""Near-optimal latent-intensity filter for partially observed default fractions.

The defaulting fraction of a group of ``m`` active units is a scaled sum of
Bernoulli draws, so it is approximately normal around the rare-event
probability ``p_t`` with variance ``p_t (1 - p_t) / m``. Observing only ``n``
of the units adds sampling noise on top. A scalar Kalman filter on the group
intensity then weighs the model prediction against the observed fraction.

Three variants are exposed:

* ``unscaled``   - prediction ``beta * lam + p`` with process noise
  ``p(1-p)/m``; the innovation is ``nbar - p``.
* ``dynamics_consistent`` - prediction ``beta * lam + alpha * p`` with process
  noise ``alpha^2 p(1-p)/m`` and innovation gain applied to
  ``alpha * (nbar - p)``; with full observation this reproduces the true
  recursion exactly.
* ``fixed_gain``          - gain pinned to 1 with the dynamics-consistent
  scaling, i.e. ``lam <- beta * lam + alpha * nbar`` (trusts the noisy
  observation completely).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim import ABSORBING_STATE, DomainError, Episode, Observation, SimConfig

VARIANTS = ("unscaled", "dynamics_consistent", "fixed_gain")


@dataclass(frozen=True)
class KalmanState:
    lam_hat: float
    p_var: float
    gain: float
    group_size: int
    n_obs: int

    def __post_init__(self):
        if self.p_var < 0:
            raise DomainError("variance must be nonnegative")
        if not 0.0 <= self.gain <= 1.0:
            raise DomainError("gain must lie in [0, 1]")
        if self.lam_hat < 0:
            raise DomainError("intensity estimate must be nonnegative")


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise DomainError(f"variant must be one of {VARIANTS}, got {variant!r}")


def rare_prob(lam_hat: float, x: int, mu: float) -> float:
    """Probability of the absorbing transition for an active unit of type x.

    Equals the third entry of the active rows of the transition matrix.
    """
    if lam_hat < 0:
        raise DomainError("lam_hat must be nonnegative")
    h = (lam_hat + mu) * (1.0 + 0.1 * x)
    return h / (2.0 + x + h)


def kalman_step(state: KalmanState, nbar: float, variant: str,
                params: SimConfig, x: int = 0) -> KalmanState:
    """One predict/update cycle consuming the observed fraction ``nbar``."""
    _check_variant(variant)
    if not 0.0 <= nbar <= 1.0:
        raise DomainError(f"nbar must be in [0, 1], got {nbar}")
    m_g, n = state.group_size, state.n_obs
    if n > m_g:
        raise DomainError(f"observed count {n} exceeds group size {m_g}")
    alpha, beta, mu = params.alpha, params.beta, params.mu

    p_t = rare_prob(state.lam_hat, x, mu)
    if m_g == 0:
        # extinct group: the defaulting fraction is identically zero
        return KalmanState(max(beta * state.lam_hat, 0.0),
                           beta * beta * state.p_var, 0.0, m_g, n)

    pq = p_t * (1.0 - p_t)
    var_frac = pq / m_g
    var_eps = alpha * alpha * pq * (
        (m_g - n) / (m_g * m_g) + (m_g - n) ** 2 / (m_g * m_g * (n + 1.0))
    )

    if variant == "unscaled":
        lam_pred = beta * state.lam_hat + p_t
        p_pred = beta * beta * state.p_var + var_frac
        innovation = nbar - p_t
    else:
        lam_pred = beta * state.lam_hat + alpha * p_t
        p_pred = beta * beta * state.p_var + alpha * alpha * var_frac
        innovation = alpha * (nbar - p_t)

    if variant == "fixed_gain":
        gain = 1.0
    elif var_eps == 0.0:
        gain = 1.0
    else:
        gain = p_pred / (p_pred + var_eps)

    lam_new = max(lam_pred + gain * innovation, 0.0)
    p_new = (1.0 - gain) * p_pred
    return KalmanState(lam_new, p_new, gain, m_g, n)


def estimate_path(nbar_series: np.ndarray, n_obs: np.ndarray, m_active: np.ndarray,
                  missing: np.ndarray, variant: str, params: SimConfig,
                  x: int = 0, lam0: float | None = None):
    """Fold the filter over a fraction series for one group.

    ``nbar_series`` has length T; entry t describes the transition t -> t+1,
    so only the first T-1 entries are consumed. Returns
    (lam_hat (T,), gain (T-1,), p_var (T,)). Missing observations trigger a
    pure prediction step (gain recorded as 0).
    """
    _check_variant(variant)
    t_len = len(nbar_series)
    lam_hat = np.empty(t_len, dtype=np.float64)
    gains = np.zeros(max(t_len - 1, 0), dtype=np.float64)
    p_var = np.zeros(t_len, dtype=np.float64)
    state = KalmanState(
        params.lambda0 if lam0 is None else lam0, 0.0, 0.0,
        int(m_active[0]), int(n_obs[0]),
    )
    lam_hat[0] = state.lam_hat
    for t in range(t_len - 1):
        m_t, n_t = int(m_active[t]), int(n_obs[t])
        state = KalmanState(state.lam_hat, state.p_var, state.gain, m_t, n_t)
        if m_t == 0:
            # extinct group: fraction is identically zero, pure decay
            state = KalmanState(max(params.beta * state.lam_hat, 0.0),
                                params.beta ** 2 * state.p_var, 0.0, m_t, n_t)
        elif missing[t]:
            # alive but unobserved group-period: predict without an update
            p_t = rare_prob(state.lam_hat, x, params.mu)
            if variant == "unscaled":
                lam_pred = params.beta * state.lam_hat + p_t
                q = p_t * (1.0 - p_t) / m_t
            else:
                lam_pred = params.beta * state.lam_hat + params.alpha * p_t
                q = params.alpha ** 2 * p_t * (1.0 - p_t) / m_t
            state = KalmanState(max(lam_pred, 0.0),
                                params.beta ** 2 * state.p_var + q,
                                0.0, m_t, n_t)
        else:
            state = kalman_step(state, float(nbar_series[t]), variant, params, x=x)
        lam_hat[t + 1] = state.lam_hat
        gains[t] = state.gain
        p_var[t + 1] = state.p_var
    return lam_hat, gains, p_var


def estimate_episode(obs: Observation, params: SimConfig, variant: str,
                     lam0: float | None = None):
    """Run the filter for both groups of an observed episode.

    Returns (lam_hat (2, T), gains (2, T-1), p_var (2, T)).
    """
    t_len = obs.frac_default_obs.shape[1]
    lam_hat = np.empty((2, t_len))
    gains = np.empty((2, t_len - 1))
    p_var = np.empty((2, t_len))
    for g in (0, 1):
        lam_hat[g], gains[g], p_var[g] = estimate_path(
            obs.frac_default_obs[g], obs.n_active_obs[g], obs.m_active[g],
            obs.missing[g], variant, params, x=g, lam0=lam0,
        )
    return lam_hat, gains, p_var


def oracle_predict(lam_hat: np.ndarray, episode: Episode) -> np.ndarray:
    """Per-unit next-state probability tensor implied by intensity estimates.

    ``lam_hat`` is (2, T); absorbed units get the row [0, 0, 1].
    """
    m, t_len = episode.m_units, episode.t_periods
    if lam_hat.shape != (2, t_len):
        raise DomainError(f"lam_hat must have shape (2, {t_len}), got {lam_hat.shape}")
    x = episode.x.astype(np.float64)[:, None]
    lam_u = np.where(episode.x[:, None] == 1, lam_hat[1][None, :], lam_hat[0][None, :])
    h = (lam_u + episode.config.mu) * (1.0 + 0.1 * x)
    z = 2.0 + x + h
    probs = np.empty((m, t_len, 3), dtype=np.float64)
    diag = (1.0 + x) / z
    off = 1.0 / z
    in1 = episode.states == 1
    in2 = episode.states == 2
    probs[:, :, 0] = np.where(in1, diag, off)
    probs[:, :, 1] = np.where(in2, diag, off)
    probs[:, :, 2] = h / z
    absorbed = episode.states == ABSORBING_STATE
    probs[absorbed] = (0.0, 0.0, 1.0)
    return probs
