"""Synthetic default-contagion panel simulator.

M exchangeable units with a binary type feature move between three states;
state 3 (default) is absorbing. The per-group hazard feeds back on realized
group default fractions, so defaults cluster in time. Each episode records
the exact next-state probability rows used to sample, which downstream
modules treat as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .streams import substream

ABSORBING_STATE = 3
N_STATES = 3


class DomainError(ValueError):
    """Raised when an operation is called outside its domain."""


@dataclass(frozen=True)
class SimConfig:
    m_units: int = 1000
    t_periods: int = 100
    mu: float = 0.001
    alpha: float = 4.0
    beta: float = 0.5
    lambda0: float = 0.0
    denominator_mode: str = "active"  # "active" or "total"
    seed: int = 0

    def __post_init__(self):
        if self.m_units < 2 or self.m_units % 2 != 0:
            raise DomainError(f"m_units must be even and >= 2, got {self.m_units}")
        if self.t_periods < 2:
            raise DomainError(f"t_periods must be >= 2, got {self.t_periods}")
        if self.mu < 0 or self.alpha < 0:
            raise DomainError("mu and alpha must be nonnegative")
        if not 0.0 <= self.beta < 1.0:
            raise DomainError(f"beta must be in [0, 1), got {self.beta}")
        if self.lambda0 < 0:
            raise DomainError("lambda0 must be nonnegative")
        if self.denominator_mode not in ("active", "total"):
            raise DomainError(
                f"denominator_mode must be 'active' or 'total', got {self.denominator_mode!r}"
            )


@dataclass(frozen=True)
class Episode:
    """One simulated panel.

    states[i, t] is the state of unit i at period t. frac_default[g, t] is
    the realized defaulting fraction of group g over the transition t -> t+1
    (the final column has no transition and is zero). true_probs[i, t] is the
    exact probability row for unit i's transition out of period t.
    """

    x: np.ndarray            # (M,) uint8, exactly M/2 of each value
    states: np.ndarray       # (M, T) uint8 in {1, 2, 3}
    lam: np.ndarray          # (2, T) float64 group intensities
    frac_default: np.ndarray  # (2, T) float64
    true_probs: np.ndarray   # (M, T, 3) float64
    config: SimConfig
    index: int = 0

    @property
    def m_units(self) -> int:
        return self.states.shape[0]

    @property
    def t_periods(self) -> int:
        return self.states.shape[1]

    def active_mask(self) -> np.ndarray:
        """(M, T) bool: unit not yet absorbed at period t."""
        return self.states != ABSORBING_STATE

    def group_active_counts(self) -> np.ndarray:
        """(2, T) int64: active units per group and period."""
        act = self.active_mask()
        is1 = self.x == 1
        return np.stack([
            act[~is1].sum(axis=0),
            act[is1].sum(axis=0),
        ]).astype(np.int64)


@dataclass(frozen=True)
class Observation:
    """Partial view of an episode through a sampled unit subset."""

    n: int
    observed_ids: np.ndarray       # (n,) int64, distinct
    frac_default_obs: np.ndarray   # (2, T) float64
    missing: np.ndarray            # (2, T) bool, True when a group-period had no usable denominator
    n_active_obs: np.ndarray       # (2, T) int64 observed active units per group
    m_active: np.ndarray           # (2, T) int64 true active units per group (oracle side info)


def transition_matrix(x: int, lam_x: float, mu: float) -> np.ndarray:
    """Row-stochastic 3x3 next-state matrix for a unit of type ``x``.

    Unnormalized weights: [[1+x, 1, h], [1, 1+x, h], [0, 0, 1]] with
    h = (lam_x + mu) * (1 + 0.1 x); each row is divided by its sum.
    """
    if lam_x < 0 or mu < 0:
        raise DomainError("lam_x and mu must be nonnegative")
    if x not in (0, 1):
        raise DomainError(f"x must be 0 or 1, got {x}")
    h = (lam_x + mu) * (1.0 + 0.1 * x)
    raw = np.array([
        [1.0 + x, 1.0, h],
        [1.0, 1.0 + x, h],
        [0.0, 0.0, 1.0],
    ])
    return raw / raw.sum(axis=1, keepdims=True)


def simulate(config: SimConfig, episode: int = 0) -> Episode:
    """Draw one episode under ``config`` using its named seed streams."""
    m, t_len = config.m_units, config.t_periods
    x = np.zeros(m, dtype=np.uint8)
    x[m // 2:] = 1
    init_rng = substream(config.seed, "init_states", episode)
    init_states = (init_rng.random(m) < 0.5).astype(np.uint8) + 1
    uniforms = np.empty((t_len - 1, m), dtype=np.float64)
    for t in range(t_len - 1):
        uniforms[t] = substream(config.seed, "transitions", episode, t).random(m)
    states, lam, frac, true_probs = kernels.simulate_paths(
        x, init_states, uniforms, config.mu, config.alpha, config.beta,
        config.lambda0, config.denominator_mode == "active",
    )
    return Episode(x=x, states=states, lam=lam, frac_default=frac,
                   true_probs=true_probs, config=config, index=episode)


def simulate_many(config: SimConfig, n_episodes: int, start: int = 0) -> list[Episode]:
    return [simulate(config, episode=i) for i in range(start, start + n_episodes)]


def observation_from_ids(episode: Episode, ids: np.ndarray) -> Observation:
    """Build the partial view seen through a fixed unit subset.

    Group-periods with a zero denominator report a fraction of 0 and are
    flagged in ``missing`` so downstream filters receive finite inputs.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise DomainError("observed ids must be distinct")
    t_len = episode.t_periods
    x_obs = episode.x[ids]
    states_obs = episode.states[ids]
    act = states_obs != ABSORBING_STATE
    entered = act[:, :-1] & (states_obs[:, 1:] == ABSORBING_STATE)
    total_mode = episode.config.denominator_mode == "total"
    is1 = x_obs == 1

    frac_obs = np.zeros((2, t_len), dtype=np.float64)
    missing = np.zeros((2, t_len), dtype=bool)
    n_active_obs = np.zeros((2, t_len), dtype=np.int64)
    for g, mask in ((0, ~is1), (1, is1)):
        n_active_obs[g] = act[mask].sum(axis=0)
        numer = entered[mask].sum(axis=0)
        if total_mode:
            denom = np.full(t_len - 1, int(mask.sum()), dtype=np.int64)
        else:
            denom = n_active_obs[g, :-1]
        ok = denom > 0
        frac_obs[g, :-1][ok] = numer[ok] / denom[ok]
        missing[g, :-1][~ok] = True
    missing[:, -1] = True  # no transition out of the final period

    return Observation(
        n=len(ids),
        observed_ids=ids,
        frac_default_obs=frac_obs,
        missing=missing,
        n_active_obs=n_active_obs,
        m_active=episode.group_active_counts(),
    )


def observe(episode: Episode, n: int, draw: int = 0, seed: int | None = None) -> Observation:
    """Sample ``n`` units uniformly without replacement and rebuild the
    default-fraction series from that subset only."""
    m = episode.m_units
    if not 1 <= n <= m:
        raise DomainError(f"n must be in [1, {m}], got {n}")
    rng = substream(seed if seed is not None else episode.config.seed,
                    "observe", episode.index, draw)
    ids = np.sort(rng.choice(m, size=n, replace=False)).astype(np.int64)
    return observation_from_ids(episode, ids)


def full_observation(episode: Episode) -> Observation:
    """Observation covering every unit (frac series equals the episode's)."""
    return observe(episode, episode.m_units)


def permute_episode(episode: Episode, perm: np.ndarray) -> Episode:
    """Relabel units of a stored episode; group series are label-free."""
    return replace(
        episode,
        x=episode.x[perm],
        states=episode.states[perm],
        true_probs=episode.true_probs[perm],
    )
