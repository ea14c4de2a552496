"""Losses, optimizer, unit-count sampling, and the training loops.

Training draws per-step unit pools from a mixture that mostly uses the full
cross-section but occasionally exposes much smaller pools (log-uniform in
size), which is what lets a single model run inference on any number of
units. Portfolio training maximizes a (net-of-cost) Sharpe ratio directly;
classification uses masked cross-entropy over active unit-periods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .model import SetSeqConfig, conv_kernel_names, forward, init_params
from .sim import ABSORBING_STATE, DomainError, Episode
from .streams import substream


@dataclass(frozen=True)
class SamplerConfig:
    gamma: float = 0.08
    m_units: int = 1000
    mode: str = "mixture"   # "mixture" or "fixed"
    fixed_k: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError("gamma must be in [0, 1]")
        if self.mode not in ("mixture", "fixed"):
            raise DomainError(f"mode must be 'mixture' or 'fixed', got {self.mode!r}")
        if self.mode == "fixed":
            if self.fixed_k is None or not 1 <= self.fixed_k <= self.m_units:
                raise DomainError("fixed mode needs 1 <= fixed_k <= m_units")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 0.003
    batch_episodes: int = 1
    loss: str = "cross_entropy"  # cross_entropy | sharpe | net_sharpe
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if self.loss not in ("cross_entropy", "sharpe", "net_sharpe"):
            raise DomainError(f"unknown loss {self.loss!r}")


@dataclass(frozen=True)
class RecencyConfig:
    half_life: float
    t_max: float

    def __post_init__(self):
        if self.half_life <= 0:
            raise DomainError("half_life must be positive")

    @property
    def decay_rate(self) -> float:
        return math.log(2.0) / self.half_life


@dataclass(frozen=True)
class CostConfig:
    turnover_rate: float = 0.0005
    short_rate: float = 0.0001


def sample_unit_count(cfg: SamplerConfig, rng: np.random.Generator) -> int:
    """Draw the number of units for one step.

    Mixture mode returns M with probability 1 - gamma, otherwise a rounded
    log-uniform draw from [1, M]. Fixed mode always returns fixed_k.
    """
    if cfg.mode == "fixed":
        return int(cfg.fixed_k)
    if rng.random() >= cfg.gamma:
        return cfg.m_units
    d = int(round(math.exp(rng.uniform(0.0, math.log(cfg.m_units)))))
    return min(max(d, 1), cfg.m_units)


def recency_weights(times: np.ndarray, cfg: RecencyConfig) -> np.ndarray:
    """exp(decay * (t - t_max)): weight 1 at t_max, 0.5 one half-life earlier."""
    times = np.asarray(times, dtype=np.float64)
    return np.exp(cfg.decay_rate * (times - cfg.t_max))


# -- losses -------------------------------------------------------------------


def loss_cross_entropy(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean NLL over unmasked (unit, period) cells; logits (..., C)."""
    return ad.nll_masked(ad.log_softmax(logits, axis=-1), labels, mask)


def normalize_weights(raw: Tensor) -> Tensor:
    """Scale each period's weight vector to unit L1 norm; raw is (M, T)."""
    norm = ad.sum_(ad.abs_(raw), axis=0, keepdims=True) + 1e-12
    return ad.div(raw, norm)


def transaction_cost_series(w: Tensor, costs: CostConfig) -> Tensor:
    """Per-period cost of holding w (M, T): turnover charge from the second
    period on plus a daily short-position charge."""
    t_len = w.data.shape[1]
    shorts = ad.mul(ad.sum_(ad.relu(ad.neg(w)), axis=0), costs.short_rate)
    if t_len < 2:
        return shorts
    dw = ad.sub(ad.narrow(w, 1, 1, t_len), ad.narrow(w, 1, 0, t_len - 1))
    turn = ad.mul(ad.sum_(ad.abs_(dw), axis=0), costs.turnover_rate)
    zero = ad.tensor(np.zeros(1, dtype=w.data.dtype))
    return ad.add(shorts, ad.concat([zero, turn], axis=0))


def loss_sharpe(raw_weights: Tensor, returns: np.ndarray,
                costs: CostConfig | None = None) -> Tensor:
    """Negative daily Sharpe ratio of the L1-normalized portfolio.

    raw_weights (M, T) are unnormalized scores; returns (M, T) holds the
    realized next-period return matched to each weight column. The standard
    deviation uses the population convention (divide by T). Costs, when
    given, are subtracted from the per-period returns before the ratio.
    """
    if raw_weights.data.shape != returns.shape:
        raise ad.ShapeError(
            f"loss_sharpe: weights {raw_weights.data.shape} vs returns {returns.shape}")
    if returns.shape[1] < 2:
        raise DomainError("need at least 2 periods for a Sharpe ratio")
    w = normalize_weights(raw_weights)
    r = ad.sum_(ad.mul(w, ad.tensor(returns.astype(w.data.dtype))), axis=0)
    if costs is not None:
        r = ad.sub(r, transaction_cost_series(w, costs))
    mu = ad.mean(r)
    dev = ad.sub(r, mu)
    var = ad.mean(ad.mul(dev, dev))
    if float(var.data) == 0.0:
        raise NumericError("loss_sharpe: zero return variance (constant returns)")
    return ad.neg(ad.div(mu, ad.sqrt(var)))


# -- optimizer ----------------------------------------------------------------


class Adam:
    """Adam with optional decoupled weight decay on selected parameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.003,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: dict[str, float] | None = None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay or {}
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float((p.grad.astype(np.float64) ** 2).sum())
        return math.sqrt(total)

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            decay = self.weight_decay.get(name, 0.0)
            if decay:
                update = update + decay * p.data
            p.data -= (p.data.dtype.type(self.lr) * update).astype(p.data.dtype, copy=False)


# -- synthetic-task training ---------------------------------------------------


def episode_features(episode: Episode) -> np.ndarray:
    """(M, T, 4) float32: one-hot state plus the binary type feature."""
    m, t_len = episode.states.shape
    feats = np.zeros((m, t_len, 4), dtype=np.float32)
    for s in (1, 2, 3):
        feats[:, :, s - 1] = episode.states == s
    feats[:, :, 3] = episode.x[:, None]
    return feats


def episode_labels(episode: Episode):
    """Labels are next-period states (0-based); mask keeps active, labeled cells."""
    m, t_len = episode.states.shape
    labels = np.zeros((m, t_len), dtype=np.int64)
    labels[:, :-1] = episode.states[:, 1:].astype(np.int64) - 1
    mask = np.zeros((m, t_len), dtype=bool)
    mask[:, :-1] = episode.states[:, :-1] != ABSORBING_STATE
    return labels, mask


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)  # (step, epoch, loss, lr, grad_norm)

    def append(self, step, epoch, loss, lr, grad_norm):
        self.rows.append((int(step), int(epoch), float(loss), float(lr), float(grad_norm)))

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])


def _check_finite(loss_val: float, grad_norm: float, step: int):
    if not (np.isfinite(loss_val) and np.isfinite(grad_norm)):
        raise NumericError(
            f"non-finite training state at step {step}: loss={loss_val}, grad_norm={grad_norm}")


def train_synthetic(episodes: list[Episode], config: SetSeqConfig,
                    train_cfg: TrainConfig, sampler_cfg: SamplerConfig,
                    checkpoint_dir=None, params: dict[str, Tensor] | None = None,
                    epoch_callback=None):
    """Train on pre-simulated episodes with per-step unit subsampling.

    One epoch visits every episode once in a seeded shuffled order,
    ``train_cfg.batch_episodes`` episodes per optimizer step; all episodes in
    a step share the drawn unit count. Returns (params, history).
    """
    if params is None:
        params = init_params(config, seed=train_cfg.seed)
    decay = {name: config.conv_weight_decay for name in conv_kernel_names(params)} \
        if config.conv_weight_decay > 0 else None
    opt = Adam(params, lr=train_cfg.learning_rate, beta1=train_cfg.adam_beta1,
               beta2=train_cfg.adam_beta2, eps=train_cfg.adam_eps, weight_decay=decay)
    feats = [episode_features(ep) for ep in episodes]
    labs = [episode_labels(ep) for ep in episodes]
    history = TrainHistory()
    ad.pool_clear()
    step = 0
    n_ep = len(episodes)
    bsz = train_cfg.batch_episodes
    for epoch in range(train_cfg.epochs):
        order = substream(train_cfg.seed, "episode_order", epoch).permutation(n_ep)
        for lo in range(0, n_ep, bsz):
            batch_ids = order[lo: lo + bsz]
            d_units = sample_unit_count(sampler_cfg, substream(train_cfg.seed, "unit_count", step))
            panels, labels, masks = [], [], []
            for j, e_idx in enumerate(batch_ids):
                ids = substream(train_cfg.seed, "unit_subsample", step, j).choice(
                    episodes[e_idx].m_units, size=d_units, replace=False)
                panels.append(feats[e_idx][ids])
                lab, msk = labs[e_idx]
                labels.append(lab[ids])
                masks.append(msk[ids])
            panel = np.stack(panels)
            mask = np.stack(masks)
            if not mask.any():
                step += 1
                continue
            with ad.arena():
                out, _ = forward(params, config, panel, train=True,
                                 rng=substream(train_cfg.seed, "dropout", step))
                loss = loss_cross_entropy(out, np.stack(labels), mask)
                loss_val = float(loss.data)
                loss.backward()
                gnorm = opt.grad_norm()
                _check_finite(loss_val, gnorm, step)
                opt.step()
                opt.zero_grad()
            history.append(step, epoch, loss_val, train_cfg.learning_rate, gnorm)
            step += 1
        if checkpoint_dir is not None:
            from .checkpoint import save_checkpoint
            save_checkpoint(checkpoint_dir, params,
                            meta={"epoch": epoch, "config": config.to_dict()})
        if epoch_callback is not None:
            epoch_callback(epoch, params, history)
    ad.pool_clear()
    return params, history


# -- portfolio training --------------------------------------------------------


def train_portfolio(features: np.ndarray, returns: np.ndarray, config: SetSeqConfig,
                    train_cfg: TrainConfig, sampler_cfg: SamplerConfig | None = None,
                    costs: CostConfig | None = None, window_len: int | None = None,
                    recency: RecencyConfig | None = None, checkpoint_dir=None,
                    params: dict[str, Tensor] | None = None):
    """Maximize the (net) Sharpe ratio of next-period portfolio returns.

    features (N, T, d) and returns (N, T) are aligned; the model output at
    position t is the weight applied to the return at t+1. Each epoch is one
    optimizer step over a sampled window (the full span by default); window
    starts can be biased toward recent data through ``recency``.
    """
    if train_cfg.loss == "net_sharpe" and costs is None:
        costs = CostConfig()
    if train_cfg.loss == "sharpe":
        costs = None
    n_assets, t_len, _ = features.shape
    if params is None:
        params = init_params(config, seed=train_cfg.seed)
    decay = {name: config.conv_weight_decay for name in conv_kernel_names(params)} \
        if config.conv_weight_decay > 0 else None
    opt = Adam(params, lr=train_cfg.learning_rate, beta1=train_cfg.adam_beta1,
               beta2=train_cfg.adam_beta2, eps=train_cfg.adam_eps, weight_decay=decay)
    history = TrainHistory()
    ad.pool_clear()
    w_len = t_len if window_len is None else min(window_len, t_len)
    starts = np.arange(t_len - w_len + 1)
    if recency is not None and len(starts) > 1:
        w = recency_weights(starts + w_len - 1, recency)
        start_probs = w / w.sum()
    else:
        start_probs = None
    for step in range(train_cfg.epochs):
        rng = substream(train_cfg.seed, "window_sample", step)
        s0 = int(rng.choice(starts, p=start_probs)) if len(starts) > 1 else 0
        if sampler_cfg is not None:
            d_units = sample_unit_count(sampler_cfg, substream(train_cfg.seed, "unit_count", step))
            ids = substream(train_cfg.seed, "unit_subsample", step, 0).choice(
                n_assets, size=d_units, replace=False)
        else:
            ids = np.arange(n_assets)
        window = features[ids, s0: s0 + w_len]
        y_next = returns[ids, s0 + 1: s0 + w_len]
        with ad.arena():
            out, _ = forward(params, config, window, train=True,
                             rng=substream(train_cfg.seed, "dropout", step))
            raw = ad.reshape(ad.narrow(out, 1, 0, w_len - 1), (len(ids), w_len - 1))
            loss = loss_sharpe(raw, y_next, costs=costs)
            loss_val = float(loss.data)
            loss.backward()
            gnorm = opt.grad_norm()
            _check_finite(loss_val, gnorm, step)
            opt.step()
            opt.zero_grad()
        history.append(step, step, loss_val, train_cfg.learning_rate, gnorm)
    ad.pool_clear()
    if checkpoint_dir is not None:
        from .checkpoint import save_checkpoint
        save_checkpoint(checkpoint_dir, params, meta={"config": config.to_dict()})
    return params, history
