"""Shared evaluation wiring: model and filter predictions over episode sets.

Predictions are compared on active, labeled (unit, period) cells only: a
unit already in the absorbing state has a deterministic row, and the final
period of an episode has no realized next state.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .kalman import estimate_episode, oracle_predict
from .metrics import ClassificationEval, classification_eval, interpretability_corr
from .model import SetSeqConfig, forward
from .sim import ABSORBING_STATE, Episode, observation_from_ids, observe
from .training import episode_features


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z, dtype=np.float64)
    return e / e.sum(axis=-1, keepdims=True)


def model_predict_probs(params, config: SetSeqConfig, episode: Episode,
                        unit_ids: np.ndarray | None = None) -> np.ndarray:
    """(n, T, C) predicted next-state probabilities for the chosen units."""
    feats = episode_features(episode)
    if unit_ids is not None:
        feats = feats[unit_ids]
    with ad.no_grad(), ad.arena():
        out, _ = forward(params, config, feats)
        probs = softmax_probs(out.data.astype(np.float64))
    return probs


def _labeled_cells(episode: Episode, unit_ids: np.ndarray):
    states = episode.states[unit_ids]
    labeled = np.zeros(states.shape, dtype=bool)
    labeled[:, :-1] = states[:, :-1] != ABSORBING_STATE
    labels = np.zeros(states.shape, dtype=np.int64)
    labels[:, :-1] = states[:, 1:].astype(np.int64) - 1
    from_states = states.astype(np.int64) - 1
    return labeled, labels, from_states


def collect_cells(episodes: list[Episode], predict_fn, n_units: int | None = None,
                  draw: int = 0):
    """Pool labeled cells across episodes.

    ``predict_fn(episode, unit_ids)`` returns (n, T, C) probabilities for the
    requested units. Returns (true, pred, labels, from_states, episode_ids).
    """
    trues, preds, labs, froms, groups = [], [], [], [], []
    for ep in episodes:
        if n_units is None or n_units >= ep.m_units:
            ids = np.arange(ep.m_units)
        else:
            ids = observe(ep, n_units, draw=draw).observed_ids
        pred = predict_fn(ep, ids)
        labeled, labels, from_states = _labeled_cells(ep, ids)
        trues.append(ep.true_probs[ids][labeled])
        preds.append(pred[labeled])
        labs.append(labels[labeled])
        froms.append(from_states[labeled])
        groups.append(np.full(int(labeled.sum()), ep.index, dtype=np.int64))
    return (np.concatenate(trues), np.concatenate(preds), np.concatenate(labs),
            np.concatenate(froms), np.concatenate(groups))


def model_predictor(params, config: SetSeqConfig):
    def predict(episode, ids):
        return model_predict_probs(params, config, episode, unit_ids=ids)
    return predict


def kalman_predictor(variant: str):
    """Filter predictor whose observed subset is exactly the evaluated subset."""
    def predict(episode, ids):
        obs = observation_from_ids(episode, ids)
        lam_hat, _, _ = estimate_episode(obs, episode.config, variant)
        return oracle_predict(lam_hat, episode)[ids]
    return predict


def evaluate_cells(true_probs, pred_probs, labels, from_states) -> ClassificationEval:
    return classification_eval(true_probs, pred_probs, labels, from_states=from_states)


def eval_over_episodes(episodes: list[Episode], predict_fn, n_units: int | None = None,
                       draw: int = 0) -> ClassificationEval:
    cells = collect_cells(episodes, predict_fn, n_units=n_units, draw=draw)
    return evaluate_cells(cells[0], cells[1], cells[2], cells[3])


def sweep_unit_counts(episodes: list[Episode], methods: dict, n_grid: list[int],
                      draw: int = 0):
    """Long-format rows (n, method, metric, value) across observed-unit counts.

    ``methods`` maps method name -> predict_fn. For each n, every method is
    evaluated on the same unit subsets.
    """
    rows = []
    for n in n_grid:
        for name, fn in methods.items():
            ev = eval_over_episodes(episodes, fn, n_units=n, draw=draw)
            for metric, value in (("auc", ev.auc_absorbing), ("kl_full", ev.kl_full),
                                  ("kl_absorbing", ev.kl_absorbing),
                                  ("r2", ev.r2_absorbing), ("corr", ev.corr_absorbing)):
                rows.append((n, name, metric, value))
    return rows


def probe_traces(params, config: SetSeqConfig, episodes: list[Episode],
                 n_units: int | None = None, draw: int = 0):
    """Per-episode layer traces and the matching group-0 intensity paths."""
    traces, lams = [], []
    for ep in episodes:
        feats = episode_features(ep)
        if n_units is not None and n_units < ep.m_units:
            ids = observe(ep, n_units, draw=draw).observed_ids
            feats = feats[ids]
        with ad.no_grad(), ad.arena():
            _, trace = forward(params, config, feats, collect_trace=True)
        traces.append(trace)
        lams.append(ep.lam[0])
    return traces, lams


def interpretability_by_units(params, config: SetSeqConfig, episodes: list[Episode],
                              n_grid: list[int], dim: int = 0) -> np.ndarray:
    """(layers, len(n_grid)) mean |corr| between summary dim and group-0 intensity."""
    out = np.empty((config.n_setseq_layers, len(n_grid)))
    for j, n in enumerate(n_grid):
        traces, lams = probe_traces(params, config, episodes, n_units=n)
        rows = [interpretability_corr(tr, lam, dim=dim) for tr, lam in zip(traces, lams)]
        out[:, j] = np.mean(np.stack(rows), axis=0)
    return out
