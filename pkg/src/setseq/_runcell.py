"""Run one training cell in an isolated process and report cost + quality.

Invoked as ``python -m setseq._runcell spec.json out.json``. Isolation makes
peak-RSS attribution per cell exact, which is what the ablation grid's
relative-memory column reports.
"""

from __future__ import annotations

import json
import resource
import sys
import time

import numpy as np


def run_cell(spec: dict) -> dict:
    from .config import dataclass_from_dict
    from .evaluation import eval_over_episodes, model_predictor
    from .model import SetSeqConfig
    from .sim import SimConfig, simulate
    from .training import SamplerConfig, TrainConfig, train_synthetic

    sim_cfg = dataclass_from_dict(SimConfig, spec.get("sim", {}), "sim")
    model_cfg = dataclass_from_dict(SetSeqConfig, spec.get("model", {}), "model")
    train_cfg = dataclass_from_dict(TrainConfig, spec.get("train", {}), "train")
    sampler_cfg = dataclass_from_dict(SamplerConfig, spec.get("sampler", {}), "sampler")

    n_train = int(spec.get("n_train_episodes", 10))
    episodes = [simulate(sim_cfg, episode=i) for i in range(n_train)]

    t0 = time.perf_counter()
    params, history = train_synthetic(episodes, model_cfg, train_cfg, sampler_cfg)
    train_s = time.perf_counter() - t0

    out = {
        "train_s": train_s,
        "epoch_time_s": train_s / train_cfg.epochs,
        "episode_visit_s": train_s / (train_cfg.epochs * n_train),
        "steps": len(history.rows),
        "final_loss": float(history.losses[-1]) if len(history.rows) else None,
        "peak_rss_kb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss,
    }
    n_eval = int(spec.get("n_eval_episodes", 0))
    if n_eval:
        eval_sim = dataclass_from_dict(SimConfig, spec.get("eval_sim", {"seed": sim_cfg.seed + 7919}),
                                       "eval_sim")
        test_eps = [simulate(eval_sim, episode=i) for i in range(n_eval)]
        ev = eval_over_episodes(test_eps, model_predictor(params, model_cfg))
        out.update({"kl_full": ev.kl_full, "auc": ev.auc_absorbing,
                    "r2": ev.r2_absorbing, "corr": ev.corr_absorbing})
    if spec.get("save_params"):
        from .checkpoint import save_checkpoint
        save_checkpoint(spec["save_params"], params, meta={"config": model_cfg.to_dict()})
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: python -m setseq._runcell spec.json out.json", file=sys.stderr)
        return 2
    spec = json.loads(open(argv[0], encoding="utf-8").read())
    result = run_cell(spec)
    with open(argv[1], "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
