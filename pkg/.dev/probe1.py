import numpy as np, time, json
from setseq.sim import SimConfig, simulate
from setseq.model import SetSeqConfig
from setseq.training import TrainConfig, SamplerConfig, train_synthetic
from setseq.evaluation import (model_predictor, kalman_predictor, eval_over_episodes,
                               interpretability_by_units)
from setseq.checkpoint import save_checkpoint

t_start = time.time()
train_eps = [simulate(SimConfig(seed=100), episode=i) for i in range(120)]
test_eps = [simulate(SimConfig(seed=999), episode=i) for i in range(24)]
print(f"[{time.time()-t_start:.0f}s] simulated", flush=True)

cfg = SetSeqConfig(n_setseq_layers=2, n_plain_seq_layers=1, d_in=4, d_model=8,
                   chunk_len=3, summary_dim=2, phi_out_dim=5, kernel_len=30,
                   dropout=0.0, variant="mean", output_dim=3, dtype="float32")
tc = TrainConfig(epochs=15, learning_rate=0.003, batch_episodes=5, seed=0)
sc = SamplerConfig(gamma=0.08, m_units=1000)

ev_kf = eval_over_episodes(test_eps, kalman_predictor("dynamics_consistent"))
print(f"KF   : auc={ev_kf.auc_absorbing:.4f} kl={ev_kf.kl_full:.6f} r2={ev_kf.r2_absorbing:.4f} corr={ev_kf.corr_absorbing:.4f}", flush=True)

def cb(epoch, params, history):
    if epoch % 3 != 2:
        return
    ev = eval_over_episodes(test_eps[:12], model_predictor(params, cfg))
    print(f"[{time.time()-t_start:.0f}s] epoch {epoch}: loss={history.losses[-10:].mean():.4f} "
          f"auc={ev.auc_absorbing:.4f} kl={ev.kl_full:.6f} r2={ev.r2_absorbing:.4f} corr={ev.corr_absorbing:.4f}", flush=True)

params, hist = train_synthetic(train_eps, cfg, tc, sc, epoch_callback=cb)
save_checkpoint("/root/pkg/.dev/probe1_ck", params, meta={"config": cfg.to_dict()})

ev = eval_over_episodes(test_eps, model_predictor(params, cfg))
print(f"final: auc={ev.auc_absorbing:.4f} kl={ev.kl_full:.6f} r2={ev.r2_absorbing:.4f} corr={ev.corr_absorbing:.4f}", flush=True)
mat = interpretability_by_units(params, cfg, test_eps[:12], [100, 1000], dim=0)
print("interp |corr| (layers x n={100,1000}):\n", np.round(mat, 3), flush=True)
print(f"total {time.time()-t_start:.0f}s", flush=True)
