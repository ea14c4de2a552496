import os, sys, time
os.environ["SETSEQ_ACCEPT_DIR"] = "/root/pkg/.accept_cache"
sys.path.insert(0, "/root/pkg/tests")
sys.path.insert(0, "/root/pkg")
import numpy as np
from tests.test_acceptance import SIM, EVAL_SIM, N_TRAIN_EPISODES, TRAIN_FULL, _train_variant
from setseq.sim import simulate
from setseq.evaluation import model_predictor, eval_over_episodes, interpretability_by_units

t0 = time.time()
train_eps = [simulate(SIM, episode=i) for i in range(N_TRAIN_EPISODES)]
print(f"[{time.time()-t0:.0f}s] simulated {len(train_eps)}", flush=True)
params, cfg = _train_variant("mean", TRAIN_FULL, train_eps, None)
print(f"[{time.time()-t0:.0f}s] trained mean", flush=True)

test_eps = [simulate(EVAL_SIM, episode=i) for i in range(16)]
ev = eval_over_episodes(test_eps, model_predictor(params, cfg))
print(f"mean 3L e40: auc={ev.auc_absorbing:.4f} kl={ev.kl_full:.6f} r2={ev.r2_absorbing:.4f} corr={ev.corr_absorbing:.4f}", flush=True)
for dim in (0, 1):
    mat = interpretability_by_units(params, cfg, test_eps, [100, 1000], dim=dim)
    print(f"interp dim{dim} (layers x [100,1000]):\n{np.round(mat,3)}", flush=True)
print(f"total {time.time()-t0:.0f}s", flush=True)
