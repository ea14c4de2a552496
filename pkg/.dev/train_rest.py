import os, sys, time
os.environ["SETSEQ_ACCEPT_DIR"] = "/root/pkg/.accept_cache"
sys.path.insert(0, "/root/pkg/tests")
sys.path.insert(0, "/root/pkg")

# wait for the mean-variant run to finish writing its checkpoint
while not os.path.exists("/root/pkg/.accept_cache/mean_e40_s11/params.json"):
    time.sleep(30)

import numpy as np
from tests.test_acceptance import SIM, EVAL_SIM, N_TRAIN_EPISODES, TRAIN_FULL, TRAIN_MHA, _train_variant
from setseq.sim import simulate
from setseq.evaluation import model_predictor, eval_over_episodes

t0 = time.time()
train_eps = [simulate(SIM, episode=i) for i in range(N_TRAIN_EPISODES)]
test_eps = [simulate(EVAL_SIM, episode=i) for i in range(16)]
print(f"[{time.time()-t0:.0f}s] simulated", flush=True)

params_n, cfg_n = _train_variant("none", TRAIN_FULL, train_eps, None)
ev = eval_over_episodes(test_eps, model_predictor(params_n, cfg_n))
print(f"[{time.time()-t0:.0f}s] none e40: auc={ev.auc_absorbing:.4f} kl={ev.kl_full:.6f} r2={ev.r2_absorbing:.4f}", flush=True)

params_a, cfg_a = _train_variant("mha", TRAIN_MHA, train_eps, None)
ev = eval_over_episodes(test_eps, model_predictor(params_a, cfg_a))
print(f"[{time.time()-t0:.0f}s] mha e{TRAIN_MHA.epochs}: auc={ev.auc_absorbing:.4f} kl={ev.kl_full:.6f} r2={ev.r2_absorbing:.4f}", flush=True)
print(f"total {time.time()-t0:.0f}s", flush=True)
