"""One round of the protocol, phase by phase.

1. instance discrimination on the memory bank (every P_i = {i})
2. the proxy GAN learns what a positive looks like from real triplets
3. mining: each anchor keeps its most confident proxy and absorbs the bank
   entries inside a ball of radius r around it
"""

import numpy as np

from islab import RunConfig
from islab.evaluation import additions_precision, mining_precision
from islab.gan import train_gan
from islab.mining import generate_candidates, mine_all, select_optimal
from islab.pipeline import init_run, load_datasets, round_rng, train_encoder

cfg = RunConfig(n_per_class=300, n_test_per_class=100, epochs_per_round=10)
train, test = load_datasets(cfg)
run = init_run(cfg, train)
labels = train.eval_labels()

# -- phase 1: encoder
rows = train_encoder(run, train.samples, round_rng(cfg.seed, 1, 0))
for row in rows[::3]:
    print(f"epoch {row['epoch']:2d}  L1 {row['l1']:.3f}  L2 {row['l2']:.3f}  lr {row['lr']:.4f}")

# -- phase 2: GAN on a frozen copy of the bank
snapshot = run.bank.snapshot()
_, history = train_gan(run.gan, run.state, snapshot, cfg.gan_config(), round_rng(cfg.seed, 1, 1))
for epoch, d_loss, g_loss in history:
    print(f"gan epoch {epoch}  D loss {d_loss:.4f}  G loss {g_loss:.4f}")

# -- phase 3: mining
# after one round of instance discrimination the bank is spread out, so a
# ball of radius r around a proxy may hold nothing yet; look at the geometry
rng = round_rng(cfg.seed, 1, 9)
near = []
for anchor in range(0, train.N, 25):
    opt = select_optimal(generate_candidates(anchor, cfg.m, run.state, snapshot, run.gan, rng))
    near.append(np.sort(np.linalg.norm(snapshot - opt.proxy, axis=1))[:3])
near = np.array(near)
print("distance from proxies to their 1st/2nd/3rd closest bank entries:",
      np.round(near.mean(axis=0), 3), f"(r = {cfg.r})")

state, report = mine_all(run.state, snapshot, run.gan, cfg.m, cfg.r, cfg.h,
                         round_rng(cfg.seed, 1, 2))
print(f"anchors {report.anchors_processed}, pairs added {report.total_added}, "
      f"mean confidence {report.mean_confidence:.3f}")
print("precision of the new pairs:", additions_precision(report, labels))
print("set sizes: mean %.1f, max %d" % (state.sizes().mean(), state.sizes().max()))
print("precision by set size:", mining_precision(state, labels))
print("first anchor with additions:",
      next((a, js[:10]) for a, js in report.added.items()) if report.added else None)
