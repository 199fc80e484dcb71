"""The full four-round protocol with artifacts on disk.

Writes metrics/round_<i>.json, mining/round_<i>.json, logs/train.csv,
logs/gan.csv and per-round checkpoints under ./runs/two_moons, then
re-evaluates the last checkpoint to show the report is reproducible.
"""

import sys

from islab import RunConfig, run_eval, run_train

out = sys.argv[1] if len(sys.argv) > 1 else "runs/two_moons"
cfg = RunConfig()
res = run_train(cfg, out)

print("round  kNN    probe  mean|P|  prec(all)  prec(10+)  euclid")
for rep in res.reports:
    p = rep.mining_precision_by_setsize
    print(f"{rep.round:5d}  {rep.knn_accuracy:.3f}  {rep.linear_accuracy:.3f}  "
          f"{rep.mean_positive_set_size:7.1f}  {p['all']:.3f}      "
          f"{p.get('10+', float('nan')):.3f}      {rep.euclidean_precision:.3f}")

again = run_eval(f"{out}/checkpoints/round_{cfg.rounds}.npz")
print("checkpoint re-evaluation identical:", again.to_json() == res.reports[-1].to_json())
