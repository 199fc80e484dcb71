"""Sweeping the confidence threshold h and the mining radius r.

Low h lets weak proxies add neighbors, high h starves the positive sets;
small r adds almost nothing, large r swallows the other class. Uses a
smaller data set so the six runs finish in a few minutes.
"""

from islab import RunConfig, run_sweep

cfg = RunConfig(n_per_class=400, n_test_per_class=200, epochs_per_round=15)
for name, values in (("h", [0.1, 0.5, 0.9]), ("r", [0.25, 1.0, 4.0])):
    rows = run_sweep(cfg, {name: values}, f"sweep_{name}.csv", vary_seed=False)
    for row in rows:
        print(f"{name}={row['value']:5s}  kNN {row['knn_accuracy']:.3f}  "
              f"precision {row['precision']:.3f}  {row['error']}")
