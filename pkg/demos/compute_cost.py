"""SGD steps spent after the seed phase: incremental training vs retraining.

Incremental methods take ``epochs_per_split`` passes over each new split;
retraining from scratch on everything seen so far grows with the stream.
Run: ``python demos/compute_cost.py``.
"""

from gemstream.continual import TrainConfig, expected_cum_steps, post_seed_step_ratio

cfg = TrainConfig()
d0, total = 4000, 2000

print("cumulative steps at each split end, 10 splits of 200:")
inc = expected_cum_steps("OGem", d0, [200] * 10, cfg)
full = expected_cum_steps("AllData", d0, [200] * 10, cfg)
print(f"  {'split':>5} {'incremental':>12} {'retrain':>10}")
for n, (a, b) in enumerate(zip(inc, full)):
    print(f"  {n:>5} {a:>12} {b:>10}")

print("\npost-seed steps of incremental training as a share of retraining:")
for n in (1, 2, 5, 10, 20, 50):
    ratio = post_seed_step_ratio(d0, [total // n] * n, cfg)
    print(f"  {n:>3} splits: {100 * ratio:6.2f}%")
