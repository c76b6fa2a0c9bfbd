"""Forgetting on a drifting stream, with and without projected updates.

Trains a seed model, then feeds ten rotated splits to plain fine-tuning
(NewData) and to projected updates (O-GEM), printing validation accuracy at
the end of every split.  A shortened schedule keeps it under a minute.
Run: ``python demos/forgetting.py [seed]``.
"""

import sys

from gemstream.analysis import max_split_end_decrease, max_within_split_drop, split_end_accuracies
from gemstream.continual import MethodSpec, TrainConfig, run_method
from gemstream.model import Architecture
from gemstream.stream import StreamSpec, generate_stream

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
spec = StreamSpec(seed=seed)
stream = generate_stream(spec)
arch = Architecture(spec.input_dim, 16, spec.class_count)
cfg = TrainConfig(epochs_d0=20, epochs_per_split=5, seed=seed)

methods = [MethodSpec("AllData"), MethodSpec("NewData"), MethodSpec("OGem")]
logs = {m.name: run_method(m, stream, arch, cfg) for m in methods}

print("validation accuracy at split ends (split 0 = seed model):")
print("split " + " ".join(f"{name:>15}" for name in logs))
ends = {name: split_end_accuracies(log) for name, log in logs.items()}
for n in range(spec.n_splits + 1):
    print(f"{n:>5} " + " ".join(f"{ends[name][n]:>15.3f}" for name in logs))

for name, log in logs.items():
    print(
        f"{name}: worst drop inside a split {max_within_split_drop(log):.3f}, "
        f"worst split-end decrease {max_split_end_decrease(log):.3f}, "
        f"steps {log.final().cum_steps}"
    )
