"""Learn a second-order system from simulated two-link arm motions.

Generates seven joint-space demonstrations, trains the first-order model,
warm-starts the second-order one from it and compares both with the flat
(linear) system on the held-out demonstrations.

    python3 demos/arm_pipeline.py [iterations]
"""
import sys

import numpy as np

from curvds import DSModel, TrainConfig, evaluate, generate_arm_dataset, train_first, train_second
from curvds.data import SampleSet

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1000

ds = generate_arm_dataset(seed=0)
full = ds.samples("train")
# every tenth sample is plenty at this sample rate and keeps an iteration cheap
s = SampleSet(full.positions[::10], full.velocities[::10], full.accelerations[::10], full.attractor)
print(f"{len(ds.train)} training / {len(ds.test)} test demonstrations, {len(s)} samples, "
      f"attractor {np.round(ds.attractor, 4)}")

cfg = TrainConfig(max_iters=iters, seed=0)
first = train_first(s, cfg)
print(f"first order:  loss {first.initial_loss:.4g} -> {first.final_loss:.4g}")
second = train_second(s, cfg, warm_start=(first.embedding, first.K))
print(f"second order: loss {second.initial_loss:.4g} -> {second.final_loss:.4g}")

for order, res in ((1, first), (2, second)):
    model = DSModel(res.embedding, ds.attractor, res.K, res.D if order == 2 else None, order)
    trained = evaluate(model.system(), ds)
    flat = evaluate(DSModel.flat(2, ds.attractor, order).system(), ds)
    print(f"\norder {order}   {'RMSE':>10} {'CS':>10} {'DTWD':>10}")
    for name, rep in (("trained", trained), ("flat", flat)):
        print(f"{name:8} {rep.rmse:10.4g} {rep.cs:10.3g} {rep.dtwd:10.4g}")
