#!/usr/bin/env python3
# Overfitting a handful of synthetic ellipse images.
# Takes a few minutes on one CPU core.

import tempfile

from dmads import DmADsNet, ModelConfig, Schedule, generate_synthetic, train
from dmads.data import load_samples

root = tempfile.mkdtemp()
generate_synthetic(root, n=8, size=64, seed=0)
samples = load_samples(root, image_size=64)

cfg = ModelConfig(image_size=64, width_multiplier=0.125)
net = DmADsNet(cfg)

# measure Dice on the training images themselves; stop at 0.95
sched = Schedule(max_steps=300, target_metric=0.95)


def show(record):
    if record["kind"] == "val":
        print(f"epoch {record['epoch']:3d}  step {record['step']:3d}  dice {record['dice']:.4f}")


result = train(net, samples, samples, sched, on_record=show)
print("stopped:", result.stop_reason, "after", result.state.step, "steps")
