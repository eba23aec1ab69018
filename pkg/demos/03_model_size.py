#!/usr/bin/env python3
# Building the network, its outputs, and what it costs.

import numpy as np

from dmads import DmADsNet, ModelConfig, Tensor, count_parameters, estimate_flops, no_grad

# a narrow model runs in well under a second
cfg = ModelConfig(image_size=64, width_multiplier=0.125)
net = DmADsNet(cfg)
image = Tensor(np.random.default_rng(0).random((1, 3, 64, 64)).astype(np.float32))
with no_grad():
    out = net(image)
print("final map:", out.final_map.shape)
print("deep maps:", [m.shape for m in out.deep_maps])

# parameter and MAC counts at the default widths (64, 128, 256)
full = ModelConfig()
n = count_parameters(DmADsNet(full, init=False))
print(f"default model: {n / 1e6:.2f}M parameters, {estimate_flops(full) / 1e9:.2f} GMac at 256x256")

# each ablation toggles one component off
for letter in "abcde":
    c = full.with_ablation(letter)
    print(letter, f"{count_parameters(DmADsNet(c, init=False)) / 1e6:6.2f}M")

# width multiplier scales every stage
for m in (0.25, 0.5, 0.75):
    c = ModelConfig(width_multiplier=m)
    print(f"x{m}: {count_parameters(DmADsNet(c, init=False)) / 1e6:6.2f}M, {estimate_flops(c) / 1e9:7.2f} GMac")
