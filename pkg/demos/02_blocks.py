#!/usr/bin/env python3
# The three attention blocks on a small feature map.

import numpy as np

from dmads import FRFB, LFA, MSCFA, Tensor, init_parameters

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((1, 16, 32, 32)).astype(np.float32))

# MSCFA: three dilated paths (rates 4, 2, 1) fused and added back
mscfa = MSCFA(16)
init_parameters(mscfa, seed=0)
print("mscfa", mscfa(x).shape)

# its output conv starts at zero, so a fresh block is the identity
print("identity at init:", np.array_equal(mscfa(x).data, x.data))

# LFA: SE gate, then patch-local convs at four tile sizes
lfa = LFA(16, patch_ratios=(4, 8, 16, 32))
init_parameters(lfa, seed=1)
print("lfa", lfa(x).shape)

# FRFB: fuse a skip feature with a deeper map at half resolution
frfb = FRFB(16)
init_parameters(frfb, seed=2)
deep = Tensor(rng.standard_normal((1, 32, 16, 16)).astype(np.float32))
parts = frfb.parts(x, deep)
for name, t in parts.items():
    print(f"  {name:8s} {t.shape}")
print("frfb", frfb(x, deep).shape)
