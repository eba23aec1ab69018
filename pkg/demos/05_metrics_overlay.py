#!/usr/bin/env python3
# Scoring masks and drawing the error overlay.

import tempfile
from pathlib import Path

import numpy as np

from dmads import compute_metrics, render_overlay
from dmads.data import write_png
from dmads.overlay import GREEN, RED, count_color

yy, xx = np.mgrid[0:48, 0:48]
gt = (yy - 24) ** 2 + (xx - 24) ** 2 < 15**2
pred = (yy - 22) ** 2 + (xx - 27) ** 2 < 14**2

m = compute_metrics(pred, gt)
print(f"dice {m.dice:.4f} iou {m.iou:.4f} precision {m.precision:.4f} recall {m.recall:.4f}")
print("iou from dice:", m.dice / (2 - m.dice))

# false positives red, false negatives green
img = render_overlay(pred, gt)
print("red pixels", count_color(img, RED), "= FP", m.counts.fp)
print("green pixels", count_color(img, GREEN), "= FN", m.counts.fn)

out = Path(tempfile.mkdtemp()) / "overlay.png"
write_png(out, img)
print("wrote", out)
