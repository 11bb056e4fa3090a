"""Pen-lift removal and surface flattening on a synthetic word.

The word is written on a slanted page beside the array, tracker-like noise
is added, and the recovered ink is compared with simply dropping z.
Writes handwriting_flatten.svg next to this script.
"""
import sys
from pathlib import Path

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from cfcw.handwriting import naive_projection, recover_ink
from cfcw.words import LIFT, SyntheticWordSpec, generate_word, tracking_noise

word = sys.argv[1] if len(sys.argv) > 1 else "fit"
rate = 1 / 3e-3

w = generate_word(SyntheticWordSpec(word=word, size=0.08, pose="slant-beside"), rate)
pts = w.positions + tracking_noise(len(w.positions), seed=0, frame_rate=rate)
ink = recover_ink(w.timestamps, pts)
naive = naive_projection(pts, ink.strokes)

lift = w.labels == LIFT
print(f"{word}: {w.n_lifts} lifts, {len(ink.strokes)} strokes recovered")
if lift.any():
    print(f"lift samples removed {np.mean(~ink.kept[lift]):.3f}, "
          f"stroke samples removed {np.mean(~ink.kept[~lift]):.3f}")

fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
ax = axes[0]
ax.plot(1e3 * pts[~lift, 0], 1e3 * pts[~lift, 1], ".", ms=1, c="k", label="stroke")
ax.plot(1e3 * pts[lift, 0], 1e3 * pts[lift, 1], ".", ms=1, c="tab:red", label="lift")
ax.set_title("tracked (x, y)")
ax.legend(markerscale=6)
for ax, k, title in [(axes[1], naive, "drop z"), (axes[2], ink.ink, "surface flattening")]:
    for s in k.strokes:
        ax.plot(1e3 * s[:, 0], 1e3 * s[:, 1], "k-", lw=1)
    wd, ht = 1e3 * k.extent()
    ax.set_title(f"{title}  ({wd:.1f} x {ht:.1f} mm)")
for ax in axes:
    ax.set_aspect("equal")
    ax.set_xlabel("mm")
fig.tight_layout()
out = Path(__file__).with_name("handwriting_flatten.svg")
fig.savefig(out)
print("wrote", out)
