"""Distance-change error CDF for the 5 mm retreat, clean vs 40 dB SNR.

Runs the bundled ranging experiments for a handful of seeds and plots the
pooled per-frame error.  Writes ranging_cdf.svg next to this script.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from cfcw.config import bundled, load_config
from cfcw.pipeline import run_pipeline

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
stages = ("simulate", "demod", "startpoint", "localize")

fig, ax = plt.subplots(figsize=(6, 4))
with tempfile.TemporaryDirectory() as tmp:
    for name in ["clean-ranging-40k", "clean-ranging-40k-noise40"]:
        errs = []
        for s in range(n_seeds):
            cfg = load_config(bundled(name)).with_seed(s)
            res = run_pipeline(cfg, Path(tmp) / f"{name}-{s}", stages=stages, plots=False)
            e = np.abs(res.ranging_errors)
            errs.append(e[np.isfinite(e)])
        e = np.sort(np.concatenate(errs)) * 1e6
        ax.plot(e, np.arange(1, len(e) + 1) / len(e), label=f"{name} (median {np.median(e):.1f} um)")
        print(f"{name}: median {np.median(e):.2f} um, 90th pct {np.percentile(e, 90):.2f} um")

ax.set_xlabel("|distance change error| (um)")
ax.set_ylabel("CDF")
ax.set_xlim(left=0)
ax.grid(alpha=0.3)
ax.legend()
fig.tight_layout()
out = Path(__file__).with_name("ranging_cdf.svg")
fig.savefig(out)
print("wrote", out)
