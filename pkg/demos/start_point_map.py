"""Start-point objective over a plane through the true beacon position.

Shows why one wavelength is not enough on a 7-mic ring: the residual has
several near-zero basins.  Stacking a 40 kHz and a 42 kHz slot leaves one.
Writes start_point_map.svg next to this script.
"""
from pathlib import Path

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from cfcw.sim import default_array
from cfcw.startpoint import PhaseDifferenceSet, pairwise_phase_differences, residual_map, solve_start_point

C = 343.0
truth = np.array([0.06, 0.10, 0.20])
geo = default_array()


def snapshot(f, noise=0.05, rng=np.random.default_rng(1)):
    lam = C / f
    d = np.linalg.norm(truth - geo.mic_positions, axis=1)
    ph = 2 * np.pi * d / lam + rng.normal(0, noise, len(d))
    return pairwise_phase_differences(np.angle(np.exp(1j * ph)), geo, lam)


one = snapshot(40e3)
both = PhaseDifferenceSet.combine([one, snapshot(42e3)])

# plane z = truth z
xs = np.linspace(-0.15, 0.25, 241)
ys = np.linspace(-0.10, 0.30, 241)
X, Y = np.meshgrid(xs, ys)
pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, truth[2])], axis=1)

fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
for ax, ph, title in zip(axes, [one, both], ["40 kHz only", "40 + 42 kHz"]):
    r = residual_map(ph, pts).reshape(X.shape)
    im = ax.pcolormesh(1e2 * X, 1e2 * Y, np.log10(r + 1e-12), shading="auto", cmap="viridis")
    fix = solve_start_point(ph, seed=0)
    ax.plot(1e2 * truth[0], 1e2 * truth[1], "w+", ms=12, label="truth")
    ax.plot(1e2 * fix.position[0], 1e2 * fix.position[1], "rx", ms=9, label="GA fix")
    ax.set_title(f"{title}  (err {1e3 * np.linalg.norm(fix.position - truth):.2f} mm)")
    ax.set_xlabel("x (cm)")
    ax.set_aspect("equal")
    fig.colorbar(im, ax=ax, label="log10 residual (m^2)")
axes[0].set_ylabel("y (cm)")
axes[0].legend(loc="upper left")
fig.tight_layout()
out = Path(__file__).with_name("start_point_map.svg")
fig.savefig(out)
print("wrote", out)
