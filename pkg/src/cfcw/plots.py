"""SVG figures for a pipeline run: spectrogram, error CDFs, trajectory overlay."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import signal  # noqa: E402

# keep re-runs byte-stable
matplotlib.rcParams["svg.hashsalt"] = "cfcw"
_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def spectrogram(cap, path, channel=0):
    f, t, s = signal.spectrogram(cap.channels[channel], cap.sample_rate, nperseg=512,
                                 noverlap=256, window="hann")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.pcolormesh(t, f / 1e3, 10 * np.log10(s + 1e-20), shading="auto", cmap="magma",
                  rasterized=True)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("frequency (kHz)")
    ax.set_title(f"mic {channel}")
    return _save(fig, path)


def error_cdf(errors, path, label, unit=1e3, unit_name="mm"):
    """Empirical CDF of |errors|; ``unit`` scales metres to the axis unit."""
    e = np.sort(np.abs(np.asarray(errors, dtype=float).ravel()))
    e = e[np.isfinite(e)]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if len(e):
        ax.plot(e * unit, np.arange(1, len(e) + 1) / len(e))
    ax.set_xlabel(f"{label} ({unit_name})")
    ax.set_ylabel("CDF")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def trajectory_overlay(traj, truth_path, path):
    truth = truth_path.position_at(traj.timestamps)
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, (a, b) in zip(axes, [(0, 1), (0, 2)]):
        ax.plot(1e3 * truth[:, a], 1e3 * truth[:, b], color="0.6", lw=2, label="ground truth")
        ax.plot(1e3 * traj.points[:, a], 1e3 * traj.points[:, b], color="C3", lw=0.8,
                label="estimate")
        ax.set_xlabel("xyz"[a] + " (mm)")
        ax.set_ylabel("xyz"[b] + " (mm)")
        ax.set_aspect("equal", "datalim")
    axes[0].legend(loc="best", fontsize=8)
    return _save(fig, path)


def write_plots(res, out):
    files = {}
    if res.capture is not None:
        files["spectrogram"] = spectrogram(res.capture, out / "spectrogram.svg")
    if res.ranging_errors is not None:
        files["ranging_cdf"] = error_cdf(res.ranging_errors, out / "ranging_cdf.svg",
                                         "|ranging error|", 1e6, "um")
    if res.errors_3d is not None:
        files["error_cdf"] = error_cdf(res.errors_3d, out / "error_cdf.svg", "3D error")
        files["trajectory_plot"] = trajectory_overlay(res.tracking.trajectory, res.truth.path,
                                                      out / "trajectory.svg")
    return files
