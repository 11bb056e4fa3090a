"""Per-frame 3D position from absolute microphone distances.

The start fix gives the absolute distances at one frame; the phase tracks
carry them forward.  Each frame is then a small nonlinear least-squares
problem, solved by damped Gauss-Newton warm-started from the previous frame.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, InvalidArgument
from .sim import WORKSPACE_RANGE

MIN_MICS = 4
MAX_GAP = 3


def absolute_distances(fix_position, distance_change, geometry, fix_frame=0, unreliable=None):
    """d_i(k) = |P0 - m_i| + (change_i(k) - change_i(k_fix)); unusable entries become NaN."""
    dc = np.asarray(distance_change, dtype=float)
    if dc.ndim != 2 or dc.shape[0] != geometry.n_mics:
        raise InvalidArgument("distance_change must be (n_mics, n_frames)")
    d0 = np.linalg.norm(np.asarray(fix_position) - geometry.mic_positions, axis=1)
    d = d0[:, None] + (dc - dc[:, fix_frame:fix_frame + 1])
    if unreliable is not None:
        d = np.where(np.asarray(unreliable, dtype=bool), np.nan, d)
    return d


def multilaterate(distances, geometry, seed_point, max_iter=50, tol=1e-7,
                  max_step=WORKSPACE_RANGE):
    """Least squares on ``|P - m_i| - d_i`` over the mics with finite distances.

    Returns ``(point, rms_residual, ok)``.  ``ok`` is False when an update
    jumps farther than ``max_step`` (divergence).
    """
    d = np.asarray(distances, dtype=float)
    use = np.isfinite(d)
    if use.sum() < MIN_MICS:
        raise InsufficientData(f"{int(use.sum())} usable mics, need {MIN_MICS}")
    m = geometry.mic_positions[use]
    d = d[use]
    p = np.array(seed_point, dtype=float)
    if not np.all(np.isfinite(p)):
        raise InvalidArgument("seed point must be finite")
    lam = 1e-9
    for _ in range(max_iter):
        v = p - m
        r_i = np.linalg.norm(v, axis=1)
        res = r_i - d
        jac = v / np.maximum(r_i[:, None], 1e-12)
        jtj = jac.T @ jac
        step = -np.linalg.solve(jtj + lam * np.trace(jtj) * np.eye(3), jac.T @ res)
        # damping: halve until the cost does not increase
        cost = res @ res
        for _ in range(20):
            q = p + step
            rq = np.linalg.norm(q - m, axis=1) - d
            if rq @ rq <= cost:
                break
            step *= 0.5
        if np.linalg.norm(step) > max_step:
            return p, np.inf, False
        p = q
        if np.linalg.norm(step) < tol:
            break
    res = np.linalg.norm(p - m, axis=1) - d
    return p, float(np.sqrt(np.mean(res ** 2))), True


@dataclass
class Trajectory3D:
    timestamps: np.ndarray
    points: np.ndarray  # (n, 3)
    residuals: np.ndarray
    valid: np.ndarray  # False where the point is interpolated or missing
    source_frame_rate: float = 1.0 / 3e-3
    header: str = ""

    def __len__(self):
        return len(self.timestamps)

    def speeds(self):
        v = np.diff(self.points, axis=0) / np.diff(self.timestamps)[:, None]
        return np.linalg.norm(v, axis=1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            if self.header:
                fh.write(self.header.rstrip("\n") + "\n")
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "z", "residual", "valid_flag"])
            for t, p, r, ok in zip(self.timestamps, self.points, self.residuals, self.valid):
                w.writerow([f"{t:.6f}", f"{p[0]:.9f}", f"{p[1]:.9f}", f"{p[2]:.9f}",
                            f"{r:.6e}", int(ok)])

    @classmethod
    def from_csv(cls, path):
        header = ""
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    header += line
                elif line.startswith("t,"):
                    continue
                elif line.strip():
                    rows.append([float(v) for v in line.split(",")])
        a = np.array(rows).reshape(-1, 6)
        return cls(a[:, 0], a[:, 1:4], a[:, 4], a[:, 5].astype(bool), header=header.strip())


def _fill_gaps(points, ok, max_gap=MAX_GAP):
    """Linear interpolation across runs of at most ``max_gap`` invalid frames."""
    pts = points.copy()
    bad = ~ok
    k = 0
    n = len(ok)
    while k < n:
        if not bad[k]:
            k += 1
            continue
        e = k
        while e < n and bad[e]:
            e += 1
        if k > 0 and e < n and e - k <= max_gap:
            a, b = pts[k - 1], pts[e]
            f = (np.arange(k, e) - (k - 1)) / (e - (k - 1))
            pts[k:e] = a + f[:, None] * (b - a)
        else:
            pts[k:e] = np.nan
        k = e
    return pts


def track_trajectory(fix_position, distances, geometry, timestamps, frame_rate=1.0 / 3e-3,
                     header="", fix_frame=0):
    """Chain per-frame multilateration from the fix frame outward."""
    d = np.asarray(distances, dtype=float)
    n = d.shape[1]
    pts = np.full((n, 3), np.nan)
    res = np.full(n, np.nan)
    ok = np.zeros(n, dtype=bool)

    def solve(order, seed):
        for k in order:
            try:
                p, r, good = multilaterate(d[:, k], geometry, seed)
            except InsufficientData:
                continue
            if good:
                pts[k], res[k], ok[k] = p, r, True
                seed = p

    p0 = np.asarray(fix_position, dtype=float)
    solve(range(fix_frame, n), p0)
    solve(range(fix_frame - 1, -1, -1), p0)
    filled = _fill_gaps(pts, ok)
    return Trajectory3D(np.asarray(timestamps, dtype=float), filled, res, ok, frame_rate, header)


def position_errors(traj, truth):
    e = np.linalg.norm(traj.points - np.asarray(truth), axis=1)
    return e[np.isfinite(e)]
