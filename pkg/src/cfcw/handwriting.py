"""From a 3D pen trajectory to flat ink.

The pen slows down at the ends of segments, so local minima of the speed
mark segment boundaries.  Segments that leave the local writing plane are pen
lifts.  The surviving strokes lie on a (possibly curved) virtual surface that
is unrolled to 2D by Isomap: geodesic distances on a k-NN graph over samples
of the fitted surface, classical MDS, then a short stress-majorisation pass
on the local edge lengths.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks, peak_widths
from scipy.sparse import coo_matrix, diags
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .errors import (DegenerateCloud, DisconnectedGraph, EmptyInk, InsufficientData,
                     InvalidArgument, NoWritingDetected)

log = logging.getLogger(__name__)


@dataclass
class VelocityProfile:
    timestamps: np.ndarray
    speeds: np.ndarray
    frames: np.ndarray  # trajectory index of each speed sample


def compute_velocity(timestamps, points, smooth_window=5):
    """Central-difference speed over the interior samples, moving-average smoothed."""
    t = np.asarray(timestamps, dtype=float)
    p = np.asarray(points, dtype=float)
    if len(t) < 3:
        raise InsufficientData("need at least 3 points for a central difference")
    v = (p[2:] - p[:-2]) / (t[2:] - t[:-2])[:, None]
    s = np.linalg.norm(v, axis=1)
    if smooth_window > 1:
        s = uniform_filter1d(s, size=int(smooth_window), mode="nearest")
    return VelocityProfile(t[1:-1], s, np.arange(1, len(t) - 1))


@dataclass
class Cluster:
    point: np.ndarray
    span: tuple  # trajectory frames [start, stop)
    mean_speed: float
    min_frame: int = None  # slowest frame; segments meet here

    @property
    def centre_frame(self):
        return 0.5 * (self.span[0] + self.span[1] - 1)


@dataclass
class ClusterSet:
    clusters: list

    def __len__(self):
        return len(self.clusters)

    def __iter__(self):
        return iter(self.clusters)

    @property
    def points(self):
        return np.array([c.point for c in self.clusters]).reshape(-1, 3)

    @property
    def spans(self):
        return [c.span for c in self.clusters]


def detect_clusters(profile, points, min_prominence=0.5, rel_height=0.5):
    """Low-speed clusters at prominent local minima of the speed.

    A minimum must stand ``min_prominence`` x median speed below its
    surroundings.  The cluster covers the frames within ``rel_height`` of the
    minimum's prominence; its point is the centroid of those frames.  The
    series is padded with its maximum so a resting start or end also counts.
    """
    if min_prominence <= 0:
        raise InvalidArgument("min_prominence must be > 0")
    s = profile.speeds
    pts = np.asarray(points, dtype=float)
    med = float(np.median(s))
    if med <= 0:
        raise NoWritingDetected("pen never moves")
    top = s.max()
    padded = np.r_[top, s, top]
    peaks, props = find_peaks(-padded, prominence=min_prominence * med)
    if len(peaks) == 0:
        raise NoWritingDetected("no speed minima with the required prominence")
    _, _, left, right = peak_widths(-padded, peaks, rel_height=rel_height,
                                    prominence_data=(props["prominences"], props["left_bases"],
                                                     props["right_bases"]))
    out = []
    last_end = 0
    for pk, lo, hi in zip(peaks, left, right):
        a = max(int(np.floor(lo)) - 1, 0)
        b = min(int(np.ceil(hi)) - 1, len(s) - 1)
        a, b = max(a, 0), max(b, a)
        fa = int(profile.frames[a])
        fb = int(profile.frames[b]) + 1
        if fa == 1:
            fa = 0  # include the first sample of a resting start
        if fb == len(pts) - 1:
            fb = len(pts)
        fa = max(fa, last_end)
        if fb <= fa:
            continue
        # padded index pk is speed index pk - 1
        fmin = min(max(int(profile.frames[pk - 1]), fa), fb - 1)
        mean_speed = float(s[max(fa - 1, 0):max(fb - 1, 1)].mean())
        out.append(Cluster(pts[fa:fb].mean(axis=0), (fa, fb), mean_speed, fmin))
        last_end = fb
    return ClusterSet(out)


@dataclass
class SurfaceModel:
    origin: np.ndarray
    axes: np.ndarray  # rows: x', y', normal
    coefficients: np.ndarray  # 10 terms, see _design
    residual: float  # rms orthogonal misfit of the fitted points

    def to_local(self, points):
        return (np.asarray(points) - self.origin) @ self.axes.T

    def to_world(self, local):
        return np.asarray(local) @ self.axes + self.origin

    def height(self, xy):
        return _design(np.atleast_2d(xy)) @ self.coefficients

    def surface_points(self, xy):
        xy = np.atleast_2d(xy)
        return self.to_world(np.column_stack([xy, self.height(xy)]))

    def distance(self, points):
        """Signed offset along the local normal (exact for the plane part)."""
        loc = self.to_local(points)
        return loc[:, 2] - self.height(loc[:, :2])

    def project(self, points):
        loc = self.to_local(points)
        return self.surface_points(loc[:, :2])


def _design(xy):
    x, y = xy[:, 0], xy[:, 1]
    return np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y,
                            x ** 3, x * x * y, x * y * y, y ** 3])


def _principal_frame(points, reference=None):
    c = points.mean(axis=0)
    _, sv, vt = np.linalg.svd(points - c, full_matrices=False)
    axes = vt.copy()
    # normal away from the array (origin) unless a reference direction is given
    away = c - (np.zeros(3) if reference is None else np.asarray(reference))
    if np.dot(axes[2], away) < 0:
        axes[2] = -axes[2]
    axes[1] = np.cross(axes[2], axes[0])
    return c, axes, sv


def fit_writing_surface(points, ridge=1e-6, min_span=0.02, check_span=True, reference=None):
    """Third-order polynomial height field in the principal frame of ``points``.

    ``ridge`` damps the non-planar terms (relative to the squared span) so
    that small clouds degrade gracefully towards a plane.
    """
    p = np.asarray(points, dtype=float)
    if len(p) < 3:
        raise DegenerateCloud("need at least 3 points")
    c, axes, sv = _principal_frame(p, reference)
    if sv[1] < 1e-9 * max(sv[0], 1e-300):
        raise DegenerateCloud("points are collinear")
    loc = (p - c) @ axes.T
    span = np.ptp(loc[:, :2], axis=0)
    if check_span and (len(p) < 10 or np.any(span < min_span)):
        raise DegenerateCloud(f"need >= 10 points spanning {min_span} m in two directions")
    a = _design(loc[:, :2])
    scale = max(span.max(), 1e-9)
    # column scaling keeps the normal equations well conditioned
    deg = np.array([0, 1, 1, 2, 2, 2, 3, 3, 3, 3])
    col = scale ** deg
    a_s = a / col
    reg = np.where(deg > 1, ridge, 0.0) * len(p)
    coef_s = np.linalg.solve(a_s.T @ a_s + np.diag(reg), a_s.T @ loc[:, 2])
    coef = coef_s / col
    res = loc[:, 2] - a @ coef
    return SurfaceModel(c, axes, coef, float(np.sqrt(np.mean(res ** 2))))


def prune_spurious_clusters(clusters, k_mad=3.0, floor=5e-3, reference=None):
    """Drop clusters far off the surface through the others.

    Iteratively fits a regularised cubic surface through the clusters and
    removes the worst one while its offset exceeds ``k_mad`` scaled MADs and
    the absolute ``floor``.
    """
    cs = list(clusters)
    if len(cs) < 4:
        log.warning("only %d clusters; surface pruning skipped", len(cs))
        return ClusterSet(cs)
    while len(cs) >= 4:
        pts = np.array([c.point for c in cs])
        try:
            surf = fit_writing_surface(pts, ridge=1e-2, check_span=False, reference=reference)
        except DegenerateCloud:
            break
        r = surf.distance(pts)
        dev = np.abs(r - np.median(r))
        mad = 1.4826 * np.median(dev)
        worst = int(np.argmax(dev))
        if dev[worst] > max(k_mad * mad, floor):
            # leave-one-out check: the suspect must also be off the surface of the rest
            rest = np.delete(pts, worst, axis=0)
            try:
                s2 = fit_writing_surface(rest, ridge=1e-2, check_span=False, reference=reference)
                off = abs(s2.distance(pts[worst:worst + 1])[0])
            except DegenerateCloud:
                off = dev[worst]
            if off > floor:
                del cs[worst]
                continue
        break
    return ClusterSet(cs)


@dataclass
class Segment:
    span: tuple  # trajectory frames [start, stop)
    deviation: float  # mean |distance| to the local plane
    is_lift: bool = False


def _plane(a, b, c):
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n)
    return (n / nn, a) if nn > 0 else (None, a)


def _well_conditioned(a, b, c, min_angle_deg=10.0):
    sides = [b - a, c - b, a - c]
    ls = [np.linalg.norm(s) for s in sides]
    if min(ls) < 1e-6:
        return False
    ang = []
    for k in range(3):
        u, v = -sides[k - 1], sides[k]
        ang.append(np.degrees(np.arccos(np.clip(np.dot(u, v) / (ls[k - 1] * ls[k]), -1, 1))))
    return min(ang) >= min_angle_deg


def remove_pen_lifts(points, clusters, threshold_factor=2.0, floor=3e-3, min_angle=10.0):
    """Classify the segments between consecutive clusters as stroke or lift.

    Each segment is compared with the plane through its two end clusters and
    the temporally nearest other cluster that forms a well-shaped triangle.
    A segment whose mean distance from that plane exceeds
    ``threshold_factor`` x the median over all segments (and ``floor``) is a
    lift.
    """
    pts = np.asarray(points, dtype=float)
    cl = list(clusters)
    if len(cl) < 3:
        raise InsufficientData("need at least 3 clusters")
    cpts = np.array([c.point for c in cl])
    segs = []
    fallback = None
    for k in range(len(cl) - 1):
        # segments meet at the slowest frame of each cluster
        a, b = cl[k].min_frame, cl[k + 1].min_frame + 1
        if b - a < 2:
            continue
        order = sorted((i for i in range(len(cl)) if i not in (k, k + 1)),
                       key=lambda i: min(abs(i - k), abs(i - k - 1)))
        normal = None
        for i in order:
            if _well_conditioned(cpts[k], cpts[k + 1], cpts[i], min_angle):
                normal, base = _plane(cpts[k], cpts[k + 1], cpts[i])
                break
        if normal is None:
            if fallback is None:
                fallback = fit_writing_surface(cpts, ridge=1.0, check_span=False)
            dev = float(np.mean(np.abs(fallback.distance(pts[a:b]))))
        else:
            dev = float(np.mean(np.abs((pts[a:b] - base) @ normal)))
        segs.append(Segment((a, b), dev))
    if not segs:
        raise EmptyInk("no segments between clusters")
    devs = np.array([s.deviation for s in segs])
    thr = max(threshold_factor * float(np.median(devs)), floor)
    for s in segs:
        s.is_lift = s.deviation > thr
    if all(s.is_lift for s in segs):
        raise EmptyInk("every segment classified as a pen lift")
    return segs, thr


def strokes_from_segments(n_points, clusters, segments):
    """Frame index runs that form ink strokes (lift segments become breaks).

    Frames from the start of the first cluster to the end of the last one
    are ink unless they fall inside a lift segment; the frame where a stroke
    and a lift meet stays with the stroke.
    """
    cl = list(clusters)
    keep = np.zeros(n_points, dtype=bool)
    keep[cl[0].span[0]:cl[-1].span[1]] = True
    for s in segments:
        if s.is_lift:
            keep[s.span[0]:s.span[1]] = False
    for s in segments:
        if not s.is_lift:
            keep[s.span[0]:s.span[1]] = True
    runs = []
    starts = [s.span[0] for s in segments if s.is_lift]
    k = 0
    while k < n_points:
        if not keep[k]:
            k += 1
            continue
        e = k + 1
        # a lift starting at e - 1 also ends the run even when that frame is kept
        while e < n_points and keep[e] and (e - 1) not in starts:
            e += 1
        runs.append(np.arange(k, e))
        k = e
    return runs, keep


@dataclass
class Ink2D:
    strokes: list  # (n_k, 2) arrays, metres
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.strokes = [np.asarray(s, dtype=float).reshape(-1, 2) for s in self.strokes]

    @property
    def points(self):
        return np.vstack(self.strokes) if self.strokes else np.empty((0, 2))

    @property
    def bbox(self):
        p = self.points
        return p.min(axis=0), p.max(axis=0)

    def extent(self):
        lo, hi = self.bbox
        return hi - lo

    def to_svg(self, path, margin_mm=5.0, stroke_mm=0.4):
        lo, hi = self.bbox
        w, h = (hi - lo) * 1e3 + 2 * margin_mm
        lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.2f}mm" height="{h:.2f}mm" '
                 f'viewBox="0 0 {w:.3f} {h:.3f}">']
        for s in self.strokes:
            xy = (s - lo) * 1e3 + margin_mm
            y = h - xy[:, 1]  # SVG y runs downwards
            d = " ".join(f"{'M' if k == 0 else 'L'}{x:.3f},{yy:.3f}"
                         for k, (x, yy) in enumerate(zip(xy[:, 0], y)))
            lines.append(f'<path d="{d}" fill="none" stroke="black" stroke-width="{stroke_mm}" '
                         f'stroke-linecap="round" stroke-linejoin="round"/>')
        lines.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stroke", "x", "y"])
            for k, s in enumerate(self.strokes):
                for x, y in s:
                    w.writerow([k, f"{x:.9f}", f"{y:.9f}"])


def knn_graph(points, k):
    tree = cKDTree(points)
    d, idx = tree.query(points, k=k + 1)
    n = len(points)
    rows = np.repeat(np.arange(n), k)
    cols = idx[:, 1:].ravel()
    w = d[:, 1:].ravel()
    g = coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    return g.maximum(g.T)


def classical_mds(dist, dim=2):
    d2 = np.asarray(dist) ** 2
    n = len(d2)
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ d2 @ j
    vals, vecs = np.linalg.eigh(b)
    top = np.argsort(vals)[::-1][:dim]
    return vecs[:, top] * np.sqrt(np.maximum(vals[top], 0))


def stress(embedded, target):
    """Normalised residual between the embedding's distances and ``target``."""
    e = np.asarray(embedded)
    de = np.linalg.norm(e[:, None] - e[None], axis=-1)
    t = np.asarray(target)
    iu = np.triu_indices(len(e), 1)
    return float(np.sqrt(np.sum((de[iu] - t[iu]) ** 2) / np.sum(t[iu] ** 2)))


def _refine_local(y, graph, iterations=60, tol=1e-10):
    """Stress majorisation (SMACOF) restricted to the graph's edges.

    Each Guttman update solves ``L y = B(y) y`` with the edge Laplacian ``L``;
    one node is pinned to remove the translation freedom.
    """
    g = graph.tocoo()
    mask = g.row < g.col
    i, j, d = g.row[mask], g.col[mask], g.data[mask]
    n = len(y)
    ones = np.ones(len(i))
    adj = coo_matrix((ones, (i, j)), shape=(n, n))
    adj = (adj + adj.T).tocsc()
    lap = (diags(np.asarray(adj.sum(axis=1)).ravel()) - adj).tocsc()
    solve = splu(lap[1:, 1:].tocsc()).solve
    y = y - y[0]
    prev = np.inf
    for _ in range(iterations):
        diff = y[i] - y[j]
        cur = np.linalg.norm(diff, axis=1)
        ratio = np.where(cur > 0, d / np.maximum(cur, 1e-15), 0.0)
        bt = diff * ratio[:, None]
        rhs = np.zeros_like(y)
        np.add.at(rhs, i, bt)
        np.add.at(rhs, j, -bt)
        y = np.vstack([np.zeros((1, y.shape[1])), solve(rhs[1:])])
        s = float(np.sum((np.linalg.norm(y[i] - y[j], axis=1) - d) ** 2))
        if prev - s < tol * max(prev, 1e-30):
            break
        prev = s
    return y


def isomap_embed(points, k_neighbors=8, k_max=12, refine=True):
    """2D coordinates preserving k-NN graph geodesics, escalating k if needed."""
    p = np.asarray(points, dtype=float)
    k = k_neighbors
    while True:
        g = knn_graph(p, min(k, len(p) - 1))
        n_comp, lab = connected_components(g, directed=False)
        if n_comp == 1:
            break
        if k >= k_max:
            raise DisconnectedGraph(np.bincount(lab).tolist(), k)
        k += 2
    geo = shortest_path(g, directed=False)
    y = classical_mds(geo)
    if refine:
        y = _refine_local(y, g)
    return y, geo, k


def _orient(y2, reference_xy):
    """Rigid transform of ``y2`` that best matches ``reference_xy`` (rotation only)."""
    a = y2 - y2.mean(axis=0)
    b = reference_xy - reference_xy.mean(axis=0)
    u, _, vt = np.linalg.svd(a.T @ b)
    r = u @ vt
    if np.linalg.det(r) < 0:
        # the embedding is mirrored relative to the surface frame
        a = a * np.array([1.0, -1.0])
        u, _, vt = np.linalg.svd(a.T @ b)
        r = u @ vt
    return a @ r


def flatten_surface(surface, xy_points, k_neighbors=8, grid=28, margin=0.1):
    """Isomap unrolling of ``surface`` sampled on a grid covering ``xy_points``.

    Returns 2D coordinates for ``xy_points`` (local-frame x', y'), aligned
    with the local frame so that orientation and handedness are preserved.
    """
    xy = np.asarray(xy_points, dtype=float)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    pad = margin * (hi - lo) + 1e-4
    lo, hi = lo - pad, hi + pad
    gx = np.linspace(lo[0], hi[0], grid)
    gy = np.linspace(lo[1], hi[1], grid)
    gxx, gyy = np.meshgrid(gx, gy, indexing="ij")
    g2 = np.column_stack([gxx.ravel(), gyy.ravel()])
    g3 = surface.surface_points(g2)
    emb, _, _ = isomap_embed(g3, k_neighbors)
    emb = _orient(emb, g2)
    # bilinear interpolation of the embedding at the query points
    fx = np.clip((xy[:, 0] - lo[0]) / (hi[0] - lo[0]) * (grid - 1), 0, grid - 1 - 1e-9)
    fy = np.clip((xy[:, 1] - lo[1]) / (hi[1] - lo[1]) * (grid - 1), 0, grid - 1 - 1e-9)
    ix, iy = fx.astype(int), fy.astype(int)
    tx, ty = fx - ix, fy - iy
    e = emb.reshape(grid, grid, 2)
    out = ((1 - tx)[:, None] * (1 - ty)[:, None] * e[ix, iy]
           + tx[:, None] * (1 - ty)[:, None] * e[ix + 1, iy]
           + (1 - tx)[:, None] * ty[:, None] * e[ix, iy + 1]
           + tx[:, None] * ty[:, None] * e[ix + 1, iy + 1])
    return out


def writing_direction_rotation(xy, order):
    """Rotation that puts the writing direction along +x.

    The direction is the regression of position on sample order, i.e. where
    the pen drifts over time.  Unlike the principal axis it stays horizontal
    for words taller than they are wide.
    """
    c = xy - xy.mean(axis=0)
    o = np.asarray(order, dtype=float)
    ax = c.T @ (o - o.mean())
    n = np.linalg.norm(ax)
    if n == 0:
        _, _, vt = np.linalg.svd(c, full_matrices=False)
        ax, n = vt[0], 1.0
    ax = ax / n
    return np.array([[ax[0], ax[1]], [-ax[1], ax[0]]])


def flatten_isomap(points, strokes, k_neighbors=8, reference=None, grid=28):
    """Fit the writing surface to the stroke samples and unroll it.

    ``strokes`` is a list of trajectory index arrays.  Returns the Ink2D and
    the surface model.
    """
    pts = np.asarray(points, dtype=float)
    idx = np.concatenate(strokes)
    surf = fit_writing_surface(pts[idx], reference=reference)
    xy = surf.to_local(pts[idx])[:, :2]
    flat = flatten_surface(surf, xy, k_neighbors, grid)
    rot = writing_direction_rotation(flat, idx)
    flat = (flat - flat.mean(axis=0)) @ rot.T
    out, s = [], 0
    for st in strokes:
        out.append(flat[s:s + len(st)])
        s += len(st)
    return Ink2D(out, {"surface_residual": surf.residual}), surf


def naive_projection(points, strokes):
    """Baseline: drop z and keep (x, y), oriented like :func:`flatten_isomap`."""
    pts = np.asarray(points, dtype=float)
    idx = np.concatenate(strokes)
    xy = pts[idx, :2]
    rot = writing_direction_rotation(xy, idx)
    xy = (xy - xy.mean(axis=0)) @ rot.T
    out, s = [], 0
    for st in strokes:
        out.append(xy[s:s + len(st)])
        s += len(st)
    return Ink2D(out)


@dataclass
class InkResult:
    ink: Ink2D
    clusters: ClusterSet
    pruned: ClusterSet
    segments: list
    lift_threshold: float
    kept: np.ndarray  # bool per trajectory frame
    strokes: list
    surface: SurfaceModel
    profile: VelocityProfile


def recover_ink(timestamps, points, smooth_window=5, min_prominence=0.5, k_neighbors=8,
                k_mad=3.0, reference=None):
    """Velocity clusters, pen-lift removal and flattening in one call."""
    pts = np.asarray(points, dtype=float)
    ok = np.all(np.isfinite(pts), axis=1)
    if not ok.all():
        # fill short gaps so the speed profile stays defined
        good = np.flatnonzero(ok)
        if len(good) < 3:
            raise InsufficientData("fewer than 3 valid points")
        pts = np.stack([np.interp(np.arange(len(pts)), good, pts[good, k]) for k in range(3)], 1)
    prof = compute_velocity(timestamps, pts, smooth_window)
    cl = detect_clusters(prof, pts, min_prominence)
    pr = prune_spurious_clusters(cl, k_mad, reference=reference)
    segs, thr = remove_pen_lifts(pts, pr)
    runs, keep = strokes_from_segments(len(pts), pr, segs)
    if not runs:
        raise EmptyInk("no ink left after pen-lift removal")
    ink, surf = flatten_isomap(pts, runs, k_neighbors, reference)
    return InkResult(ink, cl, pr, segs, thr, keep, runs, surf, prof)
