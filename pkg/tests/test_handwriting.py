import numpy as np
import pytest

from cfcw.errors import (DegenerateCloud, DisconnectedGraph, InsufficientData, InvalidArgument,
                         NoWritingDetected)
from cfcw.handwriting import (Cluster, ClusterSet, compute_velocity, detect_clusters,
                              fit_writing_surface, flatten_isomap, isomap_embed, naive_projection,
                              prune_spurious_clusters, recover_ink, remove_pen_lifts, stress)
from cfcw.pipeline import handwriting_metrics
from cfcw.words import CORPUS, LIFT, SyntheticWordSpec, generate_word

FRAME = 3e-3


def tracked(spec, noise=None):
    """The word as the tracker would see it: 333 Hz samples of the pen path."""
    w = generate_word(spec, 1000.0)
    ts = np.arange(0, w.timestamps[-1], FRAME)
    pos, labels, ink, _ = w.resample(ts)
    if noise is not None:
        pos = pos + noise
    return w, ts, pos, labels


def test_uniform_speed():
    t = np.arange(100) * FRAME
    p = np.outer(0.3 * t, [0.6, 0.8, 0.0])
    prof = compute_velocity(t, p)
    assert np.allclose(prof.speeds, 0.3, atol=1e-6)
    with pytest.raises(InsufficientData):
        compute_velocity(t[:1], p[:1])


def test_speed_minima_at_programmed_stops():
    w, ts, pos, _ = tracked(SyntheticWordSpec(word="fit"))
    cl = detect_clusters(compute_velocity(ts, pos), pos)
    # one extra cluster for the resting start
    assert len(cl) == len(w.stop_times) + 1
    for s in w.stop_times[:-1]:  # the last stop runs into the final rest
        k = int(np.argmin([abs(ts[c.min_frame] - s) for c in cl]))
        assert abs(ts[cl.clusters[k].min_frame] - s) <= 2 * FRAME + 1e-3
    lo, hi = cl.clusters[-1].span
    assert ts[lo] - 2 * FRAME <= w.stop_times[-1] <= ts[hi - 1]


def test_circle_has_no_clusters():
    t = np.arange(600) * FRAME
    a = 2 * np.pi * t / t[-1]
    p = np.stack([0.04 * np.cos(a), 0.04 * np.sin(a), np.full_like(a, 0.25)], axis=1)
    with pytest.raises(NoWritingDetected):
        detect_clusters(compute_velocity(t, p), p)
    with pytest.raises(InvalidArgument):
        detect_clusters(compute_velocity(t, p), p, min_prominence=0.0)


def _clusters(points):
    return ClusterSet([Cluster(np.asarray(p, float), (k, k + 1), 0.0, k) for k, p in enumerate(points)])


def test_prune_spurious_cluster(rng):
    xy = rng.uniform(-0.05, 0.05, (9, 2))
    pts = np.column_stack([xy, 0.25 + 0.2 * xy[:, 0]])
    assert len(prune_spurious_clusters(_clusters(pts))) == 9
    bad = pts.copy()
    bad[4, 2] += 0.03
    kept = prune_spurious_clusters(_clusters(bad))
    assert len(kept) == 8
    assert not any(np.allclose(c.point, bad[4]) for c in kept)
    assert len(prune_spurious_clusters(_clusters(bad[:3]))) == 3


def test_generator_spurious_stop_is_pruned():
    w, ts, pos, _ = tracked(SyntheticWordSpec(word="fit", spurious_stops=1))
    cl = detect_clusters(compute_velocity(ts, pos), pos)
    pr = prune_spurious_clusters(cl)
    assert len(pr) == len(cl) - 1
    spur = w.stop_times[~w.stop_on_surface][0]
    gone = [c for c in cl if all(c is not q for q in pr)][0]
    assert ts[gone.span[0]] - FRAME <= spur <= ts[gone.span[1] - 1] + FRAME


def test_fit_lifts_removed():
    w, ts, pos, labels = tracked(SyntheticWordSpec(word="fit"))
    assert w.n_lifts == 2
    res = recover_ink(ts, pos)
    lifts = [s for s in res.segments if s.is_lift]
    assert len(lifts) == 2
    m = handwriting_metrics(res, w, ts)
    assert m["lift_removed_fraction"] >= 0.97
    assert m["stroke_removed_fraction"] == 0.0


def test_word_without_lifts_keeps_everything():
    w, ts, pos, labels = tracked(SyntheticWordSpec(word="no"))
    assert w.n_lifts == 0
    pr = prune_spurious_clusters(detect_clusters(compute_velocity(ts, pos), pos))
    segs, _ = remove_pen_lifts(pos, pr)
    assert not any(s.is_lift for s in segs)


def test_corpus_lift_recall_noiseless():
    rec = []
    for word in CORPUS:
        w, ts, pos, _ = tracked(SyntheticWordSpec(word=word))
        rec.append(handwriting_metrics(recover_ink(ts, pos), w, ts)["lift_removed_fraction"])
    assert np.nanmedian(rec) >= 0.97


def test_surface_fit_plane_and_quadratic(rng):
    xy = rng.uniform(-0.05, 0.05, (200, 2))
    plane = np.column_stack([xy, 0.3 + 0.1 * xy[:, 0] - 0.2 * xy[:, 1]])
    s = fit_writing_surface(plane)
    assert np.all(np.abs(s.coefficients[3:]) < 1e-9 * np.array([1e2] * 3 + [1e4] * 4))
    assert s.residual < 1e-12
    quad = np.column_stack([xy, 0.3 + 5 * xy[:, 0] ** 2])
    assert fit_writing_surface(quad, ridge=0.0).residual < 1e-6
    line = np.outer(np.linspace(0, 0.1, 20), [1, 1, 0])
    with pytest.raises(DegenerateCloud):
        fit_writing_surface(line)


def _grid_points(n=25, size=0.08):
    u = np.linspace(0, size, n)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    return np.column_stack([uu.ravel(), vv.ravel()])


def test_flat_input_is_rigid():
    uv = _grid_points()
    pts = np.column_stack([uv, np.full(len(uv), 0.25)])
    y, _, _ = isomap_embed(pts)
    d0 = np.linalg.norm(uv[:, None] - uv[None], axis=-1)
    assert stress(y, d0) < 1e-3


def test_cylinder_unrolls():
    r = 0.10
    uv = _grid_points(n=30, size=r * np.pi / 2)  # 90 degree arc
    a = uv[:, 0] / r
    pts = np.column_stack([r * np.sin(a), uv[:, 1], 0.3 - r * (1 - np.cos(a))])
    y, _, _ = isomap_embed(pts)
    d0 = np.linalg.norm(uv[:, None] - uv[None], axis=-1)
    de = np.linalg.norm(y[:, None] - y[None], axis=-1)
    far = d0 > 0.02
    assert np.median(np.abs(de[far] / d0[far] - 1)) < 0.02
    assert stress(y, d0) < 0.02


def test_disconnected_graph_reports_components():
    a = np.column_stack([_grid_points(6, 0.01), np.zeros(36)])
    b = a + [0.5, 0.0, 0.0]
    with pytest.raises(DisconnectedGraph) as e:
        isomap_embed(np.vstack([a, b]), k_neighbors=4, k_max=6)
    assert "36" in str(e.value)


def _procrustes_extent(flat, truth):
    """Vertical extent of ``flat`` after the best rotation onto ``truth``."""
    a, b = flat - flat.mean(0), truth - truth.mean(0)
    u, _, vt = np.linalg.svd(a.T @ b)
    return np.ptp((a @ u @ vt)[:, 1]), np.ptp(b[:, 1])


def test_tilted_word_naive_vs_isomap():
    w, ts, pos, labels = tracked(SyntheticWordSpec(word="fit", pose="slant-beside"))
    res = recover_ink(ts, pos)
    idx = np.concatenate(res.strokes)
    _, _, ink_true, _ = w.resample(ts)
    got, want = _procrustes_extent(res.ink.points, ink_true[idx])
    assert abs(got / want - 1) < 0.02
    naive = naive_projection(pos, res.strokes).points
    got_n, _ = _procrustes_extent(naive, ink_true[idx])
    assert abs(got_n / want - 1) >= 0.25
