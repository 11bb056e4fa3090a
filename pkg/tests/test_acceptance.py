"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (visible
without ``-s``) and then asserts the same condition.
"""
import copy
import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

from cfcw import config as cf
from cfcw import sim, tracking
from cfcw.handwriting import naive_projection, recover_ink, stress
from cfcw.localize import multilaterate
from cfcw.pipeline import handwriting_metrics, run_pipeline
from cfcw.startpoint import (brute_force_start_point, implied_wraps, pairwise_phase_differences,
                             solve_start_point, tdoa_objective)
from cfcw.tx import build_fixed_schedule
from cfcw.words import CORPUS, SyntheticWordSpec, constant_speed_radial, generate_word, tracking_noise

C = 343.0
TRACK = ("simulate", "demod", "startpoint", "localize")


@pytest.fixture
def report(capsys):
    def emit(n, ok, text):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
        return ok
    return emit


def sweep(name, seeds, stages=TRACK, metric="ranging_median_error_m", errors="ranging_errors"):
    """Run a bundled config over seeds; returns per-seed metric and pooled |errors|."""
    base = cf.load_config(cf.bundled(name))
    per, pooled = [], []
    for s in seeds:
        res = run_pipeline(base.with_seed(s), Path("/tmp/cfcw-acceptance") / name, stages=stages,
                           plots=False)
        per.append(res.metrics[metric])
        e = getattr(res, errors)
        if e is not None:
            e = np.abs(np.asarray(e, dtype=float).ravel())
            pooled.append(e[np.isfinite(e)])
    return np.array(per), (np.concatenate(pooled) if pooled else np.array([]))


def test_1_downconversion(report):
    t0 = time.perf_counter()
    cfg = cf.load_config(cf.bundled("downconversion-45k"))
    res = run_pipeline(cfg, Path("/tmp/cfcw-acceptance/dc"), stages=("simulate",))
    x = res.capture.channels[0]
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    f = np.fft.rfftfreq(len(x), 1 / res.capture.sample_rate)
    peak = f[1 + np.argmax(spec[1:])]
    dt = time.perf_counter() - t0
    ok = abs(peak - 7000.0) <= f[1] and dt < 5.0
    assert report(1, ok, f"peak {peak:.1f} Hz (bin {f[1]:.2f} Hz), {dt:.2f} s")


def test_2_clean_ranging(report):
    seeds = range(20)
    t0 = time.perf_counter()
    per, pooled = sweep("clean-ranging-40k", seeds)
    dt_clean = time.perf_counter() - t0
    t0 = time.perf_counter()
    per_n, pooled_n = sweep("clean-ranging-40k-noise40", seeds)
    dt_noise = time.perf_counter() - t0
    med, med_n = np.median(pooled), np.median(pooled_n)
    ok = med <= 10e-6 and med_n <= 320e-6 and dt_clean < 60 and dt_noise < 60
    assert report(2, ok, f"clean median {1e6 * med:.1f} um (seed medians {1e6 * per.min():.1f}-"
                  f"{1e6 * per.max():.1f}), 40 dB median {1e6 * med_n:.1f} um; "
                  f"runtime {dt_clean:.0f} s / {dt_noise:.0f} s for 20 seeds")


def test_3_frequency_ordering(report):
    med = {}
    for f in (20, 40, 60, 80):
        _, pooled = sweep(f"ranging-{f}k-noise20", range(20))
        med[f] = np.median(pooled)
    ok = med[80] <= med[60] <= med[40] <= med[20]
    assert report(3, ok, "medians " + ", ".join(f"{f} kHz {1e6 * m:.1f} um" for f, m in med.items()))


def test_4_hopping_rejects_multipath(report):
    t0 = time.perf_counter()
    seeds = range(4)
    hop, _ = sweep("wall-behind-hop", seeds, metric="median_3d_error_m", errors="errors_3d")
    nohop, _ = sweep("wall-behind-no-hop", seeds, metric="median_3d_error_m", errors="errors_3d")
    dt = time.perf_counter() - t0
    ratio = np.median(nohop) / np.median(hop)
    ok = ratio >= 5 and dt < 120
    assert report(4, ok, f"median 3D error hop {1e3 * np.median(hop):.2f} mm, no-hop "
                  f"{1e3 * np.median(nohop):.1f} mm, ratio {ratio:.0f}x; {dt:.0f} s")


def test_5_start_point_vs_brute_force(report):
    rng = np.random.default_rng(2024)
    array = sim.default_array()
    lam = C / 40e3
    hits = 0
    global_min = 0
    for k in range(20):
        mics = [0] + sorted(rng.choice(np.arange(1, 7), 3, replace=False).tolist())
        geo = array.subset(mics)
        p = np.array([rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12), rng.uniform(0.12, 0.3)])
        d = np.linalg.norm(p - geo.mic_positions, axis=1)
        ph = pairwise_phase_differences(np.angle(np.exp(2j * np.pi * d / lam)), geo, lam)
        oracle = brute_force_start_point(ph)
        mins = [(q, implied_wraps(q, ph)) for q in [oracle.position] + list(oracle.alternatives)]
        fix = solve_start_point(ph, seed=k)
        if any(np.linalg.norm(fix.position - q) < 1e-3 and np.array_equal(fix.wraps, n)
               for q, n in mins):
            hits += 1
        truth_r = tdoa_objective(p, implied_wraps(p, ph), ph)
        if truth_r <= oracle.residual + 1e-12 and any(np.linalg.norm(p - q) < 1e-6 for q, _ in mins):
            global_min += 1
    ok = hits >= 19 and global_min == 20
    assert report(5, ok, f"GA matches brute force on {hits}/20, truth is a global minimiser "
                  f"on {global_min}/20")


def _unwrap_run(v, aided):
    g = sim.default_array()
    path, _ = constant_speed_radial([0.0, 0.03, 0.15], v, 0.16, ramp=0.05)
    sch = build_fixed_schedule(7e3, 40e3, 3e-3, 0.15)
    cap = sim.simulate(sim.Scene(geometry=g), path, sch, seed=0)
    setup = tracking.TrackingSetup(g, sch, velocity_aided=aided)
    first = tracking.first_pass(cap, setup)
    tr = tracking.second_pass(cap, setup, first, path.positions[0], 0)
    d = np.linalg.norm(path.position_at(tr.timestamps) - g.mic_positions[0], axis=1)
    return tr.distance_change[0, -1], d[-1] - d[0], tr.unreliable[0].any()


def test_6_unwrap_speed_ceiling(report):
    lam = C / 40e3
    est_a, true2, _ = _unwrap_run(2.0, True)
    est_c, _, _ = _unwrap_run(2.0, False)
    _, _, flagged = _unwrap_run(3.0, True)
    rel = abs(est_a - true2) / true2
    ok = rel <= 0.01 and abs(est_c - true2) >= lam / 2 and flagged
    assert report(6, ok, f"2 m/s: aided error {100 * rel:.3f}%, classic off by "
                  f"{1e3 * abs(est_c - true2):.1f} mm (lambda/2 = {1e3 * lam / 2:.2f} mm); "
                  f"3 m/s flagged unreliable: {flagged}")


def test_7_star_tracking(report):
    seeds = range(10)
    slow, _ = sweep("star-0p5", seeds, metric="median_3d_error_m", errors="errors_3d")
    fast, _ = sweep("star-1p0", seeds, metric="median_3d_error_m", errors="errors_3d")
    a, b = np.median(slow), np.median(fast)
    ok = a <= 1.4e-3 * 1.5 and b <= 2.6e-3 * 1.5
    assert report(7, ok, f"median 3D error 0.5 m/s {1e3 * a:.2f} mm (worst seed "
                  f"{1e3 * slow.max():.2f}), 1 m/s {1e3 * b:.2f} mm (worst {1e3 * fast.max():.2f})")


def test_8_multilateration_noise(report):
    rng = np.random.default_rng(8)
    g = sim.default_array()
    errs = []
    for _ in range(1000):
        p = np.array([rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12), rng.uniform(0.15, 0.3)])
        d = np.linalg.norm(p - g.mic_positions, axis=1) + rng.uniform(-50e-6, 50e-6, 7)
        q, _, _ = multilaterate(d, g, p)
        errs.append(np.linalg.norm(q - p))
    med = np.median(errs)
    assert report(8, med <= 1.4e-3, f"median {1e3 * med:.3f} mm over 1000 trials")


def _tracked(spec, seed=None):
    w = generate_word(spec, 1000.0)
    ts = np.arange(0, w.timestamps[-1], 3e-3)
    pos, _, _, _ = w.resample(ts)
    if seed is not None:
        pos = pos + tracking_noise(len(ts), seed=seed)
    return w, ts, pos


def test_9_pen_lift_removal(report):
    lift, stroke = [], []
    for k, word in enumerate(CORPUS):
        w, ts, pos = _tracked(SyntheticWordSpec(word=word), seed=k)
        m = handwriting_metrics(recover_ink(ts, pos), w, ts)
        lift.append(m["lift_removed_fraction"])
        stroke.append(m["stroke_removed_fraction"])
    lr, sr = np.nanmedian(lift), np.nanmedian(stroke)
    ok = lr >= 0.90 and sr <= 0.02
    assert report(9, ok, f"median lift removed {100 * lr:.1f}%, median stroke removed "
                  f"{100 * sr:.2f}% (worst word {100 * np.nanmax(stroke):.2f}%)")


def _vertical_extent(flat, truth):
    a, b = flat - flat.mean(0), truth - truth.mean(0)
    u, _, vt = np.linalg.svd(a.T @ b)
    return np.ptp((a @ u @ vt)[:, 1]) / np.ptp(b[:, 1])


def test_10_flattening(report):
    out = {}
    for name, spec in [("cylinder", SyntheticWordSpec(word="fit", surface="cylinder", radius=0.1)),
                       ("tilted", SyntheticWordSpec(word="fit", pose="flat-top", tilt=45.0))]:
        w, ts, pos = _tracked(spec)
        res = recover_ink(ts, pos)
        idx = np.concatenate(res.strokes)
        _, _, ink, _ = w.resample(ts)
        sel = np.linspace(0, len(idx) - 1, min(len(idx), 400)).astype(int)
        t = ink[idx[sel]]
        s = stress(res.ink.points[sel], np.linalg.norm(t[:, None] - t[None], axis=-1))
        iso = _vertical_extent(res.ink.points, ink[idx])
        naive = _vertical_extent(naive_projection(pos, res.strokes).points, ink[idx])
        out[name] = (s, iso, naive)
    cyl, tilt = out["cylinder"], out["tilted"]
    ok = (cyl[0] <= 0.02 and tilt[0] <= 0.02 and abs(tilt[2] - 1) >= 0.25
          and abs(tilt[1] - 1) <= 0.02)
    assert report(10, ok, f"stress cylinder {cyl[0]:.4f}, tilted {tilt[0]:.4f}; 45 deg vertical "
                  f"extent naive {100 * (tilt[2] - 1):+.1f}%, Isomap {100 * (tilt[1] - 1):+.2f}%")


def test_11_coexistence(report):
    cfg = cf.load_config(cf.bundled("coexistence-voice"))
    res = run_pipeline(cfg, Path("/tmp/cfcw-acceptance/coex"), plots=False)
    dv, leak = res.metrics["voice_band_delta_db"], res.metrics["leakage_ratio_db"]
    hopped = copy.deepcopy(cfg)
    hopped.schedule.hop_step = 2000.0
    hres = run_pipeline(hopped, Path("/tmp/cfcw-acceptance/coex-hop"), plots=False)
    ok = abs(dv) < 1.0 and leak <= -30
    assert report(11, ok, f"voice-band delta {dv:.3f} dB, leakage {leak:.1f} dB (fixed pair); "
                  f"info: hopped leakage {hres.metrics['leakage_ratio_db']:.1f} dB")


def test_12_determinism(report, tmp_path):
    bad = []
    names = [p.stem for p in cf.bundled_configs()]
    for name in names:
        cfg = cf.load_config(cf.bundled(name))
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        run_pipeline(cfg, a, plots=False)
        run_pipeline(cfg, b, plots=False)
        csvs = sorted(p.name for p in a.glob("*.csv"))
        _, mismatch, errors = filecmp.cmpfiles(a, b, csvs, shallow=False)
        bad += [f"{name}/{f}" for f in mismatch + errors]
    ok = not bad
    assert report(12, ok, f"{len(names)} bundled configs re-run, "
                  f"{'all CSVs identical' if ok else 'differences: ' + ', '.join(bad)}")
