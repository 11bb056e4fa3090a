"""Experiment driver: config -> simulated capture -> trajectory -> ink -> report.

Stages run in order (simulate, demod, startpoint, localize, handwriting,
coexistence, report).  A failure anywhere is re-raised as a StageError that
names the stage.  All randomness flows from the config seed through a
SeedSequence, so a rerun with the same config writes identical CSVs.
"""
import contextlib
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import demod as dm
from . import sim, tracking, words
from .coexistence import band_energy_report
from .errors import StageError
from .handwriting import recover_ink, stress
from .signal_core import CAPTURE_RATE, Medium, NonlinearityModel
from .startpoint import Workspace
from .tx import build_fixed_schedule, build_hop_schedule

log = logging.getLogger(__name__)

STAGES = ("simulate", "demod", "startpoint", "localize", "handwriting", "coexistence", "report")
MAX_STRESS_POINTS = 400


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e, getattr(e, "frame", None)) from e


@dataclass
class Truth:
    path: sim.MotionPath
    word: object = None  # SyntheticWord for word motion


@dataclass
class PipelineResult:
    config: object
    metrics: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    capture: sim.RawCapture = None
    truth: Truth = None
    tracking: object = None  # TrackingResult, or a track-only result in ranging mode
    ink: object = None
    bands: object = None
    ranging_errors: np.ndarray = None  # (n_mics, n_frames) metres
    errors_3d: np.ndarray = None


def _seeds(seed):
    """Independent streams: simulator noise, ambient sources, solver, motion jitter."""
    kids = np.random.SeedSequence(seed).spawn(4)
    return [int(k.generate_state(1)[0]) for k in kids]


def build_geometry(cfg):
    g = sim.default_array(cfg.scene.spacing, cfg.scene.secondary_distance)
    return g.subset(cfg.scene.mics) if cfg.scene.mics is not None else g


def build_motion(cfg):
    m = cfg.motion
    off = np.zeros(3)
    if m.jitter > 0:
        off = np.random.default_rng(_seeds(cfg.seed)[3]).uniform(-m.jitter, m.jitter, 3)
    start = None if m.start is None else np.asarray(m.start) + off
    center = None if m.center is None else np.asarray(m.center) + off
    if m.kind == "static":
        return Truth(sim.MotionPath.static(start, m.duration))
    if m.kind == "radial":
        return Truth(words.radial_path(start, m.distance, m.duration, m.hold))
    if m.kind == "constant-speed":
        return Truth(words.constant_speed_radial(start, m.speed, m.duration, m.ramp)[0])
    if m.kind in ("star", "circle"):
        return Truth(words.shape_path(center, m.kind, m.size, m.speed, m.lead_in))
    if m.kind == "word":
        spec = words.SyntheticWordSpec(word=m.word, size=m.size, pose=m.pose, speed=m.speed,
                                       lift_height=m.lift_height, lead_in=m.lead_in,
                                       surface=m.surface)
        w = words.generate_word(spec)
        return Truth(w.path, w)
    return Truth(load_motion_csv(m.path))


def load_motion_csv(path):
    """Path file with a ``t,x,y,z`` header (extra columns are ignored)."""
    with open(path) as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    t = np.array([float(r["t"]) for r in rows])
    p = np.array([[float(r[k]) for k in "xyz"] for r in rows])
    return sim.MotionPath(t, p)


def build_schedule(cfg, duration):
    s = cfg.schedule
    hop = s.hop_period
    n = max(int(np.floor(duration / hop + 1e-9)) - 1, 1)
    if s.hop_step > 0:
        return build_hop_schedule(s.receive_frequency, s.base_primary, s.hop_step, hop, n * hop,
                                  s.min_primary, s.glide)
    return build_fixed_schedule(s.receive_frequency, s.base_primary, hop, n * hop, s.min_primary)


def secondary_lag(cfg, geometry, start, medium):
    """Hop lag matched to the nominal start range (array centroid)."""
    if cfg.schedule.secondary_lag != "auto":
        return float(cfg.schedule.secondary_lag)
    ds = np.linalg.norm(geometry.secondary_source_position - geometry.mic_positions, axis=1)
    return float((np.linalg.norm(np.asarray(start) - geometry.centroid) - ds.mean())
                 / medium.speed_of_sound)


def build_setup(cfg, geometry, schedule, lag, ga_seed):
    d = cfg.demod
    t = cfg.tracking
    return tracking.TrackingSetup(
        geometry, schedule, Medium(cfg.scene.speed_of_sound),
        NonlinearityModel(cfg.scene.linear_gain, cfg.scene.quadratic_gain),
        dm.DemodConfig(win_los=d.win_los, frame_rate=1.0 / schedule.hop_period,
                       receive_frequency=schedule.receive_frequency,
                       guard_samples=d.guard_samples, low_snr_db=d.low_snr_db, detrend=d.detrend),
        secondary_lag=lag, secondary_gain=cfg.schedule.secondary_gain, lead_in=t.lead_in,
        velocity_aided=d.velocity_aided, workspace=Workspace(), ga_seed=ga_seed,
        ga_options={"population": t.population, "generations": t.generations},
        correct_start_bias=t.correct_start_bias)


def _ambient(cfg, duration, seed):
    """Ambient waveforms (voice or white noise) with their levels."""
    out = []
    for k, a in enumerate(cfg.scene.ambient):
        s = seed + k
        if a.get("kind", "voice") == "voice":
            w = sim.synthetic_voice(duration, seed=s)
        else:
            w = sim.white_noise(duration, seed=s)
        out.append((w, float(a.get("level_db", 60.0)), s))
    return out


def _mix(cap, ambient):
    for w, level, s in ambient:
        cap = sim.mix_ambient(cap, w, level, seed=s)
    return cap


def simulate_capture(cfg, truth=None):
    """Returns ``(capture, tracking_only_capture, truth, schedule, lag, reference)``.

    ``reference`` is the ambient-only capture (None without ambient sources).
    """
    sim_seed, amb_seed = _seeds(cfg.seed)[:2]
    truth = truth or build_motion(cfg)
    geo = build_geometry(cfg)
    medium = Medium(cfg.scene.speed_of_sound)
    sch = build_schedule(cfg, truth.path.duration)
    lag = secondary_lag(cfg, geo, truth.path.positions[0], medium)
    refl = [sim.wall_behind(r.get("distance", 0.5), r.get("coefficient", 0.8),
                            tuple(r.get("axis", (1.0, 0.0, 0.0)))) for r in cfg.scene.reflectors]
    scene = sim.Scene(medium, geo, refl, absorption_db_per_m_khz=cfg.scene.absorption_db_per_m_khz,
                      mic_snr_db=cfg.scene.mic_snr_db)
    nl = NonlinearityModel(cfg.scene.linear_gain, cfg.scene.quadratic_gain)
    clean = sim.simulate(scene, truth.path, sch, nl, sample_rate=cfg.scene.sample_rate,
                         seed=sim_seed, secondary_lag=lag,
                         secondary_gain=cfg.schedule.secondary_gain)
    amb = _ambient(cfg, clean.duration, amb_seed)
    ref = None
    if amb:
        ref = _mix(sim.RawCapture(np.zeros_like(clean.channels), clean.sample_rate,
                                  clean.start_time), amb)
    return _mix(clean, amb), clean, truth, sch, lag, ref


def ranging_errors(distances, truth_path, geometry, timestamps, fix_frame):
    """Per-mic error of the distance change since ``fix_frame`` (metres, NaN where unusable)."""
    p = truth_path.position_at(np.asarray(timestamps))
    d_true = np.linalg.norm(p[None, :, :] - geometry.mic_positions[:, None, :], axis=-1)
    est = distances - distances[:, fix_frame:fix_frame + 1]
    true = d_true - d_true[:, fix_frame:fix_frame + 1]
    return est - true


def _finite(x):
    x = np.asarray(x, dtype=float).ravel()
    return x[np.isfinite(x)]


def _stat(x, q=50):
    x = _finite(x)
    return float(np.percentile(np.abs(x), q)) if len(x) else float("nan")


@dataclass
class RangingResult:
    track: dm.PhaseTrack
    distances: np.ndarray
    fix_frame: int


def run_tracking(cfg, capture, setup, truth=None, result=None):
    """Demodulation, start fix and multilateration, each as its own stage."""
    result = result or PipelineResult(cfg)
    with stage("demod"):
        first = tracking.first_pass(capture, setup)
    if cfg.tracking.mode == "ranging":
        if truth is None:
            raise StageError("startpoint", ValueError("ranging mode needs the true start point"))
        start = truth.path.positions[0]
        fix_frame = 2
        with stage("demod"):
            track = tracking.second_pass(capture, setup, first, start, fix_frame)
        d0 = np.linalg.norm(start - setup.geometry.mic_positions, axis=1)
        dist = d0[:, None] + track.distance_change - track.distance_change[:, fix_frame:fix_frame + 1]
        dist = np.where(track.unreliable, np.nan, dist)
        result.tracking = RangingResult(track, dist, fix_frame)
        return result
    with stage("startpoint"):
        fix, _, bias, rms = tracking.locate_start(first, capture, setup)
        fix_frame = int(setup.lead_slots()[0])
    with stage("demod"):
        track = tracking.second_pass(capture, setup, first, fix.position, fix_frame)
    with stage("localize"):
        dist, traj = tracking.localize_track(track, setup, fix, fix_frame)
    result.tracking = tracking.TrackingResult(first, track, fix, fix_frame, dist, traj, bias, rms)
    return result


def _tracking_metrics(res, truth, setup):
    tr = res.tracking
    m = res.metrics
    m["n_frames"] = tr.track.n_frames
    m["unreliable_fraction"] = float(np.mean(tr.track.unreliable))
    if truth is None:
        return
    err = ranging_errors(tr.distances, truth.path, setup.geometry, tr.track.timestamps,
                         tr.fix_frame)
    res.ranging_errors = err
    m["ranging_median_error_m"] = _stat(err)
    m["ranging_p90_error_m"] = _stat(err, 90)
    if isinstance(tr, tracking.TrackingResult):
        m["start_fix_error_m"] = float(np.linalg.norm(tr.fix.position - truth.path.positions[0]))
        m["start_fix_misfit_m"] = float(tr.start_rms)
        traj = tr.trajectory
        e = np.linalg.norm(traj.points - truth.path.position_at(traj.timestamps), axis=1)
        res.errors_3d = e
        m["median_3d_error_m"] = _stat(e)
        m["p90_3d_error_m"] = _stat(e, 90)
        m["valid_fraction"] = float(np.mean(traj.valid))


def handwriting_metrics(ink_result, word, timestamps):
    """Pen-lift recall, wrongly removed stroke share and flattening stress vs the true ink."""
    _, labels, ink_true, _ = word.resample(timestamps)
    kept = ink_result.kept
    lift = labels == words.LIFT
    strokes = labels == words.STROKE
    out = {
        "lift_removed_fraction": float(np.mean(~kept[lift])) if lift.any() else float("nan"),
        "stroke_removed_fraction": float(np.mean(~kept[strokes])) if strokes.any() else float("nan"),
    }
    idx = np.concatenate(ink_result.strokes)
    flat = ink_result.ink.points
    sel = np.linspace(0, len(idx) - 1, min(len(idx), MAX_STRESS_POINTS)).astype(int)
    t = ink_true[idx[sel]]
    target = np.linalg.norm(t[:, None] - t[None], axis=-1)
    out["flattening_stress"] = stress(flat[sel], target)
    return out


def _write_report(path, metrics):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in metrics.items():
            w.writerow([k, f"{v:.9g}" if isinstance(v, float) else v])


def write_capture(path, cap):
    """7-channel float32 WAV at the capture rate."""
    wavfile.write(path, int(cap.sample_rate), cap.channels.T.astype(np.float32))


def read_capture(path):
    rate, data = wavfile.read(path)
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return sim.RawCapture(x.T.copy(), float(rate), 0.0)


def write_path_csv(path, truth):
    p = truth.path
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["t", "x", "y", "z"]
        word = truth.word
        if word is not None:
            header += ["label", "u", "v"]
        w.writerow(header)
        for k, (t, q) in enumerate(zip(p.timestamps, p.positions)):
            row = [f"{t:.6f}", f"{q[0]:.9f}", f"{q[1]:.9f}", f"{q[2]:.9f}"]
            if word is not None:
                row += [words.LABEL_NAMES[int(word.labels[k])], f"{word.ink[k, 0]:.9f}",
                        f"{word.ink[k, 1]:.9f}"]
            w.writerow(row)


def _write_ranging(path, err, timestamps):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "t", "mic_id", "error_m"])
        for k in range(err.shape[1]):
            for i in range(err.shape[0]):
                w.writerow([k, f"{timestamps[k]:.6f}", i, f"{err[i, k]:.9e}"])


def run_pipeline(cfg, out_dir=None, stages=STAGES, capture=None, plots=True):
    """Run the experiment described by ``cfg`` and write its artefacts to ``out_dir``.

    ``capture`` replaces the simulated recording (no ground truth then,
    unless the config's motion still describes it).  ``stages`` limits how
    far the run goes.
    """
    out = Path(out_dir or cfg.out or f"out/{cfg.name}")
    out.mkdir(parents=True, exist_ok=True)
    res = PipelineResult(cfg)
    res.metrics["experiment"] = cfg.name
    res.metrics["seed"] = cfg.seed
    ga_seed = _seeds(cfg.seed)[2]
    clean = ref = None
    with stage("simulate"):
        if capture is None:
            cap, clean, truth, sch, lag, ref = simulate_capture(cfg)
        else:
            cap = capture
            truth = build_motion(cfg) if cfg.motion.kind != "static" or cfg.motion.start else None
            dur = cap.duration + cfg.schedule.hop_period
            sch = build_schedule(cfg, dur)
            lag = secondary_lag(cfg, build_geometry(cfg),
                                truth.path.positions[0] if truth else cfg.motion.start or [0, 0, 0.25],
                                Medium(cfg.scene.speed_of_sound))
        res.capture, res.truth = cap, truth
        res.metrics["hopping"] = int(sch.hopping)
        res.metrics["secondary_lag_s"] = lag
        if capture is None:
            res.files["capture"] = out / "capture.wav"
            write_capture(res.files["capture"], cap)
            res.files["truth"] = out / "truth.csv"
            write_path_csv(res.files["truth"], truth)
    if "demod" not in stages:
        return _finish(res, out)

    setup = build_setup(cfg, build_geometry(cfg), sch, lag, ga_seed)
    run_tracking(cfg, cap, setup, truth, res)
    with stage("report"):
        _tracking_metrics(res, truth, setup)
        tr = res.tracking
        res.files["phase"] = out / "phase.csv"
        tr.track.to_csv(res.files["phase"])
        if res.ranging_errors is not None:
            res.files["ranging"] = out / "ranging_errors.csv"
            _write_ranging(res.files["ranging"], res.ranging_errors, tr.track.timestamps)
        if isinstance(tr, tracking.TrackingResult):
            res.files["trajectory"] = out / "trajectory.csv"
            tr.trajectory.to_csv(res.files["trajectory"])

    want_ink = cfg.handwriting.enabled
    if want_ink is None:
        want_ink = cfg.motion.kind == "word"
    if "handwriting" in stages and want_ink and isinstance(res.tracking, tracking.TrackingResult):
        with stage("handwriting"):
            traj = res.tracking.trajectory
            res.ink = recover_ink(traj.timestamps, traj.points, cfg.handwriting.smooth_window,
                                  k_neighbors=cfg.handwriting.k_neighbors)
            res.files["ink_svg"] = out / "ink.svg"
            res.files["ink_csv"] = out / "ink.csv"
            res.ink.ink.to_svg(res.files["ink_svg"])
            res.ink.ink.to_csv(res.files["ink_csv"])
            if truth is not None and truth.word is not None:
                res.metrics.update(handwriting_metrics(res.ink, truth.word, traj.timestamps))

    if "coexistence" in stages and cfg.coexistence.enabled:
        with stage("coexistence"):
            # leakage of the tracking signal alone, voice-band change against the ambient-only take
            alone = band_energy_report(clean if clean is not None else cap,
                                       f_rcv=sch.receive_frequency)
            res.metrics["leakage_ratio_db"] = alone.leakage_ratio
            res.metrics["line_concentration"] = alone.concentration
            if ref is not None:
                mixed = band_energy_report(cap, ref, sch.receive_frequency)
                res.metrics["voice_band_delta_db"] = mixed.voice_band_delta
                res.metrics["tracking_band_delta_db"] = mixed.tracking_band_delta
                res.bands = mixed
            else:
                res.bands = alone
            res.files["bands"] = out / "bands.csv"
            res.bands.to_csv(res.files["bands"])

    if plots and "report" in stages:
        with stage("report"):
            from . import plots as pl
            res.files.update(pl.write_plots(res, out))
    return _finish(res, out)


def _finish(res, out):
    with stage("report"):
        res.files["report"] = out / "report.csv"
        _write_report(res.files["report"], res.metrics)
    return res


def format_report(metrics):
    w = max(len(k) for k in metrics)
    lines = []
    for k, v in metrics.items():
        s = f"{v:.6g}" if isinstance(v, float) else str(v)
        lines.append(f"{k.ljust(w)}  {s}")
    return "\n".join(lines)
