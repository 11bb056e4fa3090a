"""Capture to 3D trajectory: two demodulation passes around the start fix.

Pass 1 opens every window when the secondary tone's hop reaches the mic
(``d_s / c + lag``), which needs no knowledge of the beacon.  The static
lead-in of pass 1 gives the start fix; pass 2 re-opens the windows on the
line-of-sight arrival predicted from the fix and the pass-1 range track.

The anti-alias filter of the microphone rings for a few milliseconds after
every hop.  Each mic sees a hop-sized phase step whose size depends on its
own geometry, so the ringing leaves a small per-mic phase bias (tens of
micrometres of path) in every window.  Relative ranging does not care, but
the start fix amplifies it by roughly the square of range over aperture.
``refine_start`` removes it by replaying the known transmit and capture
chain for a candidate start point and fitting the position with the
predicted bias taken out.
"""
from dataclasses import dataclass, field

import numpy as np

from . import demod as dm
from . import sim
from .errors import InsufficientData
from .localize import absolute_distances, track_trajectory
from .signal_core import Medium, NonlinearityModel, wrap_phase
from .startpoint import PhaseDifferenceSet, Workspace, pairwise_phase_differences, \
    solve_start_point, tdoa_objective, implied_wraps
from .tx import ToneSchedule


@dataclass
class TrackingSetup:
    """Everything the receiver knows about its own hardware and transmitter."""

    geometry: sim.ArrayGeometry
    schedule: ToneSchedule
    medium: Medium = field(default_factory=Medium)
    nonlinearity: NonlinearityModel = field(default_factory=NonlinearityModel)
    demod: dm.DemodConfig = field(default_factory=dm.DemodConfig)
    secondary_lag: float = 0.0
    secondary_gain: float = 0.2
    lead_in: float = 0.1  # s of static beacon at the start of the capture
    velocity_aided: bool = True
    workspace: Workspace = field(default_factory=Workspace)
    ga_seed: int = 0
    ga_options: dict = field(default_factory=dict)
    correct_start_bias: bool = True
    misfit_ok: float = 5e-6  # m rms range-difference misfit accepted without a new search
    restarts: int = 3
    same_point: float = 1e-3  # m; restart candidates this close count as already tried

    @property
    def secondary_ranges(self):
        g = self.geometry
        return np.linalg.norm(g.secondary_source_position - g.mic_positions, axis=1)

    def lead_slots(self):
        n = int(np.floor(self.lead_in / self.schedule.hop_period + 1e-9))
        # skip the first two slots (filter start-up)
        slots = np.arange(2, min(n, self.schedule.n_slots))
        if len(slots) < 2 * len(self.schedule.pairs):
            raise InsufficientData(f"lead-in of {self.lead_in} s leaves too few slots")
        return slots


@dataclass
class TrackingResult:
    first_pass: dm.PhaseTrack
    track: dm.PhaseTrack
    fix: object  # StartFix
    fix_frame: int
    distances: np.ndarray
    trajectory: object  # Trajectory3D
    start_bias: np.ndarray = None  # (n_pairs, n_mics) radians removed before the fix
    start_rms: float = float("nan")  # m, range-difference misfit after refinement


def lead_in_phases(track, slots, n_pairs):
    """Circular mean of the wrapped phase per (pair, mic) over the lead-in slots."""
    ids = track.spectra.pair_ids
    out = np.empty((n_pairs, track.n_mics))
    for p in range(n_pairs):
        sel = [k for k in slots if ids[k] == p]
        out[p] = np.angle(np.mean(np.exp(1j * track.wrapped_phase[:, sel]), axis=1))
    return out


def start_phase_set(phases, setup, correction=None):
    """Phase differences of every pair stream stacked into one set (one wavelength each)."""
    sets = []
    for p, (fp, fs) in enumerate(setup.schedule.pairs):
        ph = phases[p] if correction is None else wrap_phase(phases[p] - correction[p])
        sets.append(pairwise_phase_differences(ph, setup.geometry, setup.medium.wavelength(fp),
                                               setup.medium.wavelength(fs)))
    return PhaseDifferenceSet.combine(sets)


def _ideal_phase(point, setup):
    d = np.linalg.norm(np.asarray(point) - setup.geometry.mic_positions, axis=1)
    ds = setup.secondary_ranges
    lam = setup.medium.wavelength
    return np.array([2 * np.pi * (d / lam(fp) - ds / lam(fs)) for fp, fs in setup.schedule.pairs])


def replay_bias(points, setup, delays, n_slots=10):
    """Per (pair, mic) phase bias of a static beacon at each point, from a clean replay.

    The replayed schedule keeps the slot pattern the real capture saw before
    t = 0, since the pre-roll repeats the plan cyclically.
    """
    sch = setup.schedule
    period = len(sch.pairs)
    n = n_slots + (sch.n_slots - n_slots) % period
    n = min(n, sch.n_slots)
    short = ToneSchedule(sch.hop_period, sch.slots[:n], sch.receive_frequency, sch.hopping,
                         sch.min_primary, sch.capture_rate, sch.glide)
    scene = sim.Scene(medium=setup.medium, geometry=setup.geometry)
    out = []
    for p in np.atleast_2d(points):
        path = sim.MotionPath.static(p, short.duration + 0.005)
        cap = sim.simulate(scene, path, short, setup.nonlinearity,
                           secondary_lag=setup.secondary_lag, secondary_gain=setup.secondary_gain)
        tr = dm.demodulate(cap, short, setup.medium, setup.demod, delays=delays,
                           velocity_aided=False)
        ph = lead_in_phases(tr, range(2, n), period)
        out.append(wrap_phase(ph - _ideal_phase(p, setup)))
    return np.array(out)


def refine_start(point, phases, setup, delays, rounds=6, h=5e-4, trust=3e-3):
    """Gauss-Newton on the start point with the replayed hop bias taken out.

    The bias is linearised around the current point by finite differences
    and wraps are frozen at the values the current point implies.  A step
    (at most ``trust`` metres) is kept only if a fresh replay at the new
    point confirms a lower misfit; otherwise the trust radius shrinks.
    Returns ``(point, rms_misfit, bias_at_point)``.
    """
    lam1 = np.array([setup.medium.wavelength(fp) for fp, _ in setup.schedule.pairs])
    lam2 = np.array([setup.medium.wavelength(fs) for _, fs in setup.schedule.pairs])
    m = setup.geometry.mic_positions
    i, j = np.triu_indices(len(m), 1)
    ph = phases + 2 * np.pi * setup.secondary_ranges / lam2[:, None]

    def linearise(p):
        b = replay_bias(np.vstack([p, p + h * np.eye(3)]), setup, delays)
        return b[0], np.stack([wrap_phase(bk - b[0]) / h for bk in b[1:]], axis=-1)

    def residual(q, p, b0, jb, wraps=None):
        corr = ph - (b0 + jb @ (q - p))
        th = wrap_phase(corr[:, i] - corr[:, j])
        d = np.linalg.norm(q - m, axis=1)
        rd = d[i] - d[j]
        if wraps is None:
            wraps = np.round(rd / lam1[:, None] - th / (2 * np.pi))
        return lam1[:, None] * (wraps + th / (2 * np.pi)) - rd, wraps

    def misfit(p, b0, jb):
        r, _ = residual(p, p, b0, jb)
        return float(np.sqrt(np.mean(r ** 2)))

    p = np.array(point, dtype=float)
    b0, jb = linearise(p)
    rms = misfit(p, b0, jb)
    for _ in range(rounds):
        _, wraps = residual(p, p, b0, jb)
        q = p.copy()
        for _ in range(20):
            r, _ = residual(q, p, b0, jb, wraps)
            u = (q - m) / np.linalg.norm(q - m, axis=1)[:, None]
            jac = -(lam1[:, None, None] / (2 * np.pi)) * (jb[:, i, :] - jb[:, j, :]) - (u[i] - u[j])
            step = -np.linalg.lstsq(jac.reshape(-1, 3), r.reshape(-1), rcond=None)[0]
            if np.linalg.norm(q + step - p) > trust:
                room = max(trust - np.linalg.norm(q - p), 0.0)
                step *= room / max(np.linalg.norm(step), 1e-15)
            q = q + step
            if np.linalg.norm(step) < 1e-8:
                break
        q = setup.workspace.project(q)
        moved = np.linalg.norm(q - p)
        if moved < 1e-6:
            break
        qb0, qjb = linearise(q)
        q_rms = misfit(q, qb0, qjb)
        if q_rms < rms:
            p, b0, jb, rms = q, qb0, qjb, q_rms
            if moved < 1e-4:
                break
        else:
            trust = moved / 4
            if trust < 1e-5:
                break
    return p, rms, b0


def locate_start(first_pass, capture, setup):
    """Start fix from the lead-in: global search, then bias-corrected refinement.

    Returns ``(fix, delays, bias, rms)`` where ``delays`` are the window
    delays the fix was measured with.
    """
    slots = setup.lead_slots()
    n_pairs = len(setup.schedule.pairs)
    phases = lead_in_phases(first_pass, slots, n_pairs)
    pset = start_phase_set(phases, setup)
    fix = solve_start_point(pset, setup.workspace, seed=setup.ga_seed, **setup.ga_options)
    delays = dm.los_window_delay(setup.geometry, fix.position, setup.medium, setup.secondary_lag)
    if not (setup.correct_start_bias and setup.schedule.hopping):
        return fix, delays, np.zeros_like(phases), float("nan")

    tr = dm.demodulate(capture, setup.schedule, setup.medium, setup.demod, delays=delays,
                       velocity_aided=False, n_slots=int(slots[-1]) + 1)
    phases = lead_in_phases(tr, slots, n_pairs)
    p, rms, bias = refine_start(fix.position, phases, setup, delays)
    base = fix
    # a misfit well above the noise means a neighbouring wrap basin; search
    # again with the bias taken out.  If that search comes back to the same
    # point the excess is unmodelled (multipath, noise), not a wrong basin.
    tried = [fix.position]
    for k in range(setup.restarts):
        if rms < setup.misfit_ok:
            break
        pset = start_phase_set(phases, setup, bias)
        alt = solve_start_point(pset, setup.workspace, seed=setup.ga_seed + 1 + k,
                                **setup.ga_options)
        if np.linalg.norm(alt.position - p) < setup.same_point:
            break
        for cand in [alt.position] + list(alt.alternatives):
            if any(np.linalg.norm(cand - t) < setup.same_point for t in tried):
                continue
            tried.append(cand)
            q, r, b = refine_start(cand, phases, setup, delays)
            if r < rms:
                p, rms, bias, base = q, r, b, alt
            if rms < setup.misfit_ok:
                break
    pset = start_phase_set(phases, setup, bias)
    wraps = implied_wraps(p, pset)
    res = float(tdoa_objective(p, wraps, pset))
    fix = type(base)(p, wraps, res, bool(base.converged and setup.workspace.contains(p)),
                     base.generations)
    return fix, delays, bias, rms


def first_pass(capture, setup):
    """Windows opened when the secondary tone's hop reaches each mic."""
    d1 = setup.secondary_ranges / setup.medium.speed_of_sound + setup.secondary_lag
    return dm.demodulate(capture, setup.schedule, setup.medium, setup.demod, delays=d1,
                         velocity_aided=setup.velocity_aided)


def second_pass(capture, setup, first, start_position, fix_frame):
    """Windows on the line-of-sight arrival predicted from the start and the pass-1 ranges."""
    geo = setup.geometry
    d0 = np.linalg.norm(np.asarray(start_position) - geo.mic_positions, axis=1)
    change = first.distance_change - first.distance_change[:, fix_frame:fix_frame + 1]
    delays = dm.adaptive_delays(d0, change, geo, setup.medium, setup.secondary_lag)
    delays = np.minimum(delays, dm.max_window_delay(setup.schedule, setup.demod,
                                                    capture.sample_rate))
    return dm.demodulate(capture, setup.schedule, setup.medium, setup.demod, delays=delays,
                         velocity_aided=setup.velocity_aided)


def localize_track(track, setup, fix, fix_frame):
    dist = absolute_distances(fix.position, track.distance_change, setup.geometry, fix_frame,
                              track.unreliable)
    traj = track_trajectory(fix.position, dist, setup.geometry, track.timestamps,
                            setup.demod.frame_rate, header=fix.header(), fix_frame=fix_frame)
    return dist, traj


def track_capture(capture, setup):
    """Full chain: pass 1, start fix, pass 2, multilateration."""
    first = first_pass(capture, setup)
    fix, _, bias, rms = locate_start(first, capture, setup)
    fix_frame = int(setup.lead_slots()[0])
    track = second_pass(capture, setup, first, fix.position, fix_frame)
    dist, traj = localize_track(track, setup, fix, fix_frame)
    return TrackingResult(first, track, fix, fix_frame, dist, traj, bias, rms)
