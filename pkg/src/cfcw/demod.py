"""Phase demodulation of the 7 kHz tracking line.

Each hop slot yields one complex coefficient per microphone, taken from the
first ``win_los`` seconds after the line-of-sight arrival.  Phases are
unwrapped inside each hop-pair stream (increments are only meaningful between
slots with the same primary frequency) and the per-pair distance increments
are interleaved back into one series at the slot rate.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfiguration, TruncatedCapture
from .signal_core import Medium, wrap_phase

MIN_WIN_LOS = 0.5e-3


@dataclass(frozen=True)
class DemodConfig:
    """Framing parameters.

    ``win_los`` defaults to 1 ms: at 16 kHz that is 16 samples, an integer
    number of periods of DC, 2 kHz and 5 kHz as well as 7 kHz, so none of
    them leak into the projection.
    """

    win_los: float = 1.0e-3
    frame_rate: float = 1.0 / 3e-3
    fft_bin_width_cap: float = 2000.0
    receive_frequency: float = 7000.0
    guard_samples: int = 2
    low_snr_db: float = 20.0  # frames this far below the channel median are flagged
    velocity_window: int = 5
    velocity_decay: float = 0.7
    detrend: bool = False  # also fit a linear drift in each window (hurts with in-window 2 kHz products)

    def __post_init__(self):
        if self.win_los < MIN_WIN_LOS - 1e-12:
            raise InvalidConfiguration(f"win_los {self.win_los} s is below {MIN_WIN_LOS} s")
        if 1.0 / self.win_los > self.fft_bin_width_cap + 1e-9:
            raise InvalidConfiguration(
                f"win_los {self.win_los} s gives a {1 / self.win_los:.0f} Hz bin, wider than "
                f"fft_bin_width_cap {self.fft_bin_width_cap} Hz"
            )
        if self.guard_samples < 0:
            raise InvalidConfiguration("guard_samples must be >= 0")
        if self.velocity_window < 1:
            raise InvalidConfiguration("velocity_window must be >= 1")

    def check_schedule(self, schedule):
        hop_rate = 1.0 / schedule.hop_period
        if abs(self.frame_rate - hop_rate) > 0.01 * hop_rate:
            raise InvalidConfiguration(
                f"frame_rate {self.frame_rate} Hz inconsistent with hop period "
                f"{schedule.hop_period} s"
            )
        if abs(schedule.receive_frequency - self.receive_frequency) > 1e-6:
            raise InvalidConfiguration("schedule and demod receive frequencies differ")


@dataclass
class FrameSpectra:
    coefficients: np.ndarray  # (n_mics, n_slots) complex
    window_start: np.ndarray  # (n_mics, n_slots) capture sample index
    low_snr: np.ndarray  # (n_mics, n_slots) bool
    slot_ids: np.ndarray
    pair_ids: np.ndarray
    timestamps: np.ndarray  # emission-time reference of each slot

    @property
    def magnitude(self):
        return np.abs(self.coefficients)

    @property
    def wrapped_phase(self):
        # propagation phase: grows with distance
        return wrap_phase(-np.angle(self.coefficients))


def los_window_delay(geometry, position, medium=Medium(), secondary_lag=0.0):
    """Per-mic time after a slot boundary at which both hopped tones have arrived."""
    pos = np.asarray(position, dtype=float)
    mics = geometry.mic_positions
    tp = np.linalg.norm(pos[..., None, :] - mics, axis=-1) / medium.speed_of_sound
    ts = np.linalg.norm(geometry.secondary_source_position - mics, axis=-1) / medium.speed_of_sound
    return np.maximum(tp, ts + secondary_lag)


def _window_starts(delays, n_mics, n_slots, schedule, fs, t0, guard):
    d = np.asarray(delays, dtype=float)
    if d.ndim == 0:
        d = np.full((n_mics, n_slots), float(d))
    elif d.ndim == 1:
        d = np.repeat(d[:, None], n_slots, axis=1)
    if d.shape != (n_mics, n_slots):
        raise InvalidConfiguration(f"window delays shape {d.shape} != {(n_mics, n_slots)}")
    slot_t = np.arange(n_slots) * schedule.hop_period
    # the window opens once the (possibly gliding) hop has fully arrived
    d = d + schedule.glide
    return np.ceil((slot_t[None, :] + d - t0) * fs - 1e-9).astype(int) + guard


def frame_spectra(capture, schedule, config=DemodConfig(), delays=0.0, n_slots=None):
    """Single-bin projection at the receive frequency for every slot and mic.

    ``delays`` (seconds after each slot boundary, scalar, per mic or per mic
    and slot) positions the window on the line-of-sight arrival.  The fit
    uses a cosine, sine and constant term (plus a linear drift with
    ``detrend``), which equals the DFT bin when the window spans whole
    periods and otherwise still rejects DC.  The phase
    reference is absolute capture time, so a static scene gives one phase.
    """
    config.check_schedule(schedule)
    fs = capture.sample_rate
    n_win = int(round(config.win_los * fs))
    if n_win < 3:
        raise InvalidConfiguration("win_los shorter than 3 capture samples")
    n_slots = schedule.n_slots if n_slots is None else int(n_slots)
    starts = _window_starts(delays, capture.n_mics, n_slots, schedule, fs,
                            capture.start_time, config.guard_samples)
    if starts.min() < 0:
        raise TruncatedCapture("window starts before the first captured sample")
    if starts.max() + n_win > capture.n_samples:
        bad = int(np.argmax((starts + n_win > capture.n_samples).any(axis=0)))
        raise TruncatedCapture(
            f"frame {bad} needs samples up to {starts.max() + n_win}, capture has "
            f"{capture.n_samples}"
        )
    idx = starts[..., None] + np.arange(n_win)
    x = capture.channels[np.arange(capture.n_mics)[:, None, None], idx]
    w = 2 * np.pi * config.receive_frequency / fs
    n_abs = idx + capture.start_time * fs
    cols = [np.cos(w * n_abs), np.sin(w * n_abs), np.ones_like(n_abs)]
    if config.detrend:
        cols.append(np.broadcast_to(np.arange(n_win) - 0.5 * (n_win - 1), n_abs.shape))
    basis = np.stack(cols, axis=-1)
    gram = np.einsum("...ni,...nj->...ij", basis, basis)
    rhs = np.einsum("...ni,...n->...i", basis, x)
    sol = np.linalg.solve(gram, rhs[..., None])[..., 0]
    coef = sol[..., 0] - 1j * sol[..., 1]

    mag = np.abs(coef)
    med = np.median(mag, axis=1, keepdims=True)
    floor = med * 10.0 ** (-config.low_snr_db / 20.0)
    low = (mag < floor) | (mag == 0)
    slots = np.arange(n_slots)
    ts = (slots * schedule.hop_period + schedule.glide + config.guard_samples / fs
          + config.win_los / 2)
    return FrameSpectra(coef, starts, low, slots, schedule.pair_ids[:n_slots], ts)


def _predict_increment(history, decay):
    """Weighted least-squares line through recent increments, one step ahead."""
    k = len(history)
    if k == 0:
        return 0.0
    if k == 1:
        return history[0]
    x = np.arange(k, dtype=float)
    w = decay ** (k - 1 - x)
    a = np.vstack([np.ones(k), x]).T
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(a * sw[:, None], np.asarray(history) * sw, rcond=None)
    return float(coef[0] + coef[1] * k)


def unwrap_phase(wrapped, config=DemodConfig(), velocity_aided=True):
    """Unwrap one hop-pair stream.

    Without aid this is the classic rule (increments folded into [-pi, pi)).
    With aid, each increment takes the 2*pi branch closest to the increment
    predicted from the recent ones, which lets the stream follow motions whose
    per-step phase exceeds pi.  Steps of 2*pi or more cannot be resolved and
    are returned in the ``unreliable`` mask.
    """
    phi = np.asarray(wrapped, dtype=float)
    out = np.zeros_like(phi)
    unreliable = np.zeros(phi.shape, dtype=bool)
    if phi.size == 0:
        return out, unreliable
    out[0] = phi[0]
    history = []
    for k in range(1, len(phi)):
        d = float(wrap_phase(phi[k] - phi[k - 1]))
        if velocity_aided:
            pred = _predict_increment(history[-config.velocity_window:], config.velocity_decay)
            d = d + 2 * np.pi * round((pred - d) / (2 * np.pi))
            if abs(d) >= 2 * np.pi:
                unreliable[k] = True
        out[k] = out[k - 1] + d
        history.append(d)
    return out, unreliable


@dataclass
class PhaseTrack:
    """Per-mic frames plus the unwrapped phase and distance change series."""

    spectra: FrameSpectra
    unwrapped_phase: np.ndarray  # (n_mics, n_slots), per pair stream
    distance_change: np.ndarray  # (n_mics, n_slots) metres, relative to frame 0
    unreliable: np.ndarray  # (n_mics, n_slots) bool
    pair_frequencies: tuple = field(default=())

    @property
    def n_mics(self):
        return self.distance_change.shape[0]

    @property
    def n_frames(self):
        return self.distance_change.shape[1]

    @property
    def timestamps(self):
        return self.spectra.timestamps

    @property
    def wrapped_phase(self):
        return self.spectra.wrapped_phase

    @property
    def magnitude(self):
        return self.spectra.magnitude

    @property
    def low_snr(self):
        return self.spectra.low_snr

    @property
    def reliable(self):
        """Per mic: no frame needed an unresolvable unwrap step."""
        return ~self.unreliable.any(axis=1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_index", "mic_id", "wrapped_phase", "unwrapped_phase",
                        "distance_change"])
            wp = self.wrapped_phase
            for k in range(self.n_frames):
                for i in range(self.n_mics):
                    w.writerow([k, i, f"{wp[i, k]:.9f}", f"{self.unwrapped_phase[i, k]:.9f}",
                                f"{self.distance_change[i, k]:.9e}"])


def track_range(spectra, schedule, medium=Medium(), config=DemodConfig(), velocity_aided=True):
    """Unwrap every hop-pair stream and merge the distance increments.

    Within a pair stream the distance step is ``dphi * c / (2 pi f_primary)``.
    The first sample of each later stream is anchored by interpolating the
    first stream at that slot, after which every stream is cumulative.
    """
    wp = spectra.wrapped_phase
    n_mics, n_slots = wp.shape
    ids = spectra.pair_ids
    pairs = schedule.pairs
    unwrapped = np.zeros_like(wp)
    dist = np.full(wp.shape, np.nan)
    bad = np.zeros(wp.shape, dtype=bool)
    ref_slots = None
    for p in np.unique(ids):
        sel = np.flatnonzero(ids == p)
        f_primary = pairs[p][0]
        for i in range(n_mics):
            u, flag = unwrap_phase(wp[i, sel], config, velocity_aided)
            unwrapped[i, sel] = u
            bad[i, sel] = flag
            dist[i, sel] = (u - u[0]) * medium.speed_of_sound / (2 * np.pi * f_primary)
        if ref_slots is None:
            ref_slots = sel
        else:
            for i in range(n_mics):
                dist[i, sel] += np.interp(sel[0], ref_slots, dist[i, ref_slots])
    # an unresolvable step corrupts everything after it in that stream
    for p in np.unique(ids):
        sel = np.flatnonzero(ids == p)
        bad[:, sel] = np.maximum.accumulate(bad[:, sel], axis=1)
    return PhaseTrack(spectra, unwrapped, dist, bad, tuple(f for f, _ in pairs))


def demodulate(capture, schedule, medium=Medium(), config=DemodConfig(), delays=0.0,
               velocity_aided=True, n_slots=None):
    spectra = frame_spectra(capture, schedule, config, delays, n_slots)
    return track_range(spectra, schedule, medium, config, velocity_aided)


def adaptive_delays(initial_distances, distance_change, geometry, medium=Medium(),
                    secondary_lag=0.0):
    """Window delays that follow the beacon: LOS time from the tracked range."""
    d = np.asarray(initial_distances, dtype=float)[:, None] + np.nan_to_num(distance_change)
    c = medium.speed_of_sound
    ts = np.linalg.norm(geometry.secondary_source_position - geometry.mic_positions, axis=1) / c
    return np.maximum(d / c, ts[:, None] + secondary_lag)


def max_window_delay(schedule, config=DemodConfig(), sample_rate=16000.0):
    """Largest LOS delay that still leaves room for the window inside a slot."""
    return (schedule.hop_period - schedule.glide - config.win_los
            - (config.guard_samples + 1) / sample_rate)


def slot_speed_limit(schedule, medium=Medium(), velocity_aided=True):
    f = max(fp for fp, _ in schedule.pairs)
    lim = medium.speed_of_sound / (2 * f * schedule.pair_period)
    return 2 * lim if velocity_aided else lim


__all__ = [
    "DemodConfig", "FrameSpectra", "PhaseTrack", "frame_spectra", "unwrap_phase", "track_range",
    "demodulate", "los_window_delay", "adaptive_delays", "max_window_delay", "slot_speed_limit",
]
