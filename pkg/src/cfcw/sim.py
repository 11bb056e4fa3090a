"""Acoustic ground-truth simulator.

Propagates the transmit tones from a moving beacon and a fixed secondary
source to every microphone (first-order image sources for planar
reflectors), squares them through the microphone model, low-passes and
decimates to the 16 kHz capture rate.

Delays are evaluated per output sample from the retarded-time relation, so
Doppler appears without being modelled explicitly.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.interpolate import CubicSpline

from .errors import InvalidArgument, InvalidScene
from .signal_core import CAPTURE_RATE, Medium, NonlinearityModel

RING_SPACING = 0.036  # m
SECONDARY_DISTANCE = 0.15  # m
WORKSPACE_RANGE = 0.70  # m
LEVEL_REFERENCE_DB = 94.0  # dB SPL that maps to RMS 1.0 in capture units


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone layout (metres) and the fixed secondary source.

    The default layout is a centre microphone plus six on a 3.6 cm radius
    ring, which makes every adjacent ring pair 3.6 cm apart as well.
    """

    mic_positions: np.ndarray
    secondary_source_position: np.ndarray
    up_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        mics = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        sec = np.asarray(self.secondary_source_position, dtype=float).reshape(3)
        up = np.asarray(self.up_axis, dtype=float).reshape(3)
        if mics.shape[1] != 3 or len(mics) < 1:
            raise InvalidArgument("mic_positions must be an (n, 3) array")
        if not np.all(np.isfinite(mics)) or not np.all(np.isfinite(sec)):
            raise InvalidArgument("non-finite geometry")
        up = up / np.linalg.norm(up)
        object.__setattr__(self, "mic_positions", mics)
        object.__setattr__(self, "secondary_source_position", sec)
        object.__setattr__(self, "up_axis", up)

    @property
    def n_mics(self):
        return len(self.mic_positions)

    @property
    def centroid(self):
        return self.mic_positions.mean(axis=0)

    def subset(self, indices):
        return ArrayGeometry(self.mic_positions[list(indices)], self.secondary_source_position,
                             self.up_axis)

    def pair_distances(self):
        diff = self.mic_positions[:, None, :] - self.mic_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def translated(self, offset):
        offset = np.asarray(offset, dtype=float)
        return ArrayGeometry(self.mic_positions + offset,
                             self.secondary_source_position + offset, self.up_axis)


def default_array(spacing=RING_SPACING, secondary_distance=SECONDARY_DISTANCE):
    angles = np.arange(6) * np.pi / 3
    ring = np.stack([spacing * np.cos(angles), spacing * np.sin(angles), np.zeros(6)], axis=1)
    mics = np.vstack([[0.0, 0.0, 0.0], ring])
    secondary = np.array([-secondary_distance, 0.0, 0.0])
    return ArrayGeometry(mics, secondary)


@dataclass(frozen=True)
class Reflector:
    """Planar reflector ``normal . x = offset``.

    ``radius`` limits the reflector to a disc around ``center`` (clutter);
    ``None`` means an infinite wall.
    """

    normal: np.ndarray
    offset: float
    coefficient: float
    center: np.ndarray = None
    radius: float = None

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise InvalidScene("reflector normal must be non-zero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)
        if not 0.0 <= self.coefficient <= 1.0:
            raise InvalidScene(f"reflection coefficient {self.coefficient} outside [0, 1]")
        if self.radius is not None:
            if self.center is None:
                raise InvalidScene("finite reflector needs a center")
            object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))

    def signed_distance(self, points):
        return np.asarray(points) @ self.normal - self.offset

    def mirror(self, points):
        d = self.signed_distance(points)
        return np.asarray(points) - 2.0 * d[..., None] * self.normal

    def reflection_point(self, source, receiver):
        """Where the specular path from ``source`` to ``receiver`` hits the plane."""
        ds = self.signed_distance(source)
        dr = self.signed_distance(receiver)
        w = ds / (ds + dr)
        return source + w[..., None] * (receiver - source)


def wall_behind(distance=0.5, coefficient=0.8, axis=(1.0, 0.0, 0.0)):
    """Infinite wall ``distance`` metres behind the array along ``-axis``."""
    n = np.asarray(axis, dtype=float)
    return Reflector(normal=n, offset=-distance * np.linalg.norm(n), coefficient=coefficient)


@dataclass
class AmbientSource:
    waveform: np.ndarray
    level_db: float
    sample_rate: float = CAPTURE_RATE


@dataclass
class Scene:
    medium: Medium = field(default_factory=Medium)
    geometry: ArrayGeometry = field(default_factory=default_array)
    reflectors: list = field(default_factory=list)
    ambient_sources: list = field(default_factory=list)
    spreading_exponent: float = 1.0
    absorption_db_per_m_khz: float = 0.0
    mic_snr_db: float = None  # None disables self-noise

    def __post_init__(self):
        if self.spreading_exponent < 0 or self.absorption_db_per_m_khz < 0:
            raise InvalidScene("attenuation parameters must be non-negative")
        for r in self.reflectors:
            if not 0.0 <= r.coefficient <= 1.0:
                raise InvalidScene("reflection coefficients must be in [0, 1]")


class MotionPath:
    """Beacon trajectory sampled at uniform, strictly increasing timestamps."""

    def __init__(self, timestamps, positions):
        t = np.asarray(timestamps, dtype=float)
        p = np.atleast_2d(np.asarray(positions, dtype=float))
        if t.ndim != 1 or len(t) != len(p) or p.shape[1] != 3:
            raise InvalidArgument("timestamps (n,) and positions (n, 3) required")
        if len(t) < 2 or np.any(np.diff(t) <= 0):
            raise InvalidArgument("timestamps must be strictly increasing (n >= 2)")
        if not np.all(np.isfinite(p)):
            raise InvalidArgument("positions must be finite")
        self.timestamps = t
        self.positions = p
        self._spline = CubicSpline(t, p, axis=0) if len(t) >= 4 else None

    @classmethod
    def static(cls, position, duration, rate=1000.0):
        n = max(2, int(np.ceil(duration * rate)) + 1)
        t = np.arange(n) / rate
        return cls(t, np.repeat(np.asarray(position, dtype=float)[None, :], n, axis=0))

    @property
    def duration(self):
        return self.timestamps[-1] - self.timestamps[0]

    @property
    def max_speed(self):
        v = np.diff(self.positions, axis=0) / np.diff(self.timestamps)[:, None]
        return float(np.linalg.norm(v, axis=1).max()) if len(v) else 0.0

    def position_at(self, t):
        """Interpolated position; held constant outside the sampled span."""
        t = np.clip(np.asarray(t, dtype=float), self.timestamps[0], self.timestamps[-1])
        if self._spline is not None:
            return self._spline(t)
        return np.stack([np.interp(t, self.timestamps, self.positions[:, k]) for k in range(3)],
                        axis=-1)


@dataclass
class PressureField:
    """Per-microphone acoustic pressure at the simulation rate."""

    samples: np.ndarray  # (n_mics, n)
    sample_rate: float
    start_time: float
    max_frequency: float


@dataclass
class RawCapture:
    """Multichannel microphone recording; sample ``n`` is at ``start_time + n / rate``."""

    channels: np.ndarray  # (n_mics, n)
    sample_rate: float = CAPTURE_RATE
    start_time: float = 0.0

    def __post_init__(self):
        self.channels = np.atleast_2d(np.asarray(self.channels, dtype=float))

    @property
    def n_mics(self):
        return self.channels.shape[0]

    @property
    def n_samples(self):
        return self.channels.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.sample_rate

    def copy(self):
        return RawCapture(self.channels.copy(), self.sample_rate, self.start_time)


def kaiser_sinc_taps(frac, half_width=32, beta=12.0):
    """Windowed-sinc interpolation weights for offsets ``frac`` (samples)."""
    x = np.clip(1.0 - (frac / half_width) ** 2, 0.0, None)
    return np.sinc(frac) * np.i0(beta * np.sqrt(x)) / np.i0(beta)


class SincInterpolator:
    """Kaiser-windowed sinc reader with a polyphase kernel table.

    Weights for an arbitrary fractional offset are linearly interpolated
    between ``phases`` tabulated offsets, which keeps the kernel error near
    1e-7 while avoiding Bessel evaluations per sample.
    """

    def __init__(self, half_width=32, beta=12.0, phases=8192):
        if half_width < 4:
            raise InvalidArgument("windowed-sinc interpolation needs at least 8 taps")
        self.half_width = half_width
        self.phases = phases
        self.offsets = np.arange(-half_width + 1, half_width + 1)
        frac = np.arange(phases + 1) / phases
        self.table = kaiser_sinc_taps(frac[:, None] - self.offsets[None, :], half_width, beta)

    def read(self, x, positions, block=8192):
        """Sample ``x`` at fractional indices; indices outside the signal read as zero."""
        W = self.half_width
        x = np.asarray(x, dtype=float)
        positions = np.asarray(positions, dtype=float)
        out = np.zeros(positions.shape)
        padded = np.concatenate([np.zeros(W), x, np.zeros(W + 1)])
        last = len(padded) - 1
        for s in range(0, len(positions), block):
            u = positions[s:s + block]
            k0 = np.floor(u)
            pos = (u - k0) * self.phases
            p0 = pos.astype(np.int64)
            a = (pos - p0)[:, None]
            w = (1.0 - a) * self.table[p0] + a * self.table[p0 + 1]
            idx = np.clip(k0.astype(np.int64)[:, None] + self.offsets[None, :] + W, 0, last)
            out[s:s + block] = np.einsum("ij,ij->i", padded[idx], w)
        return out


_INTERPOLATORS = {}


def _interpolator(half_width):
    if half_width not in _INTERPOLATORS:
        _INTERPOLATORS[half_width] = SincInterpolator(half_width)
    return _INTERPOLATORS[half_width]


def fractional_delay_read(x, positions, half_width=32):
    """Sample ``x`` at fractional indices ``positions`` (windowed sinc)."""
    return _interpolator(half_width).read(x, positions)


def _retarded_delay(position_fn, mic, t, c, iterations=3):
    tau = np.linalg.norm(position_fn(t) - mic, axis=-1) / c
    for _ in range(iterations):
        tau = np.linalg.norm(position_fn(t - tau) - mic, axis=-1) / c
    return tau


def _path_gain(scene, length, freq_hz):
    g = length ** (-scene.spreading_exponent)
    if scene.absorption_db_per_m_khz > 0:
        g = g * 10.0 ** (-scene.absorption_db_per_m_khz * (freq_hz / 1e3) * length / 20.0)
    return g


def _check_reflectors(scene, positions, mics):
    for k, r in enumerate(scene.reflectors):
        d = r.signed_distance(positions)
        side = np.sign(r.signed_distance(mics))
        if np.any(np.abs(d) < 1e-3) or np.any(np.sign(d) != np.sign(d[0])):
            raise InvalidScene(f"beacon collides with reflector {k}")
        if np.any(side != np.sign(d[0])):
            raise InvalidScene(f"reflector {k} separates the beacon from a microphone")


def propagate(scene, path, tx, max_range=WORKSPACE_RANGE, half_width=32):
    """Pressure at each microphone from the primary beacon and the secondary source.

    Each microphone sums the line-of-sight arrival and one first-order image
    per reflector for both sources.  Gains use spherical spreading and
    optional frequency-dependent absorption.
    """
    geom = scene.geometry
    c = scene.medium.speed_of_sound
    fs = tx.sample_rate
    t = tx.times
    # the beacon is held at its first position during any pre-roll before the path starts
    if path.timestamps[-1] < tx.end_time - 1.5 / fs:
        raise InvalidArgument("motion path ends before the transmission does")
    path_pts = path.position_at(t[:: max(1, int(fs // 1000))])
    if max_range is not None:
        rng = np.linalg.norm(path_pts - geom.centroid, axis=1)
        if np.any(rng > max_range + 1e-9):
            raise InvalidScene(f"beacon leaves the {max_range} m workspace (max {rng.max():.3f} m)")
    _check_reflectors(scene, path_pts, geom.mic_positions)

    out = np.zeros((geom.n_mics, len(t)))
    sec = geom.secondary_source_position
    for i, mic in enumerate(geom.mic_positions):
        # primary: line of sight
        tau = _retarded_delay(path.position_at, mic, t, c)
        f_emit = np.interp(t - tau, t, tx.primary_frequency)
        gain = tx.primary_gain * _path_gain(scene, tau * c, f_emit)
        out[i] += gain * fractional_delay_read(tx.primary_samples, (t - tau - tx.start_time) * fs,
                                               half_width)
        for r in scene.reflectors:
            image = lambda tt, r=r: r.mirror(path.position_at(tt))
            tau_r = _retarded_delay(image, mic, t, c)
            f_emit = np.interp(t - tau_r, t, tx.primary_frequency)
            gain = r.coefficient * tx.primary_gain * _path_gain(scene, tau_r * c, f_emit)
            if r.radius is not None:
                hit = r.reflection_point(path.position_at(t - tau_r), mic[None, :])
                gain = gain * (np.linalg.norm(hit - r.center, axis=1) <= r.radius)
            out[i] += gain * fractional_delay_read(tx.primary_samples,
                                                   (t - tau_r - tx.start_time) * fs, half_width)
        # secondary: static source, same treatment
        sources = [(sec, 1.0, None)] + [(r.mirror(sec[None, :])[0], r.coefficient, r)
                                       for r in scene.reflectors]
        for src, coef, r in sources:
            dist = np.linalg.norm(src - mic)
            if r is not None and r.radius is not None:
                hit = r.reflection_point(sec[None, :], mic[None, :])
                if np.linalg.norm(hit - r.center) > r.radius:
                    continue
            tau_s = dist / c
            f_emit = np.interp(t - tau_s, t, tx.secondary_frequency)
            gain = coef * tx.secondary_gain * _path_gain(scene, dist, f_emit)
            out[i] += gain * fractional_delay_read(tx.secondary_samples,
                                                   (t - tau_s - tx.start_time) * fs, half_width)
    fmax = float(max(np.max(tx.primary_frequency), np.max(tx.secondary_frequency)))
    return PressureField(out, fs, tx.start_time, fmax)


def antialias_filter(sample_rate, out_rate=CAPTURE_RATE, passband=7.4e3, stopband=8.2e3,
                     atten_db=65.0):
    """Linear-phase low-pass whose group delay is a whole number of output samples.

    Returns ``(taps, delay_out_samples)``.
    """
    factor = int(round(sample_rate / out_rate))
    width = (stopband - passband) / (sample_rate / 2)
    numtaps, beta = signal.kaiserord(atten_db, width)
    m = int(np.ceil((numtaps - 1) / (2 * factor)))
    numtaps = 2 * factor * m + 1
    cutoff = 0.5 * (passband + stopband)
    taps = signal.firwin(numtaps, cutoff, window=("kaiser", beta), fs=sample_rate)
    return taps, m


def capture(pressure, nonlinearity=NonlinearityModel(), out_rate=CAPTURE_RATE, crop_start=0.0,
            ac_coupling=20.0):
    """Apply the square-law microphone, anti-alias filter and decimation.

    ``ac_coupling`` (Hz) is the corner of the microphone's DC-blocking
    high-pass, which removes the large DC term of the square law; ``None``
    keeps DC.

    The filter's constant group delay is removed, so output sample ``n`` is
    the recording at ``pressure.start_time + n / out_rate``; samples before
    ``crop_start`` (the simulation pre-roll) are dropped.
    """
    fs = pressure.sample_rate
    factor = fs / out_rate
    if abs(factor - round(factor)) > 1e-9:
        raise InvalidArgument("simulation rate must be an integer multiple of the capture rate")
    factor = int(round(factor))
    if fs < 2 * pressure.max_frequency:
        raise InvalidArgument("simulation rate below Nyquist for the transmitted tones")
    taps, delay = antialias_filter(fs, out_rate)
    y = nonlinearity.apply(pressure.samples)
    dec = signal.upfirdn(taps, y, up=1, down=factor, axis=1)
    n_out = pressure.samples.shape[1] // factor
    dec = dec[:, delay:delay + n_out]
    if ac_coupling:
        sos = signal.butter(2, ac_coupling, btype="highpass", fs=out_rate, output="sos")
        # start in steady state for the first sample (no switch-on transient)
        zi = signal.sosfilt_zi(sos)[:, None, :] * dec[None, :, 0, None]
        dec, _ = signal.sosfilt(sos, dec, axis=1, zi=zi)
    t0 = pressure.start_time
    skip = int(round((crop_start - t0) * out_rate)) if crop_start is not None else 0
    skip = max(skip, 0)
    return RawCapture(dec[:, skip:], float(out_rate), t0 + skip / out_rate)


def tracking_line_power(cap, f_rcv=7e3, half_band=100.0):
    """Mean power of the tracking line per channel (periodogram band sum)."""
    x = cap.channels - cap.channels.mean(axis=1, keepdims=True)
    spec = np.abs(np.fft.rfft(x, axis=1)) ** 2
    freqs = np.fft.rfftfreq(x.shape[1], 1.0 / cap.sample_rate)
    band = np.abs(freqs - f_rcv) <= half_band
    # one-sided periodogram -> mean square
    return 2.0 * spec[:, band].sum(axis=1) / x.shape[1] ** 2


def add_mic_noise(cap, snr_db, seed=None, f_rcv=7e3):
    """Add white self-noise at ``snr_db`` below the mean tracking-line power."""
    if snr_db is None:
        return cap.copy()
    rng = np.random.default_rng(seed)
    p_line = float(np.mean(tracking_line_power(cap, f_rcv)))
    sigma = np.sqrt(p_line / 10.0 ** (snr_db / 10.0))
    return RawCapture(cap.channels + sigma * rng.standard_normal(cap.channels.shape),
                      cap.sample_rate, cap.start_time)


def level_to_rms(level_db):
    return 10.0 ** ((level_db - LEVEL_REFERENCE_DB) / 20.0)


def mix_ambient(cap, noise, level_db, sample_rate=CAPTURE_RATE, seed=None):
    """Add an ambient waveform at ``level_db`` (94 dB maps to RMS 1.0).

    The same waveform reaches every channel.  A noise clip shorter than the
    capture is tiled from a seeded random offset.
    """
    if level_db is None or np.isneginf(level_db):
        return cap.copy()
    noise = np.asarray(noise, dtype=float)
    if sample_rate != cap.sample_rate:
        from fractions import Fraction
        fr = Fraction(cap.sample_rate / sample_rate).limit_denominator(1000)
        noise = signal.resample_poly(noise, fr.numerator, fr.denominator)
    rng = np.random.default_rng(seed)
    n = cap.n_samples
    if len(noise) < n:
        start = int(rng.integers(len(noise)))
        noise = np.resize(np.roll(noise, -start), n)
    noise = noise[:n]
    rms = np.sqrt(np.mean(noise ** 2))
    if rms == 0:
        return cap.copy()
    scaled = noise * level_to_rms(level_db) / rms
    return RawCapture(cap.channels + scaled[None, :], cap.sample_rate, cap.start_time)


def white_noise(duration, sample_rate=CAPTURE_RATE, seed=None):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(int(round(duration * sample_rate)))


def synthetic_voice(duration, sample_rate=CAPTURE_RATE, seed=None, top=4e3):
    """Voiced-speech stand-in: glottal pulse train through formant resonators,
    syllabic amplitude envelope, band-limited below ``top`` Hz."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = 140.0 * (1 + 0.15 * np.sin(2 * np.pi * 3.0 * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    pulses = (np.diff(np.floor(phase / (2 * np.pi)), prepend=0) > 0).astype(float)
    x = pulses + 0.05 * rng.standard_normal(n)
    for fc, bw in [(700, 130), (1220, 70), (2600, 160)]:
        b, a = signal.iirpeak(fc, fc / bw, fs=sample_rate)
        x = x + 0.5 * signal.lfilter(b, a, x)
    env = 0.55 + 0.45 * np.sin(2 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi))
    x = x * env
    sos = signal.butter(10, top, fs=sample_rate, output="sos")
    return signal.sosfiltfilt(sos, x)


def simulate(scene, path, schedule, nonlinearity=NonlinearityModel(), sample_rate=192e3,
             pre_roll=0.02, seed=None, max_range=WORKSPACE_RANGE, secondary_lag=0.0,
             secondary_gain=0.2):
    """End-to-end capture of ``schedule`` with the beacon following ``path``.

    The transmitters start ``pre_roll`` seconds before the recording so the
    first frames see steady-state tones.  Mic self-noise and ambient sources
    from the scene are added with ``seed``.
    """
    from .tx import synthesize_transmit

    pre = np.ceil(pre_roll * CAPTURE_RATE) / CAPTURE_RATE
    tx = synthesize_transmit(schedule, sample_rate, start_time=-pre, end_time=schedule.duration,
                             secondary_gain=secondary_gain, secondary_lag=secondary_lag)
    pressure = propagate(scene, path, tx, max_range=max_range)
    cap = capture(pressure, nonlinearity, crop_start=0.0)
    rng = np.random.default_rng(seed)
    if scene.mic_snr_db is not None:
        cap = add_mic_noise(cap, scene.mic_snr_db, seed=rng.integers(2**63),
                            f_rcv=schedule.receive_frequency)
    for src in scene.ambient_sources:
        cap = mix_ambient(cap, src.waveform, src.level_db, src.sample_rate,
                          seed=rng.integers(2**63))
    return cap
