"""Dual-tone transmit plan with transparent frequency hopping.

The primary tone rides on the moving beacon, the secondary tone sits next to
the array.  Both hop together so their difference, the frequency the
microphone actually records, never changes.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfiguration
from .signal_core import CAPTURE_RATE

NONLINEAR_MIN_PRIMARY = 25e3  # Hz, below this the microphone stays linear


@dataclass(frozen=True)
class ToneSchedule:
    """Ordered hop slots ``(f_primary, f_secondary)`` of length ``hop_period``.

    The slot sequence is treated as periodic outside ``[0, len(slots))`` so that
    transmit samples before t=0 (pre-roll) are defined.
    """

    hop_period: float
    slots: tuple
    receive_frequency: float
    hopping: bool = True
    min_primary: float = NONLINEAR_MIN_PRIMARY
    capture_rate: float = CAPTURE_RATE
    glide: float = 0.0  # s, raised-cosine frequency transition at the start of each slot

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple((float(a), float(b)) for a, b in self.slots))
        if self.hop_period <= 0:
            raise InvalidConfiguration("hop_period must be > 0")
        if not 0 <= self.glide < self.hop_period / 2:
            raise InvalidConfiguration("glide must be in [0, hop_period / 2)")
        if not self.slots:
            raise InvalidConfiguration("schedule has no slots")
        if not 0 < self.receive_frequency < self.capture_rate / 2:
            raise InvalidConfiguration(
                f"receive_frequency {self.receive_frequency} Hz must lie below the capture "
                f"Nyquist {self.capture_rate / 2} Hz"
            )
        for k, (fp, fs) in enumerate(self.slots):
            if abs((fp - fs) - self.receive_frequency) > 1e-6:
                raise InvalidConfiguration(
                    f"slot {k}: f_primary - f_secondary = {fp - fs} != {self.receive_frequency}"
                )
            if fp < self.min_primary:
                raise InvalidConfiguration(
                    f"slot {k}: f_primary {fp} Hz below nonlinear regime ({self.min_primary} Hz)"
                )
        if self.hopping:
            for k in range(1, len(self.slots)):
                if self.slots[k][0] == self.slots[k - 1][0]:
                    raise InvalidConfiguration(f"slots {k - 1} and {k} share f_primary; no hop")

    @property
    def n_slots(self):
        return len(self.slots)

    @property
    def duration(self):
        return self.n_slots * self.hop_period

    @property
    def pairs(self):
        """Distinct (f_primary, f_secondary) pairs in order of first use."""
        seen = []
        for s in self.slots:
            if s not in seen:
                seen.append(s)
        return tuple(seen)

    @property
    def pair_ids(self):
        pairs = self.pairs
        return np.array([pairs.index(s) for s in self.slots], dtype=int)

    @property
    def pair_period(self):
        """Time between consecutive slots that use the same pair."""
        return self.hop_period * len(self.pairs)

    def slot_index(self, t):
        return np.floor(np.asarray(t, dtype=float) / self.hop_period + 1e-9).astype(int)

    def frequencies_at(self, t):
        """Per-sample (f_primary, f_secondary); slots repeat cyclically outside the plan.

        With a nonzero ``glide`` the frequency moves from the previous slot's
        value to the current one along a half cosine over the first ``glide``
        seconds of the slot instead of jumping.
        """
        t = np.asarray(t, dtype=float)
        k = self.slot_index(t)
        table = np.asarray(self.slots)
        cur = table[k % self.n_slots]
        if self.glide <= 0:
            return cur[..., 0], cur[..., 1]
        prev = table[(k - 1) % self.n_slots]
        x = np.clip((t - k * self.hop_period) / self.glide, 0.0, 1.0)
        a = (0.5 - 0.5 * np.cos(np.pi * x))[..., None]
        f = prev + a * (cur - prev)
        return f[..., 0], f[..., 1]

    def to_dict(self):
        return {
            "hop_period": self.hop_period,
            "receive_frequency": self.receive_frequency,
            "hopping": self.hopping,
            "glide": self.glide,
            "slots": [list(s) for s in self.slots],
        }


def build_hop_schedule(f_rcv, base_primary, hop_step, hop_period=3e-3, duration=None,
                       min_primary=NONLINEAR_MIN_PRIMARY, glide=0.0):
    """Two-slot round robin between ``base_primary`` and ``base_primary + hop_step``.

    Examples
    --------
    >>> s = build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 12e-3)
    >>> [tuple(int(f) for f in slot) for slot in s.slots]
    [(40000, 33000), (42000, 35000), (40000, 33000), (42000, 35000)]
    """
    if duration is None:
        duration = 2 * hop_period
    if f_rcv <= 0:
        raise InvalidConfiguration("f_rcv must be > 0")
    if base_primary < min_primary:
        raise InvalidConfiguration(f"base_primary must be >= {min_primary} Hz")
    if hop_step <= 0:
        raise InvalidConfiguration("hop_step must be > 0 (use build_fixed_schedule for no hopping)")
    if duration <= 0 or hop_period <= 0:
        raise InvalidConfiguration("duration and hop_period must be > 0")
    n = max(1, math.ceil(duration / hop_period - 1e-9))
    pair = [(base_primary, base_primary - f_rcv),
            (base_primary + hop_step, base_primary + hop_step - f_rcv)]
    slots = [pair[k % 2] for k in range(n)]
    return ToneSchedule(hop_period, tuple(slots), f_rcv, hopping=True, min_primary=min_primary,
                        glide=glide)


def build_fixed_schedule(f_rcv, f_primary, hop_period=3e-3, duration=None,
                         min_primary=NONLINEAR_MIN_PRIMARY):
    """Single tone pair held for the whole run (the no-hopping baseline)."""
    if duration is None:
        duration = hop_period
    n = max(1, math.ceil(duration / hop_period - 1e-9))
    slots = [(f_primary, f_primary - f_rcv)] * n
    return ToneSchedule(hop_period, tuple(slots), f_rcv, hopping=False, min_primary=min_primary)


@dataclass(frozen=True)
class TransmitWaveforms:
    """Sampled transmit tones.  Sample ``n`` sits at ``start_time + n / sample_rate``."""

    primary_samples: np.ndarray
    secondary_samples: np.ndarray
    sample_rate: float
    schedule: ToneSchedule
    start_time: float = 0.0
    phase_continuous: bool = True
    primary_gain: float = 1.0
    secondary_gain: float = 0.2
    secondary_lag: float = 0.0
    primary_frequency: np.ndarray = field(default=None, repr=False)
    secondary_frequency: np.ndarray = field(default=None, repr=False)

    @property
    def n_samples(self):
        return len(self.primary_samples)

    @property
    def times(self):
        return self.start_time + np.arange(self.n_samples) / self.sample_rate

    @property
    def end_time(self):
        return self.start_time + self.n_samples / self.sample_rate


def secondary_lag_for_range(beacon_range, secondary_range, medium=None):
    """Hop lag that makes both tones' hops reach a microphone together.

    With the beacon ``beacon_range`` metres and the secondary source
    ``secondary_range`` metres from a microphone, delaying the secondary's
    hops by the difference in flight time keeps the down-converted line
    phase-continuous across hops at that microphone.
    """
    from .signal_core import Medium

    medium = medium or Medium()
    return (beacon_range - secondary_range) / medium.speed_of_sound


def synthesize_transmit(schedule, sample_rate=192e3, start_time=0.0, end_time=None,
                        primary_gain=1.0, secondary_gain=0.2, secondary_lag=0.0):
    """Phase-continuous unit sinusoids following the schedule.

    Each tone's phase is the running sum of its instantaneous frequency, so a
    hop changes the slope of the phase but never its value.  The secondary
    tone hops ``secondary_lag`` seconds after the primary.
    """
    fmax = max(fp for fp, _ in schedule.slots)
    if sample_rate < 2 * fmax:
        raise InvalidConfiguration(
            f"sample_rate {sample_rate} Hz is below Nyquist for f_primary {fmax} Hz"
        )
    if end_time is None:
        end_time = schedule.duration
    n = int(round((end_time - start_time) * sample_rate))
    t = start_time + np.arange(n) / sample_rate
    f1, _ = schedule.frequencies_at(t)
    _, f2 = schedule.frequencies_at(t - secondary_lag)
    # phase at sample n integrates frequency over samples [0, n)
    ph1 = 2 * np.pi * np.concatenate(([0.0], np.cumsum(f1[:-1]))) / sample_rate
    ph2 = 2 * np.pi * np.concatenate(([0.0], np.cumsum(f2[:-1]))) / sample_rate
    return TransmitWaveforms(
        primary_samples=np.sin(ph1),
        secondary_samples=np.sin(ph2),
        sample_rate=float(sample_rate),
        schedule=schedule,
        start_time=float(start_time),
        primary_gain=primary_gain,
        secondary_gain=secondary_gain,
        secondary_lag=float(secondary_lag),
        primary_frequency=f1,
        secondary_frequency=f2,
    )
