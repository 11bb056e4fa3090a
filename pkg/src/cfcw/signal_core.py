"""Physical constants and phase/distance conversions shared by every stage.

Phases are in radians and wrapped into [-pi, pi].  A positive phase delta
means the path got longer (the beacon moved away).
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

SPEED_OF_SOUND = 343.0  # m/s, dry air at 20 C
CAPTURE_RATE = 16000.0  # Hz, voice-assistant microphone rate


@dataclass(frozen=True)
class Medium:
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        if not np.isfinite(self.speed_of_sound) or self.speed_of_sound <= 0:
            raise InvalidArgument(f"speed_of_sound must be > 0, got {self.speed_of_sound}")

    def wavelength(self, frequency):
        return self.speed_of_sound / frequency


@dataclass(frozen=True)
class NonlinearityModel:
    """Square-law microphone model ``y = linear_gain * x + quadratic_gain * x**2``."""

    linear_gain: float = 1.0
    quadratic_gain: float = 0.1

    def __post_init__(self):
        a1, a2 = self.linear_gain, self.quadratic_gain
        if not (np.isfinite(a1) and np.isfinite(a2)):
            raise InvalidArgument("nonlinearity gains must be finite")
        if a1 <= 0 or a2 < 0 or a2 >= a1:
            raise InvalidArgument(
                f"need linear_gain > 0 and 0 <= quadratic_gain < linear_gain, got {a1}, {a2}"
            )

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return self.linear_gain * x + self.quadratic_gain * x * x


@dataclass(frozen=True)
class PhaseSample:
    wrapped_phase: float
    frame_index: int
    frequency: float

    def __post_init__(self):
        if not -np.pi <= self.wrapped_phase <= np.pi:
            raise InvalidArgument(f"wrapped_phase {self.wrapped_phase} outside [-pi, pi]")


def wrap_phase(phi):
    """Wrap angles into [-pi, pi)."""
    return (np.asarray(phi) + np.pi) % (2 * np.pi) - np.pi


def _finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise InvalidArgument(f"non-finite argument: {v!r}")


def phase_to_distance_delta(dphi, f_primary, medium=Medium()):
    """Convert a phase change at the primary frequency into a path-length change.

    Works elementwise on arrays.
    """
    _finite(dphi, f_primary)
    if np.any(np.asarray(f_primary) <= 0):
        raise InvalidArgument("f_primary must be > 0")
    return np.asarray(dphi) * medium.speed_of_sound / (2 * np.pi * np.asarray(f_primary))


def distance_to_phase_delta(dd, f_primary, medium=Medium()):
    _finite(dd, f_primary)
    return 2 * np.pi * np.asarray(f_primary) * np.asarray(dd) / medium.speed_of_sound


def max_unambiguous_speed(f_primary, frame_period, medium=Medium(), velocity_aided=False):
    """Fastest radial speed whose per-frame phase step can still be unwrapped.

    Classic unwrapping needs the step below pi, i.e. ``v < c / (2 f T)``.
    Choosing the wrap direction from recent velocity relaxes the step bound to
    2 pi, doubling the ceiling.
    """
    _finite(f_primary, frame_period)
    if f_primary <= 0 or frame_period <= 0:
        raise InvalidArgument("f_primary and frame_period must be > 0")
    v = medium.speed_of_sound / (2.0 * f_primary * frame_period)
    return 2.0 * v if velocity_aided else v


def interference_error_bound(amplitude_ratio, f_primary, medium=Medium()):
    """Worst-case (phase, distance) error from one weaker interfering path.

    A phasor of relative amplitude ``r <= 1`` added to the line-of-sight
    phasor rotates the sum by at most ``asin(r)``.
    """
    _finite(amplitude_ratio, f_primary)
    if not 0.0 <= amplitude_ratio <= 1.0:
        raise InvalidArgument(f"amplitude_ratio must be in [0, 1], got {amplitude_ratio}")
    if f_primary <= 0:
        raise InvalidArgument("f_primary must be > 0")
    dphi = float(np.arcsin(amplitude_ratio))
    return dphi, dphi * medium.speed_of_sound / (2 * np.pi * f_primary)
