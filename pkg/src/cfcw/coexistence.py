"""Band separation between speech and the 7 kHz tracking line."""
import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal

VOICE_BAND = (20.0, 4000.0)
TRACKING_BAND = (6000.0, 8000.0)
LINE_HALF_WIDTH = 1000.0
AUDIO_LOW_CUT = 20.0  # microphones are AC coupled; ignore DC and sub-audio drift


@dataclass
class BandReport:
    voice_band_power: float  # dB re 1.0^2
    tracking_band_power: float
    leakage_ratio: float  # dB, tracking energy outside 7 +- 1 kHz relative to inside
    voice_band_delta: float = float("nan")  # dB vs the reference capture
    tracking_band_delta: float = float("nan")
    concentration: float = float("nan")  # share of tracking power inside 7 +- 1 kHz

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k, v in asdict(self).items():
                w.writerow([k, f"{v:.6f}"])


def power_spectrum(x, fs=16000.0, window_s=0.032, overlap=0.5):
    """Welch PSD averaged over channels (Hann, 50% overlap)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    nper = int(round(window_s * fs))
    f, p = signal.welch(x, fs=fs, window="hann", nperseg=nper, noverlap=int(nper * overlap),
                        detrend=False, axis=-1)
    return f, p.mean(axis=0)


def band_power(f, psd, lo, hi):
    df = f[1] - f[0]
    sel = (f >= lo) & (f < hi)
    return float(np.sum(psd[sel]) * df)


def _db(p):
    return 10.0 * np.log10(max(p, 1e-300))


def band_energy_report(capture, reference=None, f_rcv=7000.0):
    """Voice- and tracking-band powers of ``capture``.

    With a voice-only ``reference`` recorded under the same conditions, the
    tracking contribution is isolated as the difference of the two PSDs
    and the voice-band change is reported.  Without one, the whole capture is
    treated as tracking signal for the leakage ratio.
    """
    fs = capture.sample_rate
    f, p = power_spectrum(capture.channels, fs)
    voice = band_power(f, p, *VOICE_BAND)
    track = band_power(f, p, *TRACKING_BAND)
    if reference is not None:
        _, pr = power_spectrum(reference.channels, fs)
        extra = np.maximum(p - pr, 0.0)
        v_delta = _db(voice) - _db(band_power(f, pr, *VOICE_BAND))
        t_delta = _db(track) - _db(band_power(f, pr, *TRACKING_BAND))
    else:
        extra = p
        v_delta = t_delta = float("nan")
    inside = band_power(f, extra, f_rcv - LINE_HALF_WIDTH, f_rcv + LINE_HALF_WIDTH)
    total = band_power(f, extra, AUDIO_LOW_CUT, fs / 2 + 1)
    outside = max(total - inside, 0.0)
    return BandReport(_db(voice), _db(track), _db(outside) - _db(inside), v_delta, t_delta,
                      inside / total if total > 0 else float("nan"))
