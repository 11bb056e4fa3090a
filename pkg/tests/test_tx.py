import numpy as np
import pytest
from scipy.signal import hilbert

from cfcw.errors import InvalidConfiguration
from cfcw.tx import (ToneSchedule, build_fixed_schedule, build_hop_schedule,
                     secondary_lag_for_range, synthesize_transmit)


def slots(s):
    return [tuple(int(f) for f in slot) for slot in s.slots]


def test_hop_schedule_examples():
    assert slots(build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 12e-3)) == [
        (40000, 33000), (42000, 35000), (40000, 33000), (42000, 35000)]
    assert slots(build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 3e-3)) == [(40000, 33000)]
    assert slots(build_hop_schedule(7e3, 80e3, 2e3, 3e-3, 6e-3)) == [(80000, 73000),
                                                                      (82000, 75000)]


def test_slot_count_is_ceiling():
    assert build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 10e-3).n_slots == 4


@pytest.mark.parametrize("kw", [
    dict(f_rcv=0.0), dict(base_primary=20e3), dict(hop_step=0.0), dict(f_rcv=9e3),
])
def test_hop_schedule_rejects(kw):
    args = dict(f_rcv=7e3, base_primary=40e3, hop_step=2e3, hop_period=3e-3, duration=12e-3)
    args.update(kw)
    with pytest.raises(InvalidConfiguration):
        build_hop_schedule(**args)


def test_schedule_invariants():
    with pytest.raises(InvalidConfiguration):
        ToneSchedule(3e-3, [(40e3, 34e3)], 7e3)  # difference is not f_rcv
    with pytest.raises(InvalidConfiguration):
        ToneSchedule(3e-3, [(40e3, 33e3), (40e3, 33e3)], 7e3, hopping=True)
    s = build_fixed_schedule(7e3, 40e3, 3e-3, 9e-3)
    assert not s.hopping and len(s.pairs) == 1


def test_single_slot_waveforms():
    s = build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 3e-3)
    tx = synthesize_transmit(s, 192e3)
    assert tx.n_samples == 576
    t = np.arange(576) / 192e3
    assert np.allclose(tx.primary_samples, np.sin(2 * np.pi * 40e3 * t), atol=1e-9)
    assert np.allclose(tx.secondary_samples, np.sin(2 * np.pi * 33e3 * t), atol=1e-9)


def test_instantaneous_frequency_follows_schedule():
    # long slots so the analytic-signal ringing at each hop has died out mid-slot
    fs, hop = 192e3, 20e-3
    s = build_hop_schedule(7e3, 40e3, 2e3, hop, 2 * hop)
    tx = synthesize_transmit(s, fs)
    for x, col in [(tx.primary_samples, 0), (tx.secondary_samples, 1)]:
        ph = np.unwrap(np.angle(hilbert(x)))
        f = np.diff(ph) * fs / (2 * np.pi)
        for k, slot in enumerate(s.slots):
            a = int((k * hop + 6e-3) * fs)
            b = int(((k + 1) * hop - 6e-3) * fs)
            assert np.max(np.abs(f[a:b] - slot[col])) < 1.0


def test_phase_continuity_at_hops():
    fs = 192e3
    s = build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 12e-3)
    tx = synthesize_transmit(s, fs)
    limit = 2 * np.pi * 42e3 / fs  # largest step of a continuous unit sinusoid
    for x in (tx.primary_samples, tx.secondary_samples):
        assert np.max(np.abs(np.diff(x))) <= limit + 1e-9


def test_difference_frequency_is_receive_frequency():
    fs = 192e3
    s = build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 30e-3)
    tx = synthesize_transmit(s, fs)
    for k in range(s.n_slots):
        a, b = int(k * 3e-3 * fs), int((k + 1) * 3e-3 * fs)
        prod = tx.primary_samples[a:b] * tx.secondary_samples[a:b]
        n = 8192
        spec = np.abs(np.fft.rfft(prod, n))
        f = np.fft.rfftfreq(n, 1 / fs)
        low = f < 20e3
        assert abs(f[low][np.argmax(spec[low])] - 7e3) <= fs / n


def test_nyquist_check():
    s = ToneSchedule(3e-3, [(100e3, 93e3)], 7e3, hopping=False)
    with pytest.raises(InvalidConfiguration):
        synthesize_transmit(s, 192e3)
    synthesize_transmit(s, 256e3)


def test_secondary_lag_delays_secondary_hop():
    fs = 192e3
    s = build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 6e-3)
    lag = 0.5e-3
    tx = synthesize_transmit(s, fs, secondary_lag=lag)
    assert np.all(tx.secondary_frequency[(tx.times >= 3e-3) & (tx.times < 3e-3 + lag)] == 33e3)
    assert np.all(tx.secondary_frequency[(tx.times >= 3e-3 + lag) & (tx.times < 6e-3)] == 35e3)
    assert np.all(tx.primary_frequency[tx.times >= 3e-3] == 42e3)
    assert secondary_lag_for_range(0.3, 0.15) == pytest.approx(0.15 / 343)


def test_glide_is_smooth():
    s = build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 12e-3, glide=0.2e-3)
    t = np.linspace(0, 12e-3, 5000)
    f1, f2 = s.frequencies_at(t)
    assert np.allclose(f1 - f2, 7e3)
    assert np.max(np.abs(np.diff(f1))) < 100
    with pytest.raises(InvalidConfiguration):
        build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 12e-3, glide=2e-3)
