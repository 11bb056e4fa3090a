import csv

import numpy as np
import pytest

from cfcw import sim
from cfcw.demod import (DemodConfig, demodulate, frame_spectra, los_window_delay,
                        max_window_delay, slot_speed_limit, track_range, unwrap_phase)
from cfcw.errors import InvalidConfiguration, TruncatedCapture
from cfcw.tx import build_fixed_schedule, build_hop_schedule, synthesize_transmit
from cfcw.words import radial_path

C = 343.0
FS = 16000.0


def _line(schedule, distance, n_mics=1, duration=None, offset=0.3):
    """Ideal 7 kHz line whose phase is -2 pi f_primary(slot) d(t) / c."""
    duration = duration or schedule.n_slots * schedule.hop_period + 0.01
    t = np.arange(int(duration * FS)) / FS
    slot = np.minimum((t // schedule.hop_period).astype(int), schedule.n_slots - 1)
    f1 = np.array([schedule.pairs[p][0] for p in schedule.pair_ids])[slot]
    phi = -2 * np.pi * f1 * distance(t) / C + offset
    x = np.cos(2 * np.pi * 7e3 * t + phi)
    return sim.RawCapture(np.repeat(x[None], n_mics, 0), FS)


def test_static_scene_has_constant_phase():
    sch = build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 0.3)
    cap = _line(sch, lambda t: np.full_like(t, 0.25))
    spec = frame_spectra(cap, sch)
    for p in range(2):
        wp = spec.wrapped_phase[0, spec.pair_ids == p]
        assert np.ptp(np.unwrap(wp)) < 1e-9
    # coefficient of cos(w n + phi) is exp(i phi); propagation phase is its negative
    want = 2 * np.pi * 40e3 * 0.25 / C - 0.3
    assert np.angle(np.exp(1j * (spec.wrapped_phase[0, 0] - want))) == pytest.approx(0, abs=1e-9)
    assert not spec.low_snr.any()


def test_linear_ramp_gives_linear_distance_change():
    sch = build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 0.3)
    v = 0.1
    cap = _line(sch, lambda t: 0.25 + v * t)
    tr = demodulate(cap, sch)
    k = np.arange(sch.n_slots)
    want = v * sch.hop_period * k
    # in-window Doppler leaves a small phase-dependent ripple, no drift
    assert np.max(np.abs(tr.distance_change[0] - want)) < 20e-6
    slope = np.polyfit(k * sch.hop_period, tr.distance_change[0], 1)[0]
    assert slope == pytest.approx(v, rel=2e-3)
    assert tr.reliable.all()


def test_zero_motion_gives_zero_change():
    sch = build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 0.1)
    tr = demodulate(_line(sch, lambda t: np.full_like(t, 0.3), n_mics=3), sch)
    assert np.allclose(tr.distance_change, 0.0, atol=1e-12)


def test_window_placement_follows_delay():
    sch = build_fixed_schedule(7e3, 40e3, 3e-3, 0.03)
    cap = _line(sch, lambda t: np.full_like(t, 0.25))
    cfg = DemodConfig(guard_samples=2)
    spec = frame_spectra(cap, sch, cfg, delays=0.8e-3)
    k = np.arange(sch.n_slots)
    assert np.array_equal(spec.window_start[0], np.ceil((k * 3e-3 + 0.8e-3) * FS - 1e-9).astype(int) + 2)


def test_los_window_waits_for_both_tones(array):
    near = los_window_delay(array, [0.0, 0.0, 0.05])
    far = los_window_delay(array, [0.0, 0.0, 0.6])
    ts = np.linalg.norm(array.secondary_source_position - array.mic_positions, axis=1) / C
    assert np.allclose(near, ts)
    assert np.allclose(far, np.linalg.norm([0, 0, 0.6] - array.mic_positions, axis=1) / C)
    assert np.all(max_window_delay(build_hop_schedule(7e3, 40e3, 2e3)) > far)


def _replica_error(schedule, delay, gain=0.8):
    """Max LOS phase change caused by a delayed copy of the beacon tone."""
    fs = 192e3
    tx = synthesize_transmit(schedule, fs, 0.0, schedule.duration + 0.01)

    def late(x, n):
        return np.r_[np.zeros(n), x[:len(x) - n]]

    n_los, n_sec = 140, 84  # 0.25 m and 0.15 m at the simulation rate
    base = late(tx.primary_samples, n_los) / 0.25 + 0.2 * late(tx.secondary_samples, n_sec) / 0.15
    out = []
    for g in (0.0, gain):
        p = base + g * late(tx.primary_samples, n_los + int(round(delay * fs))) / 0.25
        cap = sim.capture(sim.PressureField(p[None], fs, 0.0, 42e3))
        out.append(frame_spectra(cap, schedule, delays=n_los / fs).wrapped_phase[0])
    return np.max(np.abs(np.angle(np.exp(1j * (out[0] - out[1]))))[2:])


def test_hopping_rejects_late_replica():
    """A replica that arrives after the window carries the previous slot's tone,
    so it mixes away from 7 kHz; without hopping it lands on the line."""
    hop = _replica_error(build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 0.06), 2.2e-3)
    fixed = _replica_error(build_fixed_schedule(7e3, 40e3, 3e-3, 0.06), 2.2e-3)
    assert hop < 0.02
    assert fixed > 10 * hop


def test_unwrap_classic_vs_velocity_aided():
    # increments ramp from 0 to 1.6 pi per step: beyond pi the classic rule folds back
    inc = np.linspace(0, 1.6 * np.pi, 60)
    phi = np.cumsum(inc)
    wrapped = np.angle(np.exp(1j * phi))
    classic, _ = unwrap_phase(wrapped, velocity_aided=False)
    aided, bad = unwrap_phase(wrapped, velocity_aided=True)
    assert np.allclose(aided - aided[0], phi - phi[0], atol=1e-9)
    assert not bad.any()
    assert np.max(np.abs(classic - phi)) > 1.0


def test_unwrap_flags_full_cycle_steps():
    inc = np.linspace(0, 2.6 * np.pi, 60)
    aided, bad = unwrap_phase(np.angle(np.exp(1j * np.cumsum(inc))))
    assert bad.any()
    first = np.argmax(bad)
    assert inc[first] >= 1.5 * np.pi


def test_speed_limits():
    sch = build_hop_schedule(7e3, 40e3, 2e3, 3e-3)
    lim = slot_speed_limit(sch, velocity_aided=False)
    assert lim == pytest.approx(C / (2 * 42e3 * 6e-3))
    assert slot_speed_limit(sch) == pytest.approx(2 * lim)


@pytest.mark.parametrize("seed", [0, 1])
def test_retreat_of_5mm_is_tracked(array, seed):
    sch = build_hop_schedule(7e3, 40e3, 2e3, 3e-3, 0.5)
    start = np.array([0.0, 0.05, 0.25])
    path = radial_path(start, 0.005, 0.53)
    # delay the secondary hop so both hops reach the array together
    ds = np.linalg.norm(array.secondary_source_position - array.mic_positions, axis=1).mean()
    lag = (np.linalg.norm(start - array.centroid) - ds) / C
    cap = sim.simulate(sim.Scene(geometry=array, mic_snr_db=60.0), path, sch, seed=seed,
                       secondary_lag=lag)
    tr = demodulate(cap, sch, delays=los_window_delay(array, start, secondary_lag=lag))
    # the centre mic sits at the origin, so its range grows by exactly 5 mm
    assert tr.distance_change[0, -1] == pytest.approx(0.005, abs=10e-6)
    d = np.linalg.norm(path.position_at(tr.timestamps)[:, None, :] - array.mic_positions, axis=2).T
    assert np.median(np.abs(tr.distance_change - (d - d[:, :1]))) < 10e-6


def test_phase_csv(tmp_path):
    sch = build_fixed_schedule(7e3, 40e3, 3e-3, 0.03)
    tr = demodulate(_line(sch, lambda t: 0.25 + 0.05 * t, n_mics=2), sch)
    tr.to_csv(tmp_path / "phase.csv")
    rows = list(csv.DictReader(open(tmp_path / "phase.csv")))
    assert len(rows) == 2 * sch.n_slots
    assert set(rows[0]) == {"frame_index", "mic_id", "wrapped_phase", "unwrapped_phase",
                            "distance_change"}
    assert float(rows[-1]["distance_change"]) == pytest.approx(tr.distance_change[1, -1], rel=1e-6)


def test_bad_configs():
    with pytest.raises(InvalidConfiguration):
        DemodConfig(win_los=0.2e-3)
    sch = build_fixed_schedule(7e3, 40e3, 3e-3, 0.03)
    with pytest.raises(InvalidConfiguration):
        frame_spectra(_line(sch, lambda t: 0.25 + 0 * t), sch, DemodConfig(frame_rate=100.0))
    short = sim.RawCapture(np.zeros((1, 100)), FS)
    with pytest.raises(TruncatedCapture):
        frame_spectra(short, sch)
