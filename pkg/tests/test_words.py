import numpy as np
import pytest

from cfcw.errors import InvalidArgument
from cfcw.words import (CORPUS, LIFT, POSES, STOP, STROKE, SyntheticWordSpec, constant_speed_radial,
                        generate_word, radial_path, star_path, tracking_noise)


def test_fit_template():
    w = generate_word(SyntheticWordSpec(word="fit", size=0.10, pose="flat-top"))
    assert w.n_lifts == 2
    assert len(w.stop_times) >= 5
    assert set(np.unique(w.labels)) == {STROKE, LIFT, STOP}
    # lift arcs leave the surface by the programmed height
    z = w.positions[:, 2]
    assert np.max(z[w.labels == LIFT]) - np.median(z[w.labels == STROKE]) == pytest.approx(0.02, abs=1e-3)


def test_size_scaling():
    w = generate_word(SyntheticWordSpec(word="fit", size=0.03))
    width = np.ptp(w.positions[:, 0])
    assert width == pytest.approx(0.03, abs=1e-3)


def test_speed_cap():
    w = generate_word(SyntheticWordSpec(word="home", size=0.2, speed=1.0))
    p, t = w.positions, w.timestamps
    v = np.linalg.norm(p[2:] - p[:-2], axis=1) / (t[2:] - t[:-2])
    assert v.max() <= 1.0 + 1e-9
    with pytest.raises(InvalidArgument):
        SyntheticWordSpec(speed=1.5)


@pytest.mark.parametrize("pose", sorted(POSES))
def test_poses_keep_ink_shape(pose):
    w = generate_word(SyntheticWordSpec(word="fit", pose=pose))
    on = w.labels == STROKE
    # flat ink distances equal 3D distances for planar poses
    i = np.flatnonzero(on)[::50]
    d3 = np.linalg.norm(w.positions[i][:, None] - w.positions[i][None], axis=-1)
    d2 = np.linalg.norm(w.ink[i][:, None] - w.ink[i][None], axis=-1)
    assert np.allclose(d3, d2, atol=1e-9)


def test_cylinder_ink_is_unrolled():
    w = generate_word(SyntheticWordSpec(word="fit", surface="cylinder", radius=0.1))
    on = np.flatnonzero(w.labels == STROKE)
    step3 = np.linalg.norm(np.diff(w.positions[on], axis=0), axis=1)
    step2 = np.linalg.norm(np.diff(w.ink[on], axis=0), axis=1)
    small = step2 < 1e-3
    assert np.allclose(step3[small], step2[small], rtol=1e-2, atol=1e-7)


@pytest.mark.parametrize("bad", [dict(size=0.01), dict(size=0.3), dict(pose="upside"),
                                 dict(word="f1t"), dict(word=""), dict(surface="sphere")])
def test_invalid_specs(bad):
    with pytest.raises(InvalidArgument):
        SyntheticWordSpec(**bad)


def test_corpus_words_generate():
    assert len(CORPUS) == 50
    for word in CORPUS[:10]:
        assert len(generate_word(SyntheticWordSpec(word=word)).timestamps) > 100


def test_motion_generators():
    p = radial_path([0, 0.05, 0.25], 0.005, 0.3)
    assert np.linalg.norm(p.positions[-1]) - np.linalg.norm(p.positions[0]) == pytest.approx(0.005)
    path, s = constant_speed_radial([0, 0.03, 0.15], 2.0, 0.16, ramp=0.05)
    v = np.diff(s) / np.diff(path.timestamps)
    assert v[-1] == pytest.approx(2.0, rel=1e-3)
    star = star_path([0, 0, 0.25], size=0.08, speed=0.5)
    assert star.max_speed <= 0.5 * 1.01
    n = tracking_noise(1000, seed=1)
    assert n.shape == (1000, 3)
    assert np.array_equal(n, tracking_noise(1000, seed=1))
