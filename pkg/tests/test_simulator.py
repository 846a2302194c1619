import math

import numpy as np
import pytest

from evsim.errors import EmptySequence, NonMonotonicTimestamps, UsageError
from evsim.simulator import (
    EventGenerator,
    FrameSequence,
    SimulatorConfig,
    generate_events,
    log_intensity,
    reconstruct,
    reconstruction_errors,
    rgb_to_luma,
)
from oracles import dense_crossings

EPS = 1e-3


def frames_from_log(levels):
    """Intensity frames whose log(I + eps) reproduces ``levels``."""
    return np.exp(np.asarray(levels, dtype=np.float64)) - EPS


def single_pixel_seq(times, levels):
    return FrameSequence(np.asarray(times, dtype=float), frames_from_log(levels).reshape(-1, 1, 1))


def test_luma_examples():
    assert rgb_to_luma([1.0, 0.0, 0.0]) == pytest.approx(0.299)
    # longhand: 0.0598 + 0.2935 + 0.0912
    assert rgb_to_luma([0.2, 0.5, 0.8]) == pytest.approx(0.4445, abs=1e-12)
    v = np.linspace(0, 1, 7)
    np.testing.assert_allclose(rgb_to_luma(np.stack([v, v, v], -1)), v, atol=1e-15)


def test_log_intensity_examples():
    assert log_intensity(np.array(1.0)) == pytest.approx(math.log(1.001), rel=1e-15)
    assert log_intensity(np.array(0.0)) == pytest.approx(math.log(1e-3))
    a = log_intensity(np.array([0.1, 0.2, 0.7]))
    assert np.all(np.diff(a) > 0)


def test_config_validation():
    with pytest.raises(UsageError):
        SimulatorConfig(contrast_threshold=0.0)
    with pytest.raises(UsageError):
        SimulatorConfig(log_eps=-1.0)


def test_ramp_gives_three_positive_events():
    ev = generate_events(single_pixel_seq([0.0, 0.1], [0.0, 0.52]), SimulatorConfig(0.15))
    assert len(ev) == 3 and set(ev.p.tolist()) == {1}
    expected = [0.1 * 0.15 / 0.52, 0.1 * 0.30 / 0.52, 0.1 * 0.45 / 0.52]
    np.testing.assert_allclose(ev.t, expected, atol=1e-12, rtol=0)
    np.testing.assert_allclose(ev.t, [0.02885, 0.05769, 0.08654], atol=5e-6)


def test_ramp_reconstruction_error():
    seq = single_pixel_seq([0.0, 0.1], [0.0, 0.52])
    ev = generate_events(seq, SimulatorConfig(0.15))
    rec = reconstruct(log_intensity(seq.frames[0]), ev, 0.15, 0.1)
    assert rec[0, 0] == pytest.approx(0.45, abs=1e-12)
    assert abs(rec[0, 0] - 0.52) == pytest.approx(0.07, abs=1e-12)


def test_falling_ramp_gives_one_negative_event():
    ev = generate_events(single_pixel_seq([0.0, 0.1], [0.0, -0.2]), SimulatorConfig(0.15))
    assert len(ev) == 1 and ev.p[0] == -1
    assert ev.t[0] == pytest.approx(0.075, abs=1e-12)


def test_constant_sequence_has_no_events(rng):
    frame = rng.random((20, 30))
    seq = FrameSequence(np.arange(10) * 0.01, np.repeat(frame[None], 10, axis=0))
    assert len(generate_events(seq)) == 0


def test_too_few_frames_and_bad_timestamps():
    with pytest.raises(EmptySequence):
        generate_events(single_pixel_seq([0.0], [0.0]))
    with pytest.raises(NonMonotonicTimestamps):
        single_pixel_seq([0.0, 0.1, 0.1], [0.0, 0.1, 0.2])
    with EventGenerator(np.ones((2, 2)), 1.0) as gen:
        with pytest.raises(NonMonotonicTimestamps):
            gen.push(np.ones((2, 2)), 0.5)


def test_random_signals_match_dense_oracle(rng):
    n_pix, n_frames, C = 300, 5, 0.15
    times = np.cumsum(np.r_[0.0, rng.uniform(0.005, 0.05, n_frames - 1)])
    levels = rng.uniform(-2.0, 0.5, (n_frames, n_pix))
    seq = FrameSequence(times, frames_from_log(levels).reshape(n_frames, 1, n_pix))
    ev = generate_events(seq, SimulatorConfig(C))
    oracle = dense_crossings(times, log_intensity(seq.frames).reshape(n_frames, n_pix), C)
    for x in range(n_pix):
        mine = ev.x == x
        ref = oracle[x]
        assert mine.sum() == len(ref)
        if ref:
            np.testing.assert_allclose(ev.t[mine], [t for t, _ in ref], atol=1e-12, rtol=0)
            assert ev.p[mine].tolist() == [p for _, p in ref]


def test_polarity_matches_sign_of_change_and_monotone_count(rng):
    C = 0.2
    levels = np.sort(rng.uniform(-2, 1, (4, 50)), axis=0)  # monotone rising per pixel
    levels[:, 25:] = levels[::-1, 25:]                      # half falling
    times = np.array([0.0, 0.01, 0.02, 0.03])
    seq = FrameSequence(times, frames_from_log(levels).reshape(4, 1, 50))
    ev = generate_events(seq, SimulatorConfig(C))
    L = log_intensity(seq.frames).reshape(4, 50)
    delta = L[-1] - L[0]
    for x in range(50):
        mine = ev.x == x
        assert mine.sum() == math.floor(abs(delta[x]) / C + 1e-12)
        assert np.all(ev.p[mine] == np.sign(delta[x]))


def test_streaming_generator_matches_batch(rng):
    seq = FrameSequence(np.arange(8) * 0.01, rng.random((8, 12, 17)))
    whole = generate_events(seq, SimulatorConfig(0.2))
    with EventGenerator(seq.frames[0], 0.0, SimulatorConfig(0.2), threads=3) as gen:
        batches = list(gen.run(list(seq)[1:]))
        assert gen.num_events == len(whole)
    assert np.array_equal(np.concatenate([b.t for b in batches]), whole.t)
    for k, b in enumerate(batches):
        assert np.all((b.t > seq.timestamps[k]) & (b.t <= seq.timestamps[k + 1]))
        assert b.is_canonical()


def test_reference_levels_stay_on_grid(rng):
    seq = FrameSequence(np.arange(6) * 0.01, rng.random((6, 9, 9)))
    C = 0.15
    with EventGenerator(seq.frames[0], 0.0, SimulatorConfig(C)) as gen:
        for _ in gen.run(list(seq)[1:]):
            pass
        s = gen.state
        steps = (s.reference_level - s.initial_level) / C
        np.testing.assert_allclose(steps, np.rint(steps), atol=1e-9)


def test_thread_count_does_not_change_output(rng):
    seq = FrameSequence(np.arange(6) * 0.01, rng.random((6, 33, 21)))
    ref = generate_events(seq, threads=1)
    for n in (2, 5, 64):
        assert generate_events(seq, threads=n) == ref


def test_reconstruction_bound_on_random_frames(rng):
    for C in (0.15, 0.2):
        seq = FrameSequence(np.arange(12) * 0.01, rng.random((12, 16, 16)))
        ev = generate_events(seq, SimulatorConfig(C))
        assert reconstruction_errors(seq, ev, SimulatorConfig(C)).max() < C + 1e-9
