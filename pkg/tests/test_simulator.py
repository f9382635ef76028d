import numpy as np
import pytest

from evfi.errors import DegenerateTimestamps, EmptyScene, InvalidScene
from evfi.events import EventStream, TimeWindow, write_events
from evfi.simulator import (
    FrameSequence,
    Scene,
    SceneConfig,
    SceneObject,
    SimulatorConfig,
    TextureSpec,
    Trajectory,
    dense_sequence,
    generate_scene,
    log_luma,
    random_scene_config,
    reconstruct_log,
    simulate,
)

C = 0.15
EPS = 1e-3


def gray(value: float, h: int = 1, w: int = 1) -> np.ndarray:
    return np.full((h, w, 3), value)


def gray_for_log(level: float) -> float:
    """Gray value whose log luminance is ``level``."""
    return float(np.exp(level) - EPS)


def bisect_crossing(l0: float, l1: float, level: float, iters: int = 200) -> float:
    """Time in [0, 1] at which the linear ramp l0 -> l1 reaches ``level``, by bisection."""
    f = lambda s: (l0 + (l1 - l0) * s) - level
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.sign(f(mid)) == np.sign(f(lo)) and f(mid) != 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ramp(l0: float, dl: float) -> FrameSequence:
    return FrameSequence([gray(gray_for_log(l0)), gray(gray_for_log(l0 + dl))], [0.0, 1.0])


def test_identical_frames_no_events():
    f = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
    s = simulate(FrameSequence([f, f.copy()], [0.0, 1.0]), SimulatorConfig())
    assert len(s) == 0


def test_rising_ramp_two_events_at_crossings():
    l0 = np.log(0.2 + EPS)
    seq = ramp(l0, 2.5 * C)
    s = simulate(seq, SimulatorConfig(c_pos=C, c_neg=C))
    assert len(s) == 2
    assert list(s.p) == [1, 1]
    la = log_luma(seq.frames[0], EPS)[0, 0]
    lb = log_luma(seq.frames[1], EPS)[0, 0]
    expected = [bisect_crossing(la, lb, la + k * C) for k in (1, 2)]
    np.testing.assert_allclose(s.t, expected, atol=1e-9)
    np.testing.assert_allclose(s.t, [0.4, 0.8], atol=1e-9)


def test_falling_ramp_one_event_at_end():
    seq = ramp(np.log(0.6 + EPS), -1.0 * C)
    s = simulate(seq, SimulatorConfig(c_pos=C, c_neg=C))
    assert len(s) == 1
    assert s.p[0] == -1
    assert s.t[0] == pytest.approx(1.0, abs=1e-9)


def test_monotone_ramps_count_formula():
    rng = np.random.default_rng(7)
    h, w = 6, 9
    l0 = rng.uniform(np.log(0.05), np.log(0.5), (h, w))
    dl = rng.uniform(-2.0, 2.0, (h, w))
    # keep away from exact multiples so floor() is unambiguous
    dl = np.where(np.abs(np.abs(dl) / C - np.round(np.abs(dl) / C)) < 1e-3, dl + 0.01, dl)
    f0 = np.repeat((np.exp(l0) - EPS)[..., None], 3, axis=2)
    f1 = np.repeat((np.exp(np.clip(l0 + dl, None, np.log(1.0 + EPS))) - EPS)[..., None], 3, axis=2)
    seq = FrameSequence([f0, f1], [0.0, 0.5])
    s = simulate(seq, SimulatorConfig(c_pos=C, c_neg=C))
    actual_dl = log_luma(f1, EPS) - log_luma(f0, EPS)
    for yy in range(h):
        for xx in range(w):
            m = (s.x == xx) & (s.y == yy)
            assert m.sum() == int(np.floor(abs(actual_dl[yy, xx]) / C + 1e-9))
            if m.any():
                assert np.all(s.p[m] == np.sign(actual_dl[yy, xx]))


def test_output_sorted_and_in_window():
    scene = Scene(random_scene_config(np.random.default_rng(2), n_frames=3))
    s = simulate(dense_sequence(scene, 30.0, 4), SimulatorConfig(noise_rate=5.0, seed=1))
    assert np.all(np.diff(s.t) >= 0)
    assert s.t[0] >= s.window.t_start and s.t[-1] <= s.window.t_end


@pytest.mark.parametrize("i", range(20))
def test_round_trip_bound(i):
    cfg = SimulatorConfig(c_pos=0.15, c_neg=0.2)
    scene = Scene(random_scene_config(np.random.default_rng([99, i]), canvas=(32, 32), n_frames=2,
                                      size=(8, 14), motion="nonlinear" if i % 2 else "linear"))
    seq = dense_sequence(scene, 30.0, 4)
    s = simulate(seq, cfg)
    rec = reconstruct_log(seq.frames[0], s, cfg)
    err = np.abs(rec - log_luma(seq.frames[-1], cfg.log_eps))
    assert err.max() < max(cfg.c_pos, cfg.c_neg)


def test_reconstruct_empty_and_single():
    cfg = SimulatorConfig()
    f = np.random.default_rng(1).uniform(0, 1, (4, 5, 3))
    empty = EventStream.empty(TimeWindow(0, 1), (5, 4))
    np.testing.assert_array_equal(reconstruct_log(f, empty, cfg), np.log(f @ [0.299, 0.587, 0.114] + cfg.log_eps))
    one = EventStream(np.array([2]), np.array([3]), np.array([0.5]), np.array([1]), TimeWindow(0, 1), (5, 4))
    rec = reconstruct_log(f, one, cfg)
    base = reconstruct_log(f, empty, cfg)
    assert rec[3, 2] == base[3, 2] + cfg.c_pos
    rec[3, 2] = base[3, 2]
    np.testing.assert_array_equal(rec, base)


def test_noise_statistics():
    f = gray(0.5, 20, 30)
    cfg = SimulatorConfig(noise_rate=40.0, seed=3)
    s = simulate(FrameSequence([f, f], [0.0, 0.5]), cfg)
    expected = 40.0 * 0.5 * 600
    assert abs(len(s) - expected) < 5 * np.sqrt(expected)
    assert abs(np.mean(s.p == 1) - 0.5) < 0.05


def test_simulation_deterministic_files(tmp_path):
    scene = Scene(random_scene_config(np.random.default_rng(5)))
    seq = dense_sequence(scene, 30.0, 4)
    cfg = SimulatorConfig(noise_rate=2.0, seed=11)
    write_events(tmp_path / "a.evt", simulate(seq, cfg))
    write_events(tmp_path / "b.evt", simulate(seq, cfg))
    assert (tmp_path / "a.evt").read_bytes() == (tmp_path / "b.evt").read_bytes()


def test_degenerate_timestamps():
    with pytest.raises(DegenerateTimestamps):
        FrameSequence([gray(0.1), gray(0.2)], [0.0, 0.0])
    with pytest.raises(DegenerateTimestamps):
        FrameSequence([gray(0.1)], [0.0])


def square_scene(v=(2.0, 0.0), n_frames=3, kind="linear", **traj) -> SceneConfig:
    obj = SceneObject(TextureSpec("checker", 3.0), (12, 12), Trajectory(kind, (20.0, 20.0), v, **traj))
    return SceneConfig(canvas=(64, 64), objects=[obj], n_frames=n_frames)


def test_linear_square_flow():
    scene = Scene(square_scene((2.0, 0.0)))
    f = scene.flow(0, 2)
    owner = scene.coverage(0)
    assert np.all(f[0][owner == 0] == 4.0) and np.all(f[1][owner == 0] == 0.0)
    assert np.all(f[:, owner < 0] == 0.0)
    assert (owner == 0).sum() == 144


def test_static_scene():
    seq, flows = generate_scene(square_scene((0.0, 0.0)))
    assert all(np.array_equal(seq.frames[0], fr) for fr in seq.frames)
    assert all(not fl.numpy().any() for fl in flows)


def test_quadratic_midpoint_is_nonlinear():
    a = 6.0
    traj = Trajectory("quadratic", (10.0, 10.0), (0.0, 0.0), a=(a, 0.0))
    p = traj.position(np.array([0.0, 0.5, 1.0]))
    mid, end = p[1, 0] - p[0, 0], p[2, 0] - p[0, 0]
    assert mid == pytest.approx(a * 0.25)
    assert end == pytest.approx(a)
    assert mid != pytest.approx(end / 2)


def test_generate_scene_deterministic_and_consistent():
    cfg = random_scene_config(np.random.default_rng(8), n_frames=4, motion="nonlinear")
    a_seq, a_flows = generate_scene(cfg)
    b_seq, b_flows = generate_scene(cfg)
    for x, y in zip(a_seq.frames, b_seq.frames):
        np.testing.assert_array_equal(x, y)
    assert len(a_flows) == 3
    for x, y in zip(a_flows, b_flows):
        np.testing.assert_array_equal(x.numpy(), y.numpy())


def test_scene_errors():
    with pytest.raises(EmptyScene):
        Scene(SceneConfig(objects=[]))
    with pytest.raises(InvalidScene):
        Scene(square_scene((80.0, 0.0)))


def test_scene_config_from_dict():
    d = {"canvas": [32, 32], "n_frames": 3,
         "objects": [{"size": [8, 8], "texture": {"kind": "stripes"},
                      "trajectory": {"kind": "linear", "p0": [4, 4], "v": [1, 0]}}]}
    cfg = SceneConfig.from_dict(d)
    assert cfg.canvas == (32, 32)
    assert Scene(cfg).flow(0, 1)[0].max() == 1.0
