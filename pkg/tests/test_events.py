import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_stream
from evfi.errors import (
    CorruptEventFile,
    DegenerateWindow,
    InvalidBoundaries,
    InvalidPolarity,
    NonFiniteTimestamp,
    OutOfBoundsEvent,
)
from evfi.events import (
    Event,
    EventStream,
    TimeWindow,
    concatenate,
    quantize_time,
    read_events,
    read_events_csv,
    restrict,
    reverse,
    slice_stream,
    validate_stream,
    voxelize,
    write_events,
    write_events_csv,
)

W, H = 16, 12
UNIT = TimeWindow(0.0, 1.0)


def test_validate_empty():
    s = validate_stream([], UNIT, (W, H))
    assert len(s) == 0
    assert s.window == UNIT


def test_validate_sorts_swapped():
    s = validate_stream([Event(1, 1, 0.7, 1), Event(2, 2, 0.3, -1)], UNIT, (W, H))
    assert list(s.t) == [quantize_time(0.3), quantize_time(0.7)]
    assert list(s.p) == [-1, 1]


def test_validate_bounds_policy():
    evs = [Event(W, 0, 0.5, 1), Event(0, 0, 0.5, 1)]
    assert len(validate_stream(evs, UNIT, (W, H), policy="drop")) == 1
    with pytest.raises(OutOfBoundsEvent):
        validate_stream(evs, UNIT, (W, H), policy="error")


def test_validate_window_is_half_open():
    s = validate_stream([Event(0, 0, 1.0, 1), Event(0, 0, 0.0, 1)], UNIT, (W, H))
    assert list(s.t) == [0.0]


def test_validate_rejects_bad_values():
    with pytest.raises(NonFiniteTimestamp):
        validate_stream([Event(0, 0, float("nan"), 1)], UNIT, (W, H))
    with pytest.raises(InvalidPolarity):
        validate_stream([Event(0, 0, 0.5, 0)], UNIT, (W, H))
    with pytest.raises(DegenerateWindow):
        TimeWindow(1.0, 1.0)


def test_canonical_tiebreak():
    evs = [Event(3, 1, 0.5, 1), Event(1, 1, 0.5, -1), Event(2, 0, 0.5, 1)]
    s = validate_stream(evs, UNIT, (W, H))
    assert list(zip(s.y, s.x)) == [(0, 2), (1, 1), (1, 3)]


def test_voxelize_empty():
    g = voxelize(EventStream.empty(UNIT, (W, H)), bins=5)
    assert g.data.shape == (5, H, W)
    assert not g.data.any()


def test_voxelize_event_on_node():
    # t* = 4 * 0.5 = 2 exactly
    s = validate_stream([Event(3, 4, 0.5, 1)], UNIT, (W, H))
    g = voxelize(s, 5).data
    assert g[2, 4, 3] == 1.0
    assert np.count_nonzero(g) == 1


def test_voxelize_fractional_event():
    # t* = 1.25 -> bins 1 and 2 with weights 0.75 / 0.25
    s = validate_stream([Event(5, 6, 1.25 / 4, -1)], UNIT, (W, H))
    g = voxelize(s, 5).data
    assert g[1, 6, 5] == pytest.approx(-0.75, abs=1e-9)
    assert g[2, 6, 5] == pytest.approx(-0.25, abs=1e-9)
    assert np.count_nonzero(g) == 2


def test_voxelize_single_bin():
    s = validate_stream([Event(0, 0, 0.2, 1), Event(0, 0, 0.9, -1), Event(1, 0, 0.3, 1)], UNIT, (W, H))
    g = voxelize(s, 1).data
    assert g.shape == (1, H, W)
    assert g[0, 0, 0] == 0.0 and g[0, 0, 1] == 1.0


@settings(max_examples=120, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), bins=st.integers(1, 9))
def test_voxelize_conserves_signed_mass(seed, bins):
    s = random_stream(np.random.default_rng(seed))
    g = voxelize(s, bins)
    assert abs(g.data.sum() - s.signed_sum) <= 1e-6 * max(1, len(s))


def test_reverse_single_event():
    s = validate_stream([Event(3, 4, 0.2, 1)], UNIT, (W, H))
    r = reverse(s)
    assert r.events == [Event(3, 4, 1.0 - quantize_time(0.2), -1)]
    assert r.t[0] == pytest.approx(0.8, abs=1e-9)
    assert r.window == s.window


def test_reverse_empty():
    s = EventStream.empty(UNIT, (W, H))
    assert reverse(s).same_as(s)


@settings(max_examples=120, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(0.0, 5.0), d=st.floats(0.01, 3.0))
def test_reverse_is_exact_involution(seed, a, d):
    s = random_stream(np.random.default_rng(seed), window=(a, a + d))
    r = reverse(s)
    assert len(r) == len(s)
    assert r.signed_sum == -s.signed_sum
    assert reverse(r).same_as(s)


def test_voxelize_reverse_flips_bins_on_nodes():
    rng = np.random.default_rng(3)
    bins = 5
    nodes = rng.integers(0, bins - 1, 60)  # avoid the closed end node
    evs = [Event(int(rng.integers(W)), int(rng.integers(H)), k / (bins - 1), int(rng.choice([-1, 1])))
           for k in nodes]
    s = validate_stream(evs, UNIT, (W, H))
    g = voxelize(s, bins).data
    gr = voxelize(reverse(s), bins).data
    np.testing.assert_array_equal(gr, -g[::-1])


def test_slice_partition_counts():
    s = random_stream(np.random.default_rng(0), n=10)
    parts = slice_stream(s, [0.0, 0.5, 1.0])
    assert sum(len(p) for p in parts) == 10


def test_slice_boundary_event_goes_right():
    s = validate_stream([Event(0, 0, 0.5, 1)], UNIT, (W, H))
    a, b = slice_stream(s, [0.0, 0.5, 1.0])
    assert len(a) == 0 and len(b) == 1


def test_slice_identity():
    s = random_stream(np.random.default_rng(1))
    (only,) = slice_stream(s, [0.0, 1.0])
    assert only.same_as(s)


def test_slice_last_interval_closed():
    s = reverse(validate_stream([Event(0, 0, 0.0, 1)], UNIT, (W, H)))
    assert s.t[0] == 1.0
    parts = slice_stream(s, [0.0, 0.5, 1.0])
    assert len(parts[1]) == 1


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_cuts=st.integers(0, 6))
def test_slice_concat_reproduces_input(seed, n_cuts):
    rng = np.random.default_rng(seed)
    s = random_stream(rng)
    cuts = np.sort(rng.uniform(0.01, 0.99, n_cuts))
    b = [0.0, *np.unique(quantize_time(cuts)), 1.0]
    parts = slice_stream(s, b)
    assert sum(len(p) for p in parts) == len(s)
    for p in parts:
        assert np.all((p.t >= p.window.t_start) & (p.t <= p.window.t_end))
    assert concatenate(parts, s.window).same_as(s)


def test_slice_then_voxelize_mass_at_bin_edges():
    s = random_stream(np.random.default_rng(5), n=150)
    full = voxelize(s, 5).data.sum()
    parts = slice_stream(s, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert sum(voxelize(p, 5).data.sum() for p in parts) == pytest.approx(full, abs=1e-9)


def test_slice_errors():
    s = random_stream(np.random.default_rng(0), n=5)
    with pytest.raises(InvalidBoundaries):
        slice_stream(s, [0.0, 0.6, 0.5, 1.0])
    with pytest.raises(InvalidBoundaries):
        slice_stream(s, [0.1, 1.0])
    with pytest.raises(InvalidBoundaries):
        slice_stream(s, [0.0])


def test_restrict_half_open_and_closed():
    s = validate_stream([Event(0, 0, 0.25, 1), Event(0, 0, 0.5, 1)], UNIT, (W, H))
    assert len(restrict(s, TimeWindow(0.0, 0.5))) == 1
    assert len(restrict(s, TimeWindow(0.0, 0.5), closed_end=True)) == 2


def test_binary_round_trip(tmp_path):
    s = random_stream(np.random.default_rng(9), n=300, window=(0.1, 0.7))
    write_events(tmp_path / "a.evt", s)
    assert read_events(tmp_path / "a.evt").same_as(s)


def test_binary_empty_round_trip(tmp_path):
    s = EventStream.empty(UNIT, (W, H))
    write_events(tmp_path / "e.evt", s)
    assert read_events(tmp_path / "e.evt").same_as(s)


def test_binary_layout(tmp_path):
    s = validate_stream([Event(1, 2, 0.5, -1)], UNIT, (W, H))
    write_events(tmp_path / "a.evt", s)
    raw = (tmp_path / "a.evt").read_bytes()
    assert raw[:4] == b"EVT1"
    assert len(raw) == 4 + 4 + 4 + 8 + 8 + 8 + 13


def test_corrupt_files(tmp_path):
    s = random_stream(np.random.default_rng(2), n=20)
    write_events(tmp_path / "a.evt", s)
    raw = bytearray((tmp_path / "a.evt").read_bytes())
    bad = bytes(b"XXXX" + raw[4:])
    (tmp_path / "m.evt").write_bytes(bad)
    with pytest.raises(CorruptEventFile):
        read_events(tmp_path / "m.evt")
    (tmp_path / "t.evt").write_bytes(bytes(raw[:-5]))
    with pytest.raises(CorruptEventFile):
        read_events(tmp_path / "t.evt")


def test_csv_round_trip(tmp_path):
    s = random_stream(np.random.default_rng(4), n=50)
    write_events_csv(tmp_path / "a.csv", s)
    back = read_events_csv(tmp_path / "a.csv", s.window, s.sensor_size)
    assert back.same_as(s)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "x,y,t,p"
