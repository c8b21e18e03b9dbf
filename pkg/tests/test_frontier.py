import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairpf.frontier import (
    ENVELOPE, FrontierCurve, FrontierError, budget_envelope, frontier_points, interpolate,
    lower_convex_hull, pareto_staircase, read_curve, write_curve,
)
from fairpf.training import TrainedPoint
from oracles import brute_force_lower_hull

clouds = st.lists(
    st.tuples(st.floats(0, 1, allow_nan=False, allow_subnormal=False), st.floats(0, 2, allow_nan=False)), min_size=1, max_size=40,
)


def test_single_point():
    assert lower_convex_hull([(0.3, 0.7)]).vertices == [(0.3, 0.7)]


def test_convex_vee():
    assert lower_convex_hull([(0, 1), (0.5, 0.2), (1, 1)]).vertices == [(0, 1), (0.5, 0.2), (1, 1)]


def test_point_above_chord_dropped():
    assert lower_convex_hull([(0, 0), (0.5, 1), (1, 0)]).vertices == [(0, 0), (1, 0)]


def test_matches_brute_force_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        P = rng.random((60, 2))
        assert lower_convex_hull(P).vertices == brute_force_lower_hull(P)


@settings(max_examples=200, deadline=None)
@given(clouds)
def test_hull_properties(points):
    hull = lower_convex_hull(points)
    P = np.array(points)
    assert np.all(np.diff(hull.deltas) > 0)
    # every point lies on or above the hull
    inside = (P[:, 0] >= hull.deltas[0]) & (P[:, 0] <= hull.deltas[-1])
    below = interpolate(hull, P[inside, 0]) - P[inside, 1]
    assert np.all(below <= 1e-9)
    # every consecutive triple turns left
    d, l = hull.deltas, hull.losses
    cross = (d[1:-1] - d[:-2]) * (l[2:] - l[:-2]) - (l[1:-1] - l[:-2]) * (d[2:] - d[:-2])
    assert np.all(cross > 0)


@settings(max_examples=200, deadline=None)
@given(clouds)
def test_envelope_non_increasing_and_idempotent(points):
    env = budget_envelope(points)
    assert env.kind == ENVELOPE
    assert np.all(np.diff(env.losses) <= 0)
    again = budget_envelope(env)
    assert np.array_equal(again.losses, env.losses) and np.array_equal(again.deltas, env.deltas)


def test_envelope_hand_case():
    assert budget_envelope([(0.1, 0.5), (0.2, 0.7)]).vertices == [(0.1, 0.5), (0.2, 0.5)]


def test_envelope_keeps_non_increasing_input():
    pts = [(0.0, 3.0), (0.1, 2.0), (0.4, 1.5)]
    assert budget_envelope(pts).vertices == pts


def test_u_shape_gets_flat_right_arm():
    d = np.linspace(0, 1, 21)
    env = budget_envelope(np.column_stack([d, (d - 0.4) ** 2]))
    m = int(np.argmin((d - 0.4) ** 2))
    assert np.all(env.losses[m:] == env.losses[m])


def test_interpolation():
    c = FrontierCurve([0.0, 1.0], [1.0, 0.0])
    assert interpolate(c, 0.5) == 0.5
    three = FrontierCurve([0.0, 0.25, 0.5], [0.75, 0.5, 0.375])
    assert interpolate(three, 0.25) == 0.5
    assert interpolate(three, 0.125) == 0.625
    assert interpolate(three, 0.375) == 0.4375
    with pytest.raises(FrontierError):
        interpolate(three, 0.6)


def test_staircase():
    st_ = pareto_staircase([(0.0, 1.0), (0.1, 1.2), (0.2, 0.5), (0.3, 0.6)])
    assert st_.vertices == [(0.0, 1.0), (0.2, 0.5)]


def test_empty_and_nonfinite_rejected():
    with pytest.raises(FrontierError):
        lower_convex_hull([])
    with pytest.raises(FrontierError):
        lower_convex_hull([(0.1, np.nan)])


def _tp(lam, seed, dp, bce, n=10):
    return TrainedPoint(n, 100, lam, seed, 0.0, 0.0, bce, dp)


def test_seed_averaging():
    pts = [_tp(0.0, 0, 0.1, 0.7), _tp(0.0, 1, 0.3, 0.9), _tp(1.0, 0, 0.05, 0.8), _tp(1.0, 0, 0.0, 0.0, n=20)]
    avg = frontier_points(pts, n_params=10, average_seeds=True)
    np.testing.assert_allclose(avg, [[0.2, 0.8], [0.05, 0.8]])
    assert frontier_points(pts, n_params=10).shape == (3, 2)


def test_curve_file_roundtrip(tmp_path):
    c = lower_convex_hull([(0, 1), (0.5, 0.2), (1, 1)], {"n_params": 8080, "d_train": 6500})
    write_curve(c, tmp_path / "c.csv", {"note": "x"})
    back, meta = read_curve(tmp_path / "c.csv")
    assert back.vertices == c.vertices and meta["n_params"] == "8080" and meta["note"] == "x"
