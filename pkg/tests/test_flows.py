import math

import numpy as np
import pytest

from flowdim.errors import ExtrapolationError, InvalidWindow, WindowExceeded
from flowdim.flows import (
    ScalarField,
    Window,
    circle_space,
    evolve,
    flow_average,
    flow_lipschitz_constant,
    hull_space,
    invariant_integral,
    invariant_measure,
    min_separation_time,
    pullback,
    smear,
    suspension_space,
    torus_space,
)
from flowdim.tiling import GOLDEN, perron_frequencies, substitution_matrix

SQRT2 = math.sqrt(2.0)


def torus_wave(k, phase=0.0):
    k = np.asarray(k, dtype=float)
    return lambda x: np.exp(2j * np.pi * (x @ k) + 1j * phase)


@pytest.fixture(scope="module")
def golden():
    return torus_space([1.0, SQRT2], 1 / 32)


def test_torus_translation():
    space = torus_space([1.0, 0.0], 1 / 4)
    i = int(np.flatnonzero(np.all(np.isclose(space.points, [0.25, 0.5]), axis=1))[0])
    assert np.allclose(evolve(space, i, 0.5), [0.75, 0.5])


@pytest.mark.parametrize("make", [
    lambda: torus_space([1.0, SQRT2], 1 / 16),
    lambda: circle_space(3.0, 0.1),
    lambda: suspension_space(0.381966, 1 / 16, roof=lambda u: 1 + 0.3 * np.cos(2 * np.pi * u)),
    lambda: hull_space(10.0, 0.25),
])
def test_identity_and_group_law(make):
    space = make()
    flow = space.flow
    pts = space.points
    assert np.allclose(flow.evolve(pts, 0.0), pts)
    rng = np.random.default_rng(0)
    for s, t in rng.uniform(-3, 3, size=(5, 2)):
        a = flow.evolve(flow.evolve(pts, t), s)
        b = flow.evolve(pts, s + t)
        assert np.max(flow.chart_distance(a, b)) <= 1e-9


def test_circle_period_return():
    space = circle_space(3.0, 0.1)
    i = int(np.argmin(np.abs(space.points[:, 0] - 0.1)))
    assert np.allclose(evolve(space, i, 3.0), space.points[i], atol=1e-12)


def test_hull_window_exceeded():
    space = hull_space(10.0, 0.5, pad=5.0)
    with pytest.raises(WindowExceeded):
        space.flow.evolve(space.points, 40.0)


def test_pullback_constant_and_eigenfunction():
    space = circle_space(1.0, 1 / 64)
    one = ScalarField.constant(space, 1.0)
    assert np.allclose(pullback(one, 0.37).values, 1.0)
    wave = ScalarField.from_function(space, lambda x: np.exp(2j * np.pi * x[:, 0]))
    t = 0.37
    assert np.allclose(pullback(wave, t).values, np.exp(-2j * np.pi * t) * wave.values, atol=1e-12)


def test_pullback_isometric_on_sampled_fields(golden):
    rng = np.random.default_rng(1)
    for _ in range(5):
        f = ScalarField(golden, rng.normal(size=golden.size) + 1j * rng.normal(size=golden.size))
        g = pullback(f, float(rng.uniform(-2, 2)))
        # interpolation never increases the sup norm
        assert g.sup_norm() <= f.sup_norm() + 1e-12
        exact = ScalarField.from_function(golden, torus_wave([1, 2], rng.uniform()))
        assert abs(pullback(exact, 0.7).sup_norm() - exact.sup_norm()) < 1e-12


def test_pullback_is_multiplicative(golden):
    f = ScalarField.from_function(golden, torus_wave([1, 0]))
    g = ScalarField.from_function(golden, torus_wave([0, 1]))
    t = 0.3
    assert np.allclose(pullback(f * g, t).values, (pullback(f, t) * pullback(g, t)).values)


def test_interpolation_outside_hull_grid():
    space = hull_space(5.0, 0.5, pad=5.0)
    f = ScalarField(space, np.ones(space.size))
    with pytest.raises(ExtrapolationError):
        f.at(np.array([[7.0]]))


def test_flow_average_constants_and_full_period():
    space = circle_space(1.0, 1 / 64)
    one = ScalarField.constant(space, 1.0)
    assert np.allclose(flow_average(one, Window(-0.5, 0.5), 0.01).values, 1.0)
    wave = ScalarField.from_function(space, lambda x: np.exp(2j * np.pi * x[:, 0]))
    avg = flow_average(wave, Window(-0.5, 0.5), 0.01)
    assert avg.sup_norm() < 1e-12


def test_flow_average_rejects_bad_windows():
    with pytest.raises(InvalidWindow):
        Window(1.0, 1.0)
    with pytest.raises(InvalidWindow):
        Window(1.0, -1.0)


def test_smearing_lipschitz_bound(golden):
    f = ScalarField.from_function(golden, lambda x: np.cos(2 * np.pi * (3 * x[:, 0] - 2 * x[:, 1])))
    lam = 0.5
    g = smear(f, lam, 0.005)
    measured = flow_lipschitz_constant(g, np.linspace(-0.2, 0.2, 9), indices=np.arange(0, golden.size, 7))
    assert measured <= 2 * f.sup_norm() / (2 * lam) + 1e-2


def test_smearing_shift_identity(golden):
    # shifting the window moves the average by at most the Lipschitz bound times the shift
    f = ScalarField.from_function(golden, torus_wave([2, -1]))
    lam, t = 1.0, 0.3
    a = flow_average(f, Window(-lam, lam), 0.01)
    b = flow_average(f, Window(-lam + t, lam + t), 0.01)
    assert np.max(np.abs(a.values - b.values)) <= (2 * f.sup_norm() / (2 * lam)) * t + 1e-3


def test_lipschitz_constant_examples():
    space = circle_space(1.0, 1 / 128)
    assert flow_lipschitz_constant(ScalarField.constant(space, 2.0), [0.1, -0.1]) == 0.0
    wave = ScalarField.from_function(space, lambda x: np.exp(2j * np.pi * x[:, 0]))
    value = flow_lipschitz_constant(wave, [1e-4, -1e-4, 1e-3])
    assert 2 * np.pi - 1e-3 <= value <= 2 * np.pi


def test_invariant_integral(golden):
    mu = invariant_measure(golden)
    assert abs(invariant_integral(mu, ScalarField.constant(golden, 1.0)) - 1) < 1e-12
    circle = circle_space(1.0, 1 / 64)
    wave = ScalarField.from_function(circle, lambda x: np.exp(2j * np.pi * x[:, 0]))
    assert abs(invariant_integral(invariant_measure(circle), wave)) < 1e-12
    f = ScalarField.from_function(golden, lambda x: np.cos(2 * np.pi * x[:, 0]) ** 2 + x[:, 1] * 0)
    for t in (0.1, 0.77, 3.0):
        diff = abs(invariant_integral(mu, pullback(f, t)) - invariant_integral(mu, f))
        assert diff <= mu.defect_bound(t, 2 * np.pi, 1.0) + 1e-12


def test_suspension_measure_is_invariant():
    space = suspension_space(0.381966, 1 / 32, roof=lambda u: 1 + 0.3 * np.cos(2 * np.pi * u))
    mu = invariant_measure(space)
    f = ScalarField.from_function(space, lambda x: np.cos(2 * np.pi * x[:, 0]) + np.sin(2 * np.pi * x[:, 1]))
    base = invariant_integral(mu, f)
    for t in (0.3, 1.7):
        assert abs(invariant_integral(mu, pullback(f, t)) - base) < 0.05


def test_min_separation_time_examples():
    circle = circle_space(2.0, 0.1)
    assert np.all(min_separation_time(circle, 10.0) <= 2.0)
    golden = torus_space([1.0, SQRT2], 1 / 16)
    assert np.all(min_separation_time(golden, 10.0, gap=1e-3) == 10.0)
    rational = torus_space([1.0, 1.0], 1 / 16)
    assert np.all(min_separation_time(rational, 10.0, gap=1e-3) < 10.0)


def test_min_separation_orbit_scan_matches_brute_force():
    # brute force on the torus: scan the orbit finely and compare
    golden = torus_space([1.0, 0.5 * (math.sqrt(5) - 1)], 1 / 4)
    horizon, gap = 6.0, 0.05
    analytic = min_separation_time(golden, horizon, gap)[0]
    t = np.arange(1, 600001) * horizon / 600000
    pts = golden.flow.evolve(np.zeros((1, 2)), t)
    d = golden.flow.chart_distance(pts, np.zeros(2))
    left = np.maximum.accumulate(d >= gap)
    back = np.flatnonzero(left & (d < gap))
    brute = t[back[0]] if len(back) else horizon
    assert abs(analytic - brute) < 2e-5


def test_hull_is_free_on_short_horizons():
    space = hull_space(30.0, 0.5)
    assert np.all(min_separation_time(space, 10.0, 1e-3, indices=np.arange(0, space.size, 10)) == 10.0)


def test_fibonacci_perron_frequencies_match_tiling():
    space = hull_space(200.0, 1.0)
    word = space.flow.tiling.word
    freq = perron_frequencies({"a": "ab", "b": "a"}, ["a", "b"])
    assert abs(word.count("a") / len(word) - freq[0]) < 0.01
    assert abs(freq[0] / freq[1] - GOLDEN) < 1e-9
    assert np.allclose(substitution_matrix({"a": "ab", "b": "a"}, ["a", "b"]), [[1, 1], [1, 0]])


def test_hull_metric_spot_checks():
    space = hull_space(15.0, 0.37)
    rng = np.random.default_rng(3)
    n = space.size
    for _ in range(200):
        i, j, k = rng.integers(0, n, size=3)
        dij, djk, dik = (float(space.metric(a, b)[0]) for a, b in ((i, j), (j, k), (i, k)))
        assert dij >= 0 and float(space.metric(i, i)[0]) == 0
        assert abs(dij - float(space.metric(j, i)[0])) < 1e-12
        assert dik <= dij + djk + 1e-12
