import math

import numpy as np
import pytest

from flowdim.errors import BoxError, DefectBudgetExceeded, ParameterError
from flowdim.flows import ScalarField, circle_space, torus_space
from flowdim.rokhlin import (
    BoxGeometry,
    RokhlinWitness,
    boxes_from_witness,
    certify_eigenframe,
    certify_towers,
    certify_witness,
    circle_generator,
    circle_witness,
    cover_witness,
    defect_budget,
    discrete_towers,
    eigenframe_from_witness,
    order_zero_apply,
    ramp_for_defect,
    witness_from_cover,
    zero_witness,
)
from flowdim.tube import ColouredPartition


@pytest.fixture(scope="module")
def circle():
    return circle_space(1.0, 1 / 256)


def test_circle_witness_is_exact(circle):
    w = circle_witness(circle, horizon=10.0)
    cert = certify_witness(w, np.linspace(-10, 10, 201))
    assert cert.passed, cert.summary()
    assert max(w.defects[k] for k in "abcd") < 1e-12
    assert w.period == pytest.approx(1.0)
    assert w.d == 0


def test_harmonic_witness_frequency(circle):
    w = circle_witness(circle, harmonic=3)
    assert w.p == pytest.approx(-6 * math.pi)
    assert certify_witness(w).passed
    with pytest.raises(ParameterError):
        circle_witness(circle, harmonic=0)


def test_zero_witness_fails_completeness(circle):
    cert = certify_witness(zero_witness(circle))
    assert not cert.passed
    check = cert.get("(b) completeness |a(1 - sum |x|^2)|")
    assert check.measured == pytest.approx(1.0) and not check.passed


def test_time_grid_outside_horizon(circle):
    with pytest.raises(ParameterError):
        certify_witness(circle_witness(circle, horizon=1.0), [0.0, 2.0])


def test_order_zero_calculus(circle):
    w = circle_witness(circle)
    x = w.fields()[0].map(lambda v: 0.5 * v)
    M = w.period
    assert np.allclose(order_zero_apply(x, lambda th: np.ones_like(th), M).values, np.abs(x.values) ** 2)
    # f = identity on the circle returns x |x|
    assert np.allclose(order_zero_apply(x, circle_generator(M), M).values, x.values * np.abs(x.values))
    # a partition of the circle is sent to a partition of |x|^2
    th = np.linspace(0, M, 9)
    parts = [lambda u, k=k: np.maximum(0, 1 - np.abs(((u - th[k]) + M / 2) % M - M / 2) * 8 / M) for k in range(8)]
    total = sum(order_zero_apply(x, f, M).values for f in parts)
    assert np.allclose(total, np.abs(x.values) ** 2)


def test_eigenframe_from_exact_witness(circle):
    w = circle_witness(circle)
    certify_witness(w)
    frame = eigenframe_from_witness(w)
    assert frame.frequencies == [w.p]
    assert certify_eigenframe(frame).passed


def test_discrete_towers_residuals(circle):
    w = circle_witness(circle)
    certify_witness(w)
    towers = discrete_towers(w, math.sqrt(2), 5, 0.1)
    # K * sqrt(2) is within eps / (4n) of 1/5 modulo 1
    assert abs((towers.multiplier * math.sqrt(2) - 0.2 + 0.5) % 1 - 0.5) <= 0.1 / 20 + 1e-15
    cert = certify_towers(towers)
    assert cert.passed, cert.summary()
    for check in cert.checks:
        assert check.measured <= 0.2 + 1e-9


def test_discrete_towers_guards(circle):
    w = circle_witness(circle)
    with pytest.raises(ParameterError):
        discrete_towers(w, 0.75, 5)
    with pytest.raises(ParameterError):
        discrete_towers(w, math.sqrt(2), 6)


def test_witness_from_torus_cover():
    space = torus_space([1.0, math.sqrt(2)], 1 / 32)
    cover, partition, w = cover_witness(space, 1.0, 16.0, 1.0, 0.1)
    cert = certify_witness(w)
    assert cert.passed, cert.summary()
    assert w.d == 2
    # equivariance defect matches the ramp-width prediction pi T / (2 w)
    assert w.defects["a"] <= w.provenance["predicted_delta_a"] + 1e-9
    assert w.defects["b"] < 1e-9
    assert ramp_for_defect(0.1, 1.0) == pytest.approx(1.25 * math.pi / 0.2)


def test_witness_from_cover_needs_exit_times():
    space = torus_space([1.0, math.sqrt(2)], 1 / 8)
    partition = ColouredPartition(space, np.ones((1, space.size)), [0], [object()])
    with pytest.raises(BoxError):
        witness_from_cover(None, partition, 4.0)
    with pytest.raises(ParameterError):
        witness_from_cover(None, partition, 0.0)


def test_defect_budget_values():
    assert defect_budget(0) == pytest.approx(min(0.5, 1 / (3 * math.sqrt(2)), 2 / (3 * math.sqrt(2)) * math.sin(2 * math.pi / 96)))
    geo = BoxGeometry(2, 0.25, 1 / 96)
    assert geo.length == pytest.approx((1 - 16 / 96) * 2.0)
    assert geo.margin == pytest.approx(0.25 / 3)


def _conjugate_circle_witness(space, scale=1.0):
    M = space.flow.period

    def evaluate(x):
        return scale * np.exp(-2j * np.pi * np.asarray(x)[:, 0] / M)[None, :]

    return RokhlinWitness(space, evaluate, 2 * math.pi / M, M, [ScalarField.constant(space, 1.0)], 0.0)


def test_boxes_from_circle_witness():
    space = circle_space(2.0, 1 / 64)
    cover = boxes_from_witness(_conjugate_circle_witness(space), 0.25)
    assert cover.certificate.passed, cover.certificate.summary()
    assert cover.size <= 2
    assert cover.length == pytest.approx((1 - 16 / 96) * 2.0)
    rows = list(cover.to_csv_rows())
    assert len(rows) > 1


def test_boxes_reject_large_defects_and_wrong_period():
    space = circle_space(2.0, 1 / 64)
    with pytest.raises(DefectBudgetExceeded):
        boxes_from_witness(_conjugate_circle_witness(space, 0.9), 0.25)
    with pytest.raises(ParameterError):
        boxes_from_witness(_conjugate_circle_witness(space), 0.5)
