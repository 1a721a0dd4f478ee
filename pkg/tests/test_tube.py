import math

import numpy as np
import pytest

from flowdim.errors import InvalidWindow, NotFree, ParameterError
from flowdim.flows import ScalarField, circle_space, hull_space, suspension_space, torus_space
from flowdim.tube import (
    build_long_thin_cover,
    cover_to_lipschitz_map,
    map_to_colored_partition,
    same_colour_separation,
    smear_partition,
    threshold_bound,
    threshold_renormalize,
    tower_partition,
    tube_dimension_certificate,
)

SQRT2 = math.sqrt(2.0)
T_GRID = np.linspace(-0.5, 0.5, 6)


@pytest.fixture(scope="module")
def torus():
    return torus_space([1.0, SQRT2], 1 / 16)


def test_torus_cover_certificate(torus):
    cover = build_long_thin_cover(torus, 1.0, ramp=0.5)
    cert = cover.certificate()
    assert cert.passed, cert.summary()
    assert cover.multiplicity() <= 3
    assert cover.dimension == 2
    assert len(cover.uncovered()) == 0
    rows = list(cover.to_csv_rows())
    assert rows[0] == ("member", "colour", "sample")
    assert len(rows) - 1 == int(cover.membership().sum())


def test_suspension_cover():
    space = suspension_space((math.sqrt(5) - 1) / 2, 1 / 16)
    cover = build_long_thin_cover(space, 0.5)
    assert cover.certificate().passed


def test_hull_cover_has_two_colours():
    space = hull_space(6.0, 0.1, pad=40.0)
    cover = build_long_thin_cover(space, 1.0)
    cert = cover.certificate()
    assert cert.passed, cert.summary()
    assert cover.dimension <= 1


def test_periodic_and_rational_flows_are_rejected():
    with pytest.raises(NotFree):
        build_long_thin_cover(circle_space(1.0, 1 / 32), 0.5)
    with pytest.raises(NotFree):
        build_long_thin_cover(torus_space([1.0, 0.5], 1 / 16), 0.5)
    with pytest.raises(ParameterError):
        build_long_thin_cover(torus_space([1.0, SQRT2], 1 / 8), 0.0)


def test_tower_partition(torus):
    cover = build_long_thin_cover(torus, 1.0, ramp=0.5)
    part = tower_partition(cover)
    assert part.sum_defect(cover.region) < 1e-12
    assert part.same_colour_products() == 0.0
    assert np.all(part.values >= 0)
    # every function lives inside its member
    assert np.all(part.values[~cover.membership()] == 0)
    with pytest.raises(ParameterError):
        tower_partition(build_long_thin_cover(torus, 1.0))


def test_smearing_bounds_the_flow_lipschitz_constant(torus):
    field = ScalarField.from_function(torus, lambda x: np.sign(np.sin(2 * np.pi * x[:, 0])))
    (smeared,) = smear_partition([field], 0.5, 0.01)
    pts = torus.points
    worst = 0.0
    for t in T_GRID[T_GRID != 0]:
        moved = smeared.exact(torus.flow.evolve(pts, t))
        worst = max(worst, np.max(np.abs(moved - smeared.values)) / abs(t))
    # sup |f| / lam = 2, plus quadrature error of a step function
    assert worst <= 2.0 + 0.1
    with pytest.raises(InvalidWindow):
        smear_partition([field], 0.0, 0.01)


@pytest.fixture(scope="module")
def pipeline(torus):
    L = 4.0
    cover = build_long_thin_cover(torus, L, ramp=0.5 * L)
    part = tower_partition(cover)
    nerve_map = cover_to_lipschitz_map(cover, part, 4.0 / L, 0.1, t_grid=T_GRID)
    return cover, part, nerve_map


def test_lipschitz_nerve_map(pipeline):
    cover, _, nerve_map = pipeline
    cert = nerve_map.certificate
    assert cert.passed, cert.summary()
    assert nerve_map.nerve_of_supports.dimension <= cover.dimension
    assert np.allclose(nerve_map.coords.sum(axis=1), 1.0)
    with pytest.raises(ParameterError):
        cover_to_lipschitz_map(cover, pipeline[1], 0.5, 0.1)


def test_colored_partition_and_threshold(pipeline):
    cover, _, nerve_map = pipeline
    coloured = map_to_colored_partition(nerve_map)
    assert set(coloured.colours) <= {0, 1, 2}
    assert coloured.sum_defect(cover.region) < 1e-9
    assert coloured.same_colour_products() < 1e-12
    eta = coloured.lipschitz(T_GRID)
    separation = 0.25
    thresholded = threshold_renormalize(coloured, eta, separation, 2)
    assert thresholded.sum_defect(cover.region) < 1e-9
    assert same_colour_separation(thresholded, separation) == 0
    assert thresholded.lipschitz(T_GRID) <= threshold_bound(eta, separation, 2)
    with pytest.raises(ParameterError):
        threshold_renormalize(coloured, eta, 4.0, 2)


def test_tube_dimension_certificate(torus):
    cert = tube_dimension_certificate(torus, 2, [0.5, 1.0])
    assert cert.passed, cert.summary()
    assert cert.provenance["witness_dimension"] == 2
    assert not tube_dimension_certificate(torus, 1, [1.0]).passed
    assert not tube_dimension_certificate(circle_space(1.0, 1 / 16), 0, [0.5]).passed
