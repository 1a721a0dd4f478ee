import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from flowdim.errors import InvalidPartition
from flowdim.simplicial import (
    CONE_VERTEX,
    RealizationPoint,
    SimplicialComplex,
    canonical_member,
    canonical_partition,
    canonical_partition_dense,
    complement_distance,
    cone,
    l1_distance,
    lebesgue_radius,
    lebesgue_radius_check,
    map_to_nerve,
    multiplicity,
    nerve,
    partition_lipschitz_bound,
)


def random_complex(rng, n_vertices, dim, n_max=5):
    simplices = [tuple(rng.choice(n_vertices, size=dim + 1, replace=False))]
    for _ in range(n_max - 1):
        k = int(rng.integers(1, dim + 2))
        simplices.append(tuple(rng.choice(n_vertices, size=k, replace=False)))
    return SimplicialComplex([tuple(int(v) for v in s) for s in simplices], list(range(n_vertices)))


def random_point(rng, cx, concentration=1.0):
    m = list(cx.maximal[int(rng.integers(len(cx.maximal)))])
    w = rng.dirichlet(np.full(len(m), concentration))
    return RealizationPoint.make(dict(zip(m, w)))


def lp_complement_distance(cx, sigma, z):
    """Independent oracle: brute-force LP over maximal simplices and constraint pairs."""
    n = len(cx.vertices)
    zd = z.dense(cx)
    sig = [cx.index(v) for v in sigma]
    others = [i for i in range(n) if i not in sig] + [None]
    best = np.inf
    for tau in cx.maximal:
        allowed = {cx.index(v) for v in tau}
        for v, vp in itertools.product(sig, others):
            c = np.r_[np.zeros(n), np.ones(n)]
            rows, rhs = [], []
            for u in range(n):
                r = np.zeros(2 * n); r[u] = -1; r[n + u] = -1; rows.append(r); rhs.append(-zd[u])
                r = np.zeros(2 * n); r[u] = 1; r[n + u] = -1; rows.append(r); rhs.append(zd[u])
            r = np.zeros(2 * n); r[v] = 1
            if vp is not None:
                r[vp] = -1
            rows.append(r); rhs.append(0.0)
            bounds = [(0, None) if u in allowed else (0, 0) for u in range(n)] + [(0, None)] * n
            res = linprog(c, A_ub=rows, b_ub=rhs, A_eq=[np.r_[np.ones(n), np.zeros(n)]], b_eq=[1.0], bounds=bounds)
            if res.status == 0:
                best = min(best, res.fun)
    return best


def test_complex_closure_and_dimension():
    cx = SimplicialComplex([(0, 1, 2), (2, 3)])
    assert cx.dimension == 2
    assert cx.contains((0, 2)) and cx.contains((3,)) and not cx.contains((1, 3))
    assert len(cx.simplices()) == 7 + 3 - 1
    assert SimplicialComplex.from_json(cx.to_json()).maximal == cx.maximal


def test_cone_complex():
    cx = SimplicialComplex([(0, 1), (2,)])
    c = cone(cx)
    assert c.dimension == cx.dimension + 1
    for s in cx.simplices():
        assert c.contains(s) and c.contains(set(s) | {CONE_VERTEX})
    assert c.contains({CONE_VERTEX})


def test_l1_distance_examples():
    a, b = RealizationPoint.vertex(0), RealizationPoint.vertex(1)
    assert l1_distance(a, a) == 0
    assert l1_distance(a, b) == 2
    assert l1_distance(RealizationPoint.barycenter([0, 1]), a) == pytest.approx(1.0)


def test_l1_triangle_inequality():
    rng = np.random.default_rng(0)
    cx = random_complex(rng, 8, 3)
    for _ in range(200):
        p, q, r = (random_point(rng, cx) for _ in range(3))
        assert l1_distance(p, r) <= l1_distance(p, q) + l1_distance(q, r) + 1e-12


def test_realization_point_hygiene():
    p = RealizationPoint.make({0: 0.5, 1: 0.5 - 1e-17, 2: 1e-17})
    assert p.support == {0, 1}
    assert sum(p.coords.values()) == pytest.approx(1.0, abs=1e-12)


def test_nerve_examples():
    disjoint = nerve([{0, 1}, {2, 3}])
    assert disjoint.dimension == 0 and len(disjoint.vertices) == 2
    chain = nerve([{0, 1}, {1, 2}, {2, 3}])
    assert chain.dimension == 1
    assert chain.contains((0, 1)) and chain.contains((1, 2)) and not chain.contains((0, 2))


def test_nerve_dimension_matches_multiplicity():
    rng = np.random.default_rng(5)
    for _ in range(30):
        k = int(rng.integers(2, 13))
        cover = [set(rng.choice(40, size=int(rng.integers(1, 12)), replace=False).tolist()) for _ in range(k)]
        cx = nerve(cover, size=40)
        brute = max(
            sum(1 for c in cover if x in c) for x in range(40)
        )
        assert cx.dimension + 1 == brute == multiplicity(cover, 40)
        # exhaustive: every listed simplex really has a common sample
        for s in cx.maximal:
            assert set.intersection(*(cover[i] for i in s))


def test_canonical_member_examples():
    assert canonical_member({0}, RealizationPoint.vertex(0))
    edge = RealizationPoint.barycenter([0, 1])
    assert canonical_member({0, 1}, edge)
    assert not canonical_member({0}, edge)


def test_canonical_sets_are_disjoint_per_dimension():
    rng = np.random.default_rng(1)
    cx = random_complex(rng, 9, 4)
    simplices = cx.simplices()
    for _ in range(100):
        z = random_point(rng, cx, 0.7)
        members = [s for s in simplices if canonical_member(s, z)]
        dims = [len(s) for s in members]
        assert len(dims) == len(set(dims))


def test_complement_distance_matches_lp_oracle():
    rng = np.random.default_rng(2)
    for _ in range(15):
        cx = random_complex(rng, 6, 2, n_max=4)
        z = random_point(rng, cx, 0.8)
        for s in cx.simplices():
            if not canonical_member(s, z):
                continue
            ours = complement_distance(cx, s, z)
            oracle = lp_complement_distance(cx, s, z)
            assert ours == pytest.approx(oracle, abs=1e-7)


def test_canonical_partition_vertex_point():
    cx = SimplicialComplex([(0, 1, 2), (2, 3)])
    z = RealizationPoint.vertex(2)
    assert canonical_partition(cx, {2}, z) == pytest.approx(1.0)
    for s in cx.simplices():
        if s != {2}:
            assert canonical_partition(cx, s, z) == 0.0


def test_canonical_partition_support_inside_member():
    rng = np.random.default_rng(3)
    cx = random_complex(rng, 7, 3)
    for _ in range(50):
        z = random_point(rng, cx)
        values = canonical_partition_dense(cx, z.dense(cx))
        for key, value in values.items():
            sigma = {cx.vertices[i] for i in key}
            assert value > 0 and canonical_member(sigma, z)


def test_lebesgue_radius_examples():
    simplex = SimplicialComplex([tuple(range(4))])
    assert lebesgue_radius_check(RealizationPoint.vertex(2), 3) == {2}
    assert lebesgue_radius_check(RealizationPoint.barycenter(range(4)), 3) == set(range(4))
    assert partition_lipschitz_bound(0) == 2 * 1 * 2 * 3
    assert simplex.dimension == 3


def test_map_to_nerve_examples():
    size = 6
    cover = [{0, 1, 2}, {2, 3, 4}]
    pou = np.array([[1.0, 1.0, 0.5, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.5, 1.0, 1.0, 0.0]])
    region = [0, 1, 2, 3, 4]
    m = map_to_nerve(pou, cover, region, size)
    assert m.point(0).coords == {0: 1.0}
    assert m.point(5).coords == {m.rest_vertex: 1.0}
    # open-star preimages stay inside the members
    for k, c in enumerate(cover):
        assert set(np.flatnonzero(m.coords[:, k] > 0)) <= c
    # image is inside the nerve of the enlarged cover
    for i in range(size):
        assert m.complex.contains(m.point(i).support)


def test_map_to_nerve_rejects_negative_values():
    with pytest.raises(InvalidPartition):
        map_to_nerve(np.array([[1.0, -0.5]]), [{0, 1}], [0], 2)


def test_lebesgue_radius_value():
    assert lebesgue_radius(2) == pytest.approx(1 / 12)
