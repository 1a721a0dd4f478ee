"""Finite simplicial complexes with the l1 geometric realization.

Points of the realization are barycentric coordinate vectors.  Besides the
complexes themselves this module provides the canonical open cover
{V_sigma} of a realization, its Lipschitz partition of unity, nerves of
sampled covers and the map from a partition of unity into the nerve.
"""

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidPartition

CONE_VERTEX = "inf"


class SimplicialComplex:
    """Abstract complex given by its maximal simplices (closure is implicit)."""

    def __init__(self, simplices, vertices=None):
        faces = {frozenset(s) for s in simplices if len(s)}
        verts = set(vertices or ())
        for s in faces:
            verts |= s
        faces |= {frozenset([v]) for v in verts}
        # keep only maximal ones
        ordered = sorted(faces, key=len, reverse=True)
        maximal = []
        for s in ordered:
            if not any(s < m for m in maximal):
                maximal.append(s)
        self.vertices = sorted(verts, key=_vertex_key)
        self.maximal = sorted(maximal, key=lambda s: (len(s), sorted(map(_vertex_key, s))))
        self._index = {v: i for i, v in enumerate(self.vertices)}
        self._incidence = None

    @property
    def dimension(self):
        return max((len(s) for s in self.maximal), default=0) - 1

    def index(self, v):
        return self._index[v]

    def contains(self, simplex):
        s = frozenset(simplex)
        return bool(s) and any(s <= m for m in self.maximal)

    def simplices(self):
        """Every simplex once, as frozensets, smallest first."""
        seen = set()
        for m in self.maximal:
            items = sorted(m, key=_vertex_key)
            for k in range(1, len(items) + 1):
                for face in itertools.combinations(items, k):
                    seen.add(frozenset(face))
        return sorted(seen, key=lambda s: (len(s), sorted(map(_vertex_key, s))))

    @property
    def incidence(self):
        """Boolean matrix: maximal simplex x vertex."""
        if self._incidence is None:
            inc = np.zeros((len(self.maximal), len(self.vertices)), dtype=bool)
            for r, m in enumerate(self.maximal):
                inc[r, [self._index[v] for v in m]] = True
            self._incidence = inc
        return self._incidence

    def to_json(self):
        return json.dumps({
            "vertices": [_jsonable(v) for v in self.vertices],
            "maximal_simplices": [sorted((_jsonable(v) for v in m), key=_vertex_key) for m in self.maximal],
        })

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls([tuple(s) for s in data["maximal_simplices"]], data["vertices"])

    def __repr__(self):
        return f"SimplicialComplex(vertices={len(self.vertices)}, dim={self.dimension}, maximal={len(self.maximal)})"


def _vertex_key(v):
    return (0, v, "") if isinstance(v, (int, np.integer)) else (1, 0, str(v))


def _jsonable(v):
    return int(v) if isinstance(v, (int, np.integer)) else v


def cone(complex_):
    """Simplicial cone: every simplex sigma plus sigma with the cone vertex."""
    return SimplicialComplex([set(m) | {CONE_VERTEX} for m in complex_.maximal], complex_.vertices + [CONE_VERTEX])


@dataclass(frozen=True)
class RealizationPoint:
    """Sparse barycentric coordinates; tiny entries are dropped and the rest renormalized."""

    coords: dict

    @classmethod
    def make(cls, coords, drop=1e-15):
        kept = {v: float(c) for v, c in coords.items() if c > drop}
        total = sum(kept.values())
        if total <= 0:
            raise ValueError("a realization point needs positive mass")
        return cls({v: c / total for v, c in kept.items()})

    @classmethod
    def vertex(cls, v):
        return cls({v: 1.0})

    @classmethod
    def barycenter(cls, simplex):
        simplex = list(simplex)
        return cls({v: 1.0 / len(simplex) for v in simplex})

    @property
    def support(self):
        return frozenset(self.coords)

    def dense(self, complex_):
        out = np.zeros(len(complex_.vertices))
        for v, c in self.coords.items():
            out[complex_.index(v)] = c
        return out

    @classmethod
    def from_dense(cls, complex_, vec):
        return cls.make({complex_.vertices[i]: vec[i] for i in np.flatnonzero(vec)})


def l1_distance(p, q):
    keys = set(p.coords) | set(q.coords)
    return float(sum(abs(p.coords.get(v, 0.0) - q.coords.get(v, 0.0)) for v in keys))


def nerve(cover, size=None):
    """Nerve of a finite cover given as sample-index sets.

    Maximal simplices are the maximal sets of members sharing a sample;
    members with empty sets do not become vertices.
    """
    cover = [np.asarray(sorted(set(map(int, c))), dtype=np.int64) for c in cover]
    if size is None:
        size = 1 + max((int(c.max()) for c in cover if len(c)), default=-1)
    membership = np.zeros((size, len(cover)), dtype=bool)
    for k, c in enumerate(cover):
        membership[c, k] = True
    rows = np.unique(membership[membership.any(axis=1)], axis=0)
    simplices = [tuple(np.flatnonzero(r).tolist()) for r in rows]
    vertices = [k for k, c in enumerate(cover) if len(c)]
    return SimplicialComplex(simplices, vertices)


def multiplicity(cover, size=None):
    """Largest number of members containing a common sample."""
    counts = np.zeros(size or 1 + max((max(c) for c in cover if len(c)), default=-1), dtype=np.int64)
    for c in cover:
        counts[np.asarray(list(c), dtype=np.int64)] += 1
    return int(counts.max()) if counts.size else 0


# ---------------------------------------------------------------------------
# canonical cover and partition


def canonical_member(sigma, z):
    """z lies in V_sigma: every coordinate in sigma beats every coordinate outside it.

    Coordinates outside the support count as 0 (so sigma must lie in the support).
    """
    sigma = frozenset(sigma)
    inside = [z.coords.get(v, 0.0) for v in sigma]
    outside = [c for v, c in z.coords.items() if v not in sigma]
    return min(inside) > max(outside + [0.0])


def _complement_distance_dense(complex_, sigma_idx, z):
    """Exact l1 distance from z to |Z| minus V_sigma (z dense, sigma as vertex indices).

    The complement is the union over v in sigma and v' outside sigma of
    {w : w_v <= w_v'}.  For a fixed maximal simplex tau the cheapest w
    supported in tau has a closed form; we minimise over tau and over pairs.
    A phantom vertex of weight 0 (in no simplex) stands in for "w_v = 0".
    """
    inc = complex_.incidence
    support = z > 0
    sigma_mask = np.zeros(len(z), dtype=bool)
    sigma_mask[sigma_idx] = True
    # only simplices meeting the support can beat the trivial bound
    rows = inc[:, support].any(axis=1)
    tau = inc[rows]
    outside_mass = 1.0 - tau.astype(float) @ z
    sizes = tau.sum(axis=1)
    extra_zero = (tau & ~(support | sigma_mask)).any(axis=1)
    positive_others = np.flatnonzero(support & ~sigma_mask)
    # a simplex away from the support: move all mass there
    best = 2.0 if not rows.all() else np.inf
    for v in sigma_idx:
        zv = z[v]
        for vp in positive_others:
            if z[vp] >= zv:
                return 0.0
        has_v = tau[:, v]
        cand = [np.where(~has_v, 2.0 * outside_mass, np.inf)]
        cand.append(np.where(has_v & (sizes >= 2), 2.0 * (outside_mass + zv), np.inf))
        cand.append(np.where(has_v & extra_zero, np.maximum(2.0 * outside_mass, zv + outside_mass), np.inf))
        for vp in positive_others:
            both = has_v & tau[:, vp]
            cand.append(np.where(both, np.maximum(2.0 * outside_mass, zv - z[vp] + outside_mass), np.inf))
        best = min(best, float(np.min(np.concatenate(cand))) if len(tau) else np.inf)
    return best


def complement_distance(complex_, sigma, z):
    sigma_idx = [complex_.index(v) for v in sigma]
    return _complement_distance_dense(complex_, sigma_idx, z.dense(complex_))


def _candidate_sigmas(z):
    """Index sets of the l largest coordinates wherever a strict gap follows them."""
    order = np.argsort(-z, kind="stable")
    sorted_z = np.append(z[order], 0.0)
    out = []
    for l in range(1, len(z) + 1):
        if sorted_z[l - 1] <= 0:
            break
        if sorted_z[l - 1] > sorted_z[l]:
            out.append(order[:l])
    return out


def canonical_partition_dense(complex_, z):
    """All nonzero values nu_sigma(z) as {frozenset of vertex indices: value}."""
    sigmas = _candidate_sigmas(z)
    dists = [_complement_distance_dense(complex_, s, z) for s in sigmas]
    finite = [d for d in dists if np.isfinite(d)]
    if len(finite) < len(dists):
        # V_sigma is all of |Z|: only possible when Z is a single vertex
        return {frozenset(s.tolist()): (1.0 if not np.isfinite(d) else 0.0) for s, d in zip(sigmas, dists)}
    total = sum(finite)
    assert total > 0, "canonical cover sets must cover every point"
    return {frozenset(s.tolist()): d / total for s, d in zip(sigmas, dists) if d > 0}


def canonical_partition(complex_, sigma, z):
    """nu_sigma(z) = d(z, |Z| minus V_sigma) / sum over all sigma' of the same distance."""
    key = frozenset(complex_.index(v) for v in sigma)
    return canonical_partition_dense(complex_, z.dense(complex_)).get(key, 0.0)


def lebesgue_radius_check(z, dimension):
    """Simplex sigma with B_{1/((d+1)(d+2))}(z) inside V_sigma.

    Returns the vertices carrying the l largest coordinates for the first l
    whose gap to the next coordinate is at least 2/((d+1)(d+2)).
    """
    items = sorted(z.coords.items(), key=lambda kv: (-kv[1], _vertex_key(kv[0])))
    values = [c for _, c in items] + [0.0] * (dimension + 2)
    threshold = 2.0 / ((dimension + 1) * (dimension + 2))
    for l in range(1, dimension + 2):
        if values[l - 1] - values[l] >= threshold - 1e-15:
            return frozenset(v for v, _ in items[:l])
    raise AssertionError("no Lebesgue gap found; the point is not in a complex of this dimension")


def lebesgue_radius(dimension):
    return 1.0 / ((dimension + 1) * (dimension + 2))


def partition_lipschitz_bound(dimension):
    return 2.0 * (dimension + 1) * (dimension + 2) * (2 * dimension + 3)


# ---------------------------------------------------------------------------
# maps into nerves


@dataclass
class NerveMap:
    """Sampled map Y -> |N(U+)|; column j is the coordinate of member j, the last is Y minus K."""

    complex: SimplicialComplex
    coords: np.ndarray
    rest_vertex: int

    def point(self, i):
        return RealizationPoint.make({j: c for j, c in enumerate(self.coords[i]) if c > 0})


def map_to_nerve(pou, cover, region, size, tol=1e-9):
    """Coordinates (mu_U(x))_U plus mu_rest = 1 - sum mu_U for every sample."""
    pou = np.asarray(pou, dtype=float)
    if pou.ndim != 2 or pou.shape[0] != len(cover):
        raise InvalidPartition("need one partition function per cover member")
    if np.any(pou < -tol):
        raise InvalidPartition("partition of unity has negative values")
    pou = np.clip(pou, 0.0, None)
    total = pou.sum(axis=0)
    if np.any(total > 1 + 1e-6):
        raise InvalidPartition("partition functions sum to more than 1")
    for k, c in enumerate(cover):
        outside = np.ones(size, dtype=bool)
        outside[np.asarray(list(c), dtype=np.int64)] = False
        if np.any(pou[k, outside] > tol):
            raise InvalidPartition(f"partition function {k} is not supported in its member")
    region = np.asarray(region)
    if np.any(np.abs(total[region] - 1.0) > 1e-6):
        raise InvalidPartition("partition functions do not sum to 1 on the region")
    rest = np.clip(1.0 - total, 0.0, None)
    rest[rest < tol] = 0.0
    coords = np.vstack([pou, rest[None, :]]).T
    coords /= coords.sum(axis=1, keepdims=True)
    outside = np.setdiff1d(np.arange(size), region)
    complex_ = nerve(list(cover) + [outside], size=size)
    return NerveMap(complex_, coords, len(cover))
