"""Long thin covers, tube-dimension certificates and the partition-of-unity pipeline.

Covers are built from Kakutani-Rokhlin towers over a base slice I of a global
section (torus and constant-roof suspension flows) or over the occurrences of
a long patch (tiling hulls).  Members come in three colours:

* colour 0: the flow-thickening Phi_(-a, a)(I) around the base,
* colour 1: the middle parts Phi_(c, r_k - c)(J_k') of the towers, one per
  return time r_k (the base splits into at most three intervals J_k),
* colour 2: thin tubes around the orbit segments of the two endpoints of I
  (the "cut lines" where the tower of a point changes).

Hull covers need no cut lines because the base is totally disconnected, so
they only use colours 0 and 1.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import (
    ArcSlice,
    FlowBox,
    OpenFlowRegion,
    VertexSlice,
    global_section,
    min_rotation_distance,
    stretch_box,
    verify_box,
)
from .certificate import Certificate
from .errors import InvalidWindow, NotFree, ParameterError, ResolutionError
from .flows import (
    PeriodicCircle,
    ScalarField,
    Suspension,
    TilingHull,
    TorusLinear,
    Window,
    flow_average,
    min_separation_time,
    wrap_signed,
)
from .simplicial import (
    SimplicialComplex,
    canonical_partition_dense,
    map_to_nerve,
    nerve,
)

BASE, MIDDLE, CUT = 0, 1, 2


def _ramp_down(x):
    """cos^2(pi/2 * clip(x, 0, 1)): 1 for x <= 0, 0 for x >= 1, slope <= pi/2 in sqrt."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= 1.0, 0.0, np.cos(0.5 * np.pi * np.clip(x, 0.0, 1.0)) ** 2)


@dataclass(frozen=True)
class TowerParameters:
    """Time offsets of the tower cover for segment half-length L and ramp width w.

    The partition is flat (== 1) on the base tube up to time ``plateau`` and
    tapers to 0 over ``ramp``; cut-line tubes taper over the same width, in a
    region where the base weight is still flat.
    """

    L: float
    ramp: float = 0.0

    @property
    def inner(self):
        return 1.25 * self.L

    @property
    def inner_box(self):
        return 1.125 * self.L

    @property
    def plateau(self):
        return max(1.5 * self.L, self.ramp)

    @property
    def reach(self):
        return max(self.inner + 2 * self.L, self.plateau + self.ramp) + 0.25 * self.L

    @property
    def reach_box(self):
        return self.reach + 0.125 * self.L

    @property
    def tail(self):
        return max(0.5 * self.L, self.ramp) + 0.125 * self.L

    @property
    def tail_box(self):
        return self.tail + 0.125 * self.L

    @property
    def min_margin(self):
        return 2.25 * self.L

    @property
    def min_return(self):
        return 2 * self.reach_box + self.min_margin


@dataclass
class CoverMember:
    name: str
    colour: int
    region: OpenFlowRegion
    box: FlowBox
    samples: np.ndarray = None


@dataclass
class CutLine:
    """Orbit segment of a base endpoint e, from its last base crossing to its next one."""

    endpoint: float
    back: int
    forward: int


class RotationTowers:
    """Tower geometry over an arc I of a global section with return rotation alpha."""

    kind = "rotation"

    def __init__(self, section, params):
        self.section = section
        self.params = params
        tau, alpha = section.roof, section.rotation
        self.roof, self.rotation = tau, alpha
        if min_rotation_distance(alpha, 10_000) < 1e-12:
            raise NotFree("the return rotation is rational: the flow has periodic orbits")
        n_needed = int(math.ceil(params.min_return / tau - 1e-12))
        gap = min_rotation_distance(alpha, n_needed - 1) if n_needed > 1 else 1.0
        self.base_length = min(0.95 * gap, 0.5)
        self.base_lo = 0.5 - 0.5 * self.base_length
        ell = self.base_length

        limit = int(math.ceil(8.0 / ell)) + 16
        self.cuts = [CutLine(e, self._first_entry(e, -alpha, limit), self._first_entry(e, alpha, limit))
                     for e in (self.base_lo, self.base_lo + ell)]
        rel = {0.0, ell}
        for cut in self.cuts:
            rel.add((cut.endpoint - cut.back * alpha - self.base_lo) % 1.0)
        rel = sorted(rel)
        self.floors = []
        for b0, b1 in zip(rel[:-1], rel[1:]):
            if b1 - b0 < 1e-14:
                continue
            mid = self.base_lo + 0.5 * (b0 + b1)
            self.floors.append((b0, b1, self._first_entry(mid, alpha, limit)))
        self.returns = np.array([n * tau for _, _, n in self.floors])
        if self.returns.min() < params.min_return - 1e-9:
            raise ResolutionError("base arc returns too early")

        # width of the cut-line tubes: orbits of the two endpoints stay apart,
        # each tube is a box, and floors keep a core after shrinking
        L = params.L
        self.extra = int(math.ceil((params.tail_box + params.min_margin + params.ramp) / tau)) + 1
        spans = [(-c.back - self.extra, c.forward + self.extra) for c in self.cuts]
        longest = max(hi - lo for lo, hi in spans)
        self.cut_lengths = [(c.back + c.forward) * tau + 2 * params.tail_box for c in self.cuts]
        box_steps = [int(math.ceil((length + params.min_margin) / tau)) + 1 for length in self.cut_lengths]
        self_sep = min_rotation_distance(alpha, max(longest, max(box_steps)))
        (lo1, hi1), (lo2, hi2) = spans
        k = np.arange(lo1 - hi2, hi1 - lo2 + 1)
        cross = np.abs(wrap_signed(self.cuts[0].endpoint - self.cuts[1].endpoint + k * alpha))
        floor_min = min(b1 - b0 for b0, b1, _ in self.floors)
        self.eta = 0.3 * min(self_sep, float(cross.min()), floor_min)
        self.cut_margins = [n * tau - length for n, length in zip(box_steps, self.cut_lengths)]

        # sorted table of cut-orbit section points for nearest-orbit lookups
        pos, owner, step = [], [], []
        for i, (cut, (lo, hi)) in enumerate(zip(self.cuts, spans)):
            j = np.arange(lo, hi + 1)
            pos.append((cut.endpoint + j * alpha) % 1.0)
            owner.append(np.full(len(j), i))
            step.append(j)
        pos, owner, step = map(np.concatenate, (pos, owner, step))
        order = np.argsort(pos)
        self._cut_pos, self._cut_owner, self._cut_step = pos[order], owner[order], step[order]
        self.L = L

    def _first_entry(self, start, step, limit):
        j = np.arange(1, limit + 1)
        rel = (start + j * step - self.base_lo) % 1.0
        inside = (rel > 0) & (rel < self.base_length)
        if not inside.any():
            raise ResolutionError("no return to the base arc within the search limit")
        return int(j[inside.argmax()])

    def slice_reach(self):
        p = self.params
        return max(2 * p.reach_box, self.returns.max() + 2 * self.roof, max(self.cut_lengths)) + 4 * p.L

    def build_members(self):
        p = self.params
        sec = self.section
        reach = self.slice_reach()
        base = ArcSlice(sec, self.base_lo, self.base_length, reach)
        self.base_slice = base
        members = [CoverMember(
            "base", BASE, OpenFlowRegion(base, -p.reach, p.reach),
            FlowBox(base, 2 * p.reach_box, self.returns.min() - 2 * p.reach_box, 0.0, "base"))]
        shrink = self.eta / 3
        self.floor_slices = []
        for k, ((b0, b1, n), r) in enumerate(zip(self.floors, self.returns)):
            sl = ArcSlice(sec, self.base_lo + b0 + shrink, (b1 - b0) - 2 * shrink, reach)
            self.floor_slices.append(sl)
            members.append(CoverMember(
                f"tower-{k}", MIDDLE, OpenFlowRegion(sl, p.inner, r - p.inner),
                FlowBox(sl, r - 2 * p.inner_box, 2 * p.inner_box, 0.5 * r, f"tower-{k}")))
        for i, (cut, length, margin) in enumerate(zip(self.cuts, self.cut_lengths, self.cut_margins)):
            sl = ArcSlice(sec, cut.endpoint - self.eta, 2 * self.eta, reach)
            t0, t1 = -cut.back * self.roof - p.tail, cut.forward * self.roof + p.tail
            members.append(CoverMember(
                f"cut-{i}", CUT, OpenFlowRegion(sl, t0, t1),
                FlowBox(sl, length, margin, 0.5 * (cut.forward - cut.back) * self.roof, f"cut-{i}")))
        return members

    # --- flat partition -------------------------------------------------

    def partition_values(self, coords):
        """Values of the flat tower partition, one row per member (same order as build_members)."""
        p = self.params
        if not p.ramp > 0:
            raise ParameterError("the tower partition needs a positive ramp width")
        horizon = self.returns.max() + self.roof
        fwd, _ = self.base_slice.next_hit(coords, 0.0, horizon)
        back, u_base = self.base_slice.prev_hit(coords, -horizon, 0.0)
        if np.isnan(fwd).any() or np.isnan(back).any():
            raise ResolutionError("orbit misses the base arc within the longest return")
        h = np.minimum(fwd, -back)
        plateau = _ramp_down((h - p.plateau) / p.ramp)

        u0, s0 = self.section.locate(coords)
        n = len(self._cut_pos)
        k = np.searchsorted(self._cut_pos, u0 % 1.0)
        cand = np.stack([(k - 1) % n, k % n])
        dist = wrap_signed(u0[None, :] - self._cut_pos[cand])
        pick = np.argmin(np.abs(dist), axis=0)
        idx = cand[pick, np.arange(len(u0))]
        sigma = np.abs(dist[pick, np.arange(len(u0))])
        t_rel = self._cut_step[idx] * self.roof + s0
        third = self.eta / 3
        transverse = _ramp_down((sigma - third) / third)
        chis = []
        for i, cut in enumerate(self.cuts):
            lo, hi = -cut.back * self.roof, cut.forward * self.roof
            outside = np.maximum(0.0, np.maximum(lo - t_rel, t_rel - hi))
            chi = transverse * _ramp_down(outside / p.ramp)
            chis.append(np.where(self._cut_owner[idx] == i, chi, 0.0))
        rest = 1.0 - sum(chis)

        rel = (u_base - self.base_lo) % 1.0
        rows = [plateau * rest]
        for b0, b1, _ in self.floors:
            rows.append(np.where((rel >= b0) & (rel < b1), (1.0 - plateau) * rest, 0.0))
        rows.extend(chis)
        return np.clip(np.array(rows), 0.0, 1.0)

    def describe(self):
        return {
            "kind": self.kind,
            "roof": self.roof,
            "rotation": self.rotation,
            "base": [self.base_lo, self.base_length],
            "returns": self.returns.tolist(),
            "cut_lines": [[c.endpoint, c.back, c.forward] for c in self.cuts],
            "cut_width": self.eta,
        }


class HullTowers:
    """Towers over the occurrences of a long central patch in the master tiling."""

    kind = "hull"

    def __init__(self, space, params):
        self.space = space
        self.params = params
        tiling = space.flow.tiling
        word = tiling.word
        centre = int(tiling.tile_index(0.0))
        verts = tiling.vertices
        length = 1
        while True:
            start = max(0, centre - length // 2)
            patch = word[start:start + length]
            occ = _occurrences(word, patch)
            pos = verts[occ]
            gaps = np.diff(pos)
            if len(gaps) and gaps.min() >= params.min_return - 1e-9:
                break
            if len(occ) < 3:
                raise ResolutionError("master tiling too short for the requested segment length")
            length += 1
        self.patch = patch
        self.positions = pos
        self.gaps = gaps
        R = space.flow.window_radius + params.L + params.reach_box
        if pos[0] > -R or pos[-1] < R:
            raise ResolutionError("patch occurrences do not surround the sample window; increase the pad")
        self.returns = np.unique(np.round(gaps, 9))
        self.floor_of = np.searchsorted(self.returns, np.round(gaps, 9))
        self.L = params.L

    def build_members(self):
        p = self.params
        flow = self.space.flow
        base = VertexSlice(flow, self.positions)
        self.base_slice = base
        members = [CoverMember(
            "base", BASE, OpenFlowRegion(base, -p.reach, p.reach),
            FlowBox(base, 2 * p.reach_box, self.returns.min() - 2 * p.reach_box, 0.0, "base"))]
        for k, r in enumerate(self.returns):
            sl = VertexSlice(flow, self.positions[:-1][self.floor_of == k])
            members.append(CoverMember(
                f"tower-{k}", MIDDLE, OpenFlowRegion(sl, p.inner, r - p.inner),
                FlowBox(sl, r - 2 * p.inner_box, 2 * p.inner_box, 0.5 * r, f"tower-{k}")))
        return members

    def partition_values(self, coords):
        p = self.params
        if not p.ramp > 0:
            raise ParameterError("the tower partition needs a positive ramp width")
        horizon = self.returns.max() + 1.0
        fwd, _ = self.base_slice.next_hit(coords, 0.0, horizon)
        back, k = self.base_slice.prev_hit(coords, -horizon, 0.0)
        if np.isnan(fwd).any() or np.isnan(back).any():
            raise ResolutionError("orbit leaves the patch occurrences")
        plateau = _ramp_down((np.minimum(fwd, -back) - p.plateau) / p.ramp)
        floor = self.floor_of[np.minimum(k.astype(np.int64), len(self.floor_of) - 1)]
        rows = [plateau] + [np.where(floor == j, 1.0 - plateau, 0.0) for j in range(len(self.returns))]
        return np.array(rows)

    def describe(self):
        return {"kind": self.kind, "patch": self.patch, "occurrences": int(len(self.positions)),
                "returns": self.returns.tolist()}


def _occurrences(word, patch):
    out, i = [], word.find(patch)
    while i >= 0:
        out.append(i)
        i = word.find(patch, i + 1)
    return np.array(out, dtype=np.int64)


@dataclass
class TubeCover:
    """Coloured open cover by box-contained members, with sample-level membership."""

    space: object
    members: list
    L: float
    region: np.ndarray
    towers: object = None
    provenance: dict = field(default_factory=dict)

    @property
    def colours(self):
        return sorted({m.colour for m in self.members})

    @property
    def dimension(self):
        return len(self.colours) - 1

    def membership(self):
        return np.array([m.samples for m in self.members])

    def multiplicity(self):
        mem = self.membership()
        return int(mem.sum(axis=0).max())

    def uncovered(self):
        """Samples of the region whose segment Phi_[-L, L](y) lies in no member."""
        pts = self.space.points[self.region]
        ok = np.zeros(len(self.region), dtype=bool)
        for m in self.members:
            ok |= m.region.contains_segment(pts, self.L)
        return self.region[~ok]

    def colour_overlaps(self):
        """Samples lying in the L-stretched closures of two members of the same colour."""
        pts = self.space.points
        worst = 0
        for colour in self.colours:
            count = np.zeros(self.space.size, dtype=np.int64)
            for m in self.members:
                if m.colour == colour:
                    count += m.region.stretched_closure_contains(pts, self.L)
            worst = max(worst, int(count.max()))
        return max(0, worst - 1)

    def certificate(self, verify_boxes=True, t_step=None, box_indices=None):
        dim_bound = 5 * (self.space.dim + 1) if not isinstance(self.space.flow, TilingHull) else 5 * 1
        cert = Certificate(f"long thin cover at L={self.L}", provenance={
            "L": self.L, "samples": int(self.space.size), "region": int(len(self.region)),
            "members": [m.box.describe() | {"colour": m.colour} for m in self.members],
            **self.provenance})
        uncovered = self.uncovered()
        cert.add("uncovered Phi_[-L,L] segments", len(uncovered), 0)
        mult = self.multiplicity()
        cert.add("multiplicity vs colours", mult, len(self.colours))
        cert.add("multiplicity vs 5(dim+1)", mult, dim_bound)
        cert.add("same-colour stretched overlaps", self.colour_overlaps(), 0)
        if verify_boxes:
            for m in self.members:
                step = t_step if t_step is not None else min(m.box.margin / 4, 0.25)
                sub = verify_box(self.space, m.box, step, indices=_box_samples(self, m, box_indices))
                cert.add(f"box {m.name} verified", 0 if sub.passed else 1, 0,
                         note="; ".join(c.name for c in sub.failures()))
        return cert

    def to_csv_rows(self):
        yield ("member", "colour", "sample")
        for k, m in enumerate(self.members):
            for i in np.flatnonzero(m.samples):
                yield (k, m.colour, int(i))


def _box_samples(cover, member, indices):
    idx = np.flatnonzero(member.box.contains(cover.space.points))
    if indices is not None:
        idx = np.intersect1d(idx, indices)
    return idx


def freeness_probe(space, horizon, gap=1e-3):
    """Raise NotFree when some sampled orbit comes back within ``gap`` before ``horizon``."""
    flow = space.flow
    if isinstance(flow, Suspension):
        n = int(math.ceil(horizon / flow.roof_min)) + 1
        if min_rotation_distance(flow.rotation, n) < gap:
            raise NotFree("the base rotation has a near-periodic orbit")
        return horizon
    idx = None
    if isinstance(flow, TilingHull):
        idx = np.arange(0, space.size, max(1, space.size // 64))
    times = min_separation_time(space, horizon, gap, indices=idx)
    if times.min() < horizon:
        raise NotFree(f"an orbit returns within {gap} of itself after {times.min():.4g} s")
    return float(times.min())


def build_long_thin_cover(space, L, region=None, ramp=0.0):
    """Tower cover in which every sampled segment Phi_[-L, L](y), y in the region, lies in a member."""
    if not L > 0:
        raise ParameterError("segment half-length L must be positive")
    flow = space.flow
    params = TowerParameters(float(L), float(ramp))
    if isinstance(flow, PeriodicCircle):
        raise NotFree("periodic flows have no long thin covers")
    freeness_probe(space, max(10.0, 8 * L))
    if isinstance(flow, (TorusLinear, Suspension)):
        towers = RotationTowers(global_section(flow), params)
    elif isinstance(flow, TilingHull):
        towers = HullTowers(space, params)
    else:
        raise ParameterError(f"no cover construction for {flow.name}")
    members = towers.build_members()
    pts = space.points
    for m in members:
        m.samples = m.region.contains(pts)
    region = space.region(region) if not isinstance(region, np.ndarray) else region
    return TubeCover(space, members, float(L), np.asarray(region), towers,
                     {"towers": towers.describe(), "ramp": float(ramp)})


# ---------------------------------------------------------------------------
# partitions of unity


@dataclass
class ColouredPartition:
    """Functions phi_i on the samples (rows of ``values``) with colours and supporting boxes.

    ``evaluate`` maps chart points to a matrix of the same row layout and is
    used off the grid (flow translates); it is exact when the construction is.
    """

    space: object
    values: np.ndarray
    colours: list
    boxes: list
    evaluate: object = None
    labels: list = None

    def fields(self):
        out = []
        for i in range(len(self.values)):
            ev = None if self.evaluate is None else (lambda x, i=i: self.evaluate(x)[i])
            out.append(ScalarField(self.space, self.values[i], ev))
        return out

    def at(self, coords):
        if self.evaluate is not None:
            return self.evaluate(coords)
        return np.array([self.space.interpolate(v, coords) for v in self.values])

    def sum_defect(self, region):
        return float(np.max(np.abs(self.values[:, region].sum(axis=0) - 1.0)))

    def same_colour_products(self):
        worst = 0.0
        for c in set(self.colours):
            rows = [i for i, k in enumerate(self.colours) if k == c]
            for a in range(len(rows)):
                for b in range(a + 1, len(rows)):
                    worst = max(worst, float(np.max(self.values[rows[a]] * self.values[rows[b]])))
        return worst

    def lipschitz(self, t_grid, indices=None, aggregate="max"):
        """Flow-Lipschitz constant, per function (max) or of the l1-valued map (sum)."""
        pts = self.space.points if indices is None else self.space.points[indices]
        base = self.at(pts)
        best = 0.0
        for t in np.atleast_1d(t_grid):
            if t == 0:
                continue
            moved = self.at(self.space.flow.evolve(pts, t))
            diff = np.abs(moved - base)
            value = diff.sum(axis=0).max() if aggregate == "sum" else diff.max()
            best = max(best, float(value) / abs(float(t)))
        return best


def tower_partition(cover):
    """Flat tower partition: continuous, subordinate to the members, Lip(sqrt(phi)) <= pi/(2*ramp)."""
    towers = cover.towers
    if towers is None or not towers.params.ramp > 0:
        raise ParameterError("cover was built without a ramp width")
    values = towers.partition_values(cover.space.points)
    return ColouredPartition(cover.space, values, [m.colour for m in cover.members],
                             [m.box for m in cover.members], towers.partition_values,
                             [m.name for m in cover.members])


def smear_partition(fields, lam, dt):
    """Flow averages over [-lam, lam] of every function; each is flow-Lipschitz with constant sup/lam."""
    if not lam > 0:
        raise InvalidWindow("smearing radius must be positive")
    window = Window(-lam, lam)
    return [flow_average(f, window, dt) for f in fields]


def _smear_partition(partition, lam, dt):
    """Smear every row of a ColouredPartition at once (one evaluation per quadrature node)."""
    if not lam > 0:
        raise InvalidWindow("smearing radius must be positive")
    times, weights = Window(-lam, lam).nodes(dt)
    flow = partition.space.flow

    def evaluate(x):
        acc = 0.0
        for t, w in zip(times, weights):
            acc = acc + w * partition.at(flow.evolve(x, -t))
        return acc

    values = evaluate(partition.space.points)
    return ColouredPartition(partition.space, values, partition.colours, partition.boxes, evaluate,
                             partition.labels)


@dataclass
class LipschitzNerveMap:
    """F: Y -> |N| as coordinates on the members plus a rest vertex (last column).

    ``complex`` is the nerve of the smeared supports together with the
    complement of K; ``nerve_of_supports`` leaves the complement out.
    """

    space: object
    complex: SimplicialComplex
    nerve_of_supports: SimplicialComplex
    coords: np.ndarray
    evaluate: object
    boxes: list
    certificate: Certificate
    L: float


def cover_to_lipschitz_map(cover, partition, eta, dt, t_grid=None, indices=None):
    """Smear a partition subordinate to the cover over [-L, L] and map it to the nerve.

    The smearing radius is the cover's L, so the map is flow-Lipschitz with
    constant 1/L in the l1 metric; the requested eta must satisfy
    L >= (d + 2)/eta.
    """
    d = cover.dimension
    if cover.L < (d + 2) / eta - 1e-12:
        raise ParameterError(f"cover scale L={cover.L} is below (d+2)/eta={(d + 2) / eta}")
    space = cover.space
    smeared = _smear_partition(partition, cover.L, dt)
    values = np.where(smeared.values > 1e-12, smeared.values, 0.0)
    supports = [set(np.flatnonzero(v > 0).tolist()) for v in values]
    nerve_map = map_to_nerve(values, supports, cover.region, space.size)

    def evaluate(x):
        v = smeared.evaluate(x)
        v = np.where(v > 1e-12, v, 0.0)
        rest = np.clip(1.0 - v.sum(axis=0), 0.0, None)
        return np.vstack([v, rest]).T

    stretched = [stretch_box(m.box, cover.L) for m in cover.members]
    cert = Certificate("flow-Lipschitz map to the nerve", provenance={"eta": eta, "L": cover.L, "dt": dt})
    z = nerve([s for s in supports if s], size=space.size)
    cert.add("dimension of the nerve", z.dimension, d)
    t_grid = np.linspace(-0.5, 0.5, 6) if t_grid is None else t_grid
    lip = ColouredPartition(space, evaluate(space.points).T, [], [], lambda x: evaluate(x).T).lipschitz(
        t_grid, indices, aggregate="sum")
    cert.add("flow-Lipschitz constant (l1)", lip, eta, 1e-9)
    cert.add("rest coordinate on K", float(np.max(nerve_map.coords[cover.region, -1])), 0.0, 1e-9)
    escapes = 0
    pts = space.points
    for k in range(len(cover.members)):
        star = np.flatnonzero(nerve_map.coords[:, k] > 0)
        escapes += int(np.sum(~stretched[k].contains(pts[star])))
    cert.add("open-star preimages outside their boxes", escapes, 0)
    return LipschitzNerveMap(space, nerve_map.complex, z, nerve_map.coords, evaluate, stretched, cert, cover.L)


def map_to_colored_partition(nerve_map):
    """phi_sigma = nu_sigma o F; simplices are coloured by their dimension."""
    cx = nerve_map.complex
    n_cols = nerve_map.coords.shape[1]
    cols = [j for j in range(n_cols) if j in cx._index]
    where = [cx.index(j) for j in cols]

    def dense(rows):
        out = np.zeros((len(rows), len(cx.vertices)))
        out[:, where] = rows[:, cols]
        return out

    sample_values = [canonical_partition_dense(cx, z) for z in dense(nerve_map.coords)]
    keys = sorted({k for vals in sample_values for k in vals}, key=lambda s: (len(s), sorted(s)))
    key_index = {k: i for i, k in enumerate(keys)}

    def collect(values_list):
        out = np.zeros((len(keys), len(values_list)))
        for j, vals in enumerate(values_list):
            for k, v in vals.items():
                if k in key_index:
                    out[key_index[k], j] = v
        return out

    def evaluate(x):
        return collect([canonical_partition_dense(cx, z) for z in dense(nerve_map.evaluate(x))])

    labels = [tuple(sorted(cx.vertices[i] for i in k)) for k in keys]
    rest = n_cols - 1
    boxes = []
    for lab in labels:
        members = [v for v in lab if v != rest]
        boxes.append(nerve_map.boxes[members[0]] if members else None)
    colours = [len(k) - 1 for k in keys]
    return ColouredPartition(nerve_map.space, collect(sample_values), colours, boxes, evaluate, labels)


def threshold_bound(eta_prime, L, d):
    """Lipschitz bound after thresholding at theta = 2 eta' L and renormalizing."""
    theta = 2 * eta_prime * L
    if (d + 1) * theta >= 1:
        raise ParameterError(f"(d+1)*theta = {(d + 1) * theta:.4g} must stay below 1")
    return eta_prime * (1 + (d + 1) * (2 - theta)) / (1 - (d + 1) * theta) ** 2


def threshold_renormalize(partition, eta_prime, L, d):
    """psi_i' = (psi_i - theta)_+ renormalized, theta = 2 eta' L, so supports are L-separated per colour."""
    threshold_bound(eta_prime, L, d)
    theta = 2 * eta_prime * L

    def transform(v):
        cut = np.clip(v - theta, 0.0, None)
        total = cut.sum(axis=0)
        if np.any(total <= 0):
            raise ParameterError("threshold removes every function at some point")
        return cut / total

    evaluate = None if partition.evaluate is None else (lambda x: transform(partition.evaluate(x)))
    return ColouredPartition(partition.space, transform(partition.values), partition.colours, partition.boxes,
                             evaluate, partition.labels)


def same_colour_separation(partition, L, indices=None, steps=21):
    """Samples whose segment Phi_[-L, L](y) meets the supports of two same-coloured functions."""
    space = partition.space
    pts = space.points if indices is None else space.points[indices]
    hit = np.zeros((len(partition.colours), len(pts)), dtype=bool)
    for s in np.linspace(-L, L, steps):
        hit |= partition.at(space.flow.evolve(pts, s)) > 0
    bad = 0
    colours = np.asarray(partition.colours)
    for c in set(partition.colours):
        bad += int(np.sum(hit[colours == c].sum(axis=0) > 1))
    return bad


def tube_dimension_certificate(space, d, L_list, region=None, verify_boxes=False):
    """Certify covers of dimension <= d at every L in the list (items (a) and (b) of the definition)."""
    cert = Certificate(f"tube dimension <= {d}", provenance={"L": list(map(float, L_list)), "d": d})
    witness = 0
    for L in L_list:
        try:
            cover = build_long_thin_cover(space, L, region)
        except NotFree as exc:
            cert.add(f"L={L}: flow free on the probe horizon", 1, 0, note=str(exc))
            continue
        sub = cover.certificate(verify_boxes=verify_boxes)
        cert.extend(sub, prefix=f"L={L}: ")
        cert.add(f"L={L}: colours", len(cover.colours), d + 1)
        witness = max(witness, cover.dimension)
    cert.provenance["witness_dimension"] = witness
    return cert
