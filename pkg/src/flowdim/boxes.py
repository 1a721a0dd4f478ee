"""Slices, flow boxes and their verification.

A slice is a set the flow crosses transversally; all slices answer one
question: when does the orbit of a point next cross me, inside a given time
window?  A box is a flow-thickening Phi_[c - l/2, c + l/2](S) of a slice S,
and an open flow region Phi_(t0, t1)(S) is the open analogue used for cover
members.  A point y = Phi_s(x) with x in S has its orbit cross S at time -s.
"""

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .certificate import Certificate
from .errors import MarginExhausted, ParameterError, ResolutionError
from .flows import PeriodicCircle, Suspension, TilingHull, TorusLinear, _as_coords


class RotationIndex:
    """First j in [0, kmax] with u + j*rotation in the arc [lo, lo + length) (mod 1).

    The answer is piecewise constant in u with breakpoints lo - j*rotation and
    lo + length - j*rotation, so it is tabulated once and looked up by
    binary search.
    """

    def __init__(self, rotation, lo, length, kmax):
        if not 0 < length < 1:
            raise ParameterError("arc length must lie in (0, 1)")
        self.rotation = float(rotation) % 1.0
        self.lo = float(lo) % 1.0
        self.length = float(length)
        self.kmax = int(kmax)
        j = np.arange(self.kmax + 1)
        cuts = np.concatenate([(self.lo - j * self.rotation) % 1.0,
                               (self.lo + self.length - j * self.rotation) % 1.0, [0.0, 1.0]])
        cuts = np.unique(cuts)
        self.breaks = cuts[:-1]
        mids = 0.5 * (cuts[:-1] + cuts[1:])
        first = np.full(len(mids), -1, dtype=np.int64)
        chunk = max(1, 4_000_000 // (self.kmax + 1))
        for start in range(0, len(mids), chunk):
            m = mids[start:start + chunk, None]
            inside = ((m + j[None, :] * self.rotation - self.lo) % 1.0) < self.length
            has = inside.any(axis=1)
            first[start:start + chunk] = np.where(has, inside.argmax(axis=1), -1)
        self.first_table = first

    def first(self, u):
        u = np.asarray(u, dtype=float) % 1.0
        k = np.searchsorted(self.breaks, u, side="right") - 1
        return self.first_table[np.clip(k, 0, len(self.first_table) - 1)]


def min_rotation_distance(rotation, nmax):
    """min over 1 <= n <= nmax of the distance from n*rotation to the nearest integer."""
    n = np.arange(1, int(nmax) + 1)
    frac = (n * rotation) % 1.0
    return float(np.min(np.minimum(frac, 1.0 - frac)))


# ---------------------------------------------------------------------------
# global sections


class TorusSection:
    """The circle {x_1 = 0} in a linear flow on the 2-torus.

    Each orbit crosses it every roof = 1/v_1 seconds; the parameter u = x_2
    moves by rotation = v_2/v_1 (mod 1) between crossings.
    """

    def __init__(self, flow):
        if not isinstance(flow, TorusLinear) or flow.dim != 2:
            raise ParameterError("torus sections need a linear flow on the 2-torus")
        v1, v2 = flow.velocity
        if v1 <= 0:
            raise ParameterError("the first velocity component must be positive")
        self.flow = flow
        self.roof = 1.0 / v1
        self.rotation = (v2 / v1) % 1.0

    def locate(self, coords):
        """Last crossing (u0) and time since it (s0 in [0, roof))."""
        coords = _as_coords(coords, 2)
        v1, v2 = self.flow.velocity
        s0 = (coords[..., 0] % 1.0) / v1
        u0 = (coords[..., 1] - v2 * s0) % 1.0
        return u0, s0

    def point(self, u, s):
        v1, v2 = self.flow.velocity
        u = np.asarray(u, dtype=float)
        s = np.asarray(s, dtype=float)
        return np.stack([(v1 * s) % 1.0, (u + v2 * s) % 1.0], axis=-1)


class SuspensionSection:
    """The base circle {s = 0} of a suspension with constant roof."""

    def __init__(self, flow):
        if not isinstance(flow, Suspension):
            raise ParameterError("not a suspension flow")
        if flow.roof_max - flow.roof_min > 1e-12:
            raise ParameterError("tower covers need a constant roof function")
        self.flow = flow
        self.roof = flow.roof_min
        self.rotation = flow.rotation

    def locate(self, coords):
        u, s = self.flow.to_section(coords)
        return u, np.clip(s, 0.0, self.roof * (1 - 1e-15))

    def point(self, u, s):
        return self.flow.from_section(np.asarray(u, dtype=float), np.asarray(s, dtype=float))


def global_section(flow):
    if isinstance(flow, TorusLinear):
        return TorusSection(flow)
    if isinstance(flow, Suspension):
        return SuspensionSection(flow)
    raise ParameterError(f"no global section for {flow.name}")


# ---------------------------------------------------------------------------
# slices


class Slice:
    def next_hit(self, coords, t_from, t_to):
        """Earliest crossing time in [t_from, t_to] (nan if none) and its slice parameter."""
        raise NotImplementedError

    def count_hits(self, coords, t_from, t_to, cap=2):
        """Number of crossings in [t_from, t_to], capped at ``cap``."""
        coords = np.asarray(coords)
        n = len(coords)
        count = np.zeros(n, dtype=np.int64)
        start = np.full(n, float(t_from))
        active = np.ones(n, dtype=bool)
        for _ in range(cap):
            if not active.any():
                break
            t, _ = self.next_hit(coords[active], start[active], t_to)
            found = ~np.isnan(t)
            idx = np.flatnonzero(active)
            count[idx[found]] += 1
            start[idx[found]] = t[found] + 1e-9
            active[idx[~found]] = False
        return count


class ArcSlice(Slice):
    """Arc [lo, lo + length) of a global section's parameter circle."""

    def __init__(self, section, lo, length, reach):
        self.section = section
        self.lo = float(lo) % 1.0
        self.length = float(length)
        self.reach = float(reach)
        kmax = int(math.ceil(self.reach / section.roof)) + 2
        self.index = RotationIndex(section.rotation, self.lo, self.length, kmax)
        self._back = None

    def contains_param(self, u):
        return ((np.asarray(u) - self.lo) % 1.0) < self.length

    def next_hit(self, coords, t_from, t_to):
        t_from = np.asarray(t_from, dtype=float)
        t_to = np.asarray(t_to, dtype=float)
        if np.any(t_to - t_from > self.reach + 1e-9):
            raise ResolutionError("query window longer than the slice's tabulated reach")
        u0, s0 = self.section.locate(coords)
        tau = self.section.roof
        k0 = np.ceil((t_from + s0) / tau - 1e-12)
        u = u0 + k0 * self.section.rotation
        j = self.index.first(u)
        t = (k0 + j) * tau - s0
        ok = (j >= 0) & (t <= t_to + 1e-12)
        param = (u + j * self.section.rotation) % 1.0
        return np.where(ok, t, np.nan), np.where(ok, param, np.nan)

    def prev_hit(self, coords, t_from, t_to):
        """Latest crossing time in [t_from, t_to] (nan if none) and its parameter."""
        t_from = np.asarray(t_from, dtype=float)
        t_to = np.asarray(t_to, dtype=float)
        if np.any(t_to - t_from > self.reach + 1e-9):
            raise ResolutionError("query window longer than the slice's tabulated reach")
        if self._back is None:
            self._back = RotationIndex(-self.section.rotation, self.lo, self.length, self.index.kmax)
        u0, s0 = self.section.locate(coords)
        tau = self.section.roof
        k1 = np.floor((t_to + s0) / tau + 1e-12)
        u = u0 + k1 * self.section.rotation
        j = self._back.first(u)
        t = (k1 - j) * tau - s0
        ok = (j >= 0) & (t >= t_from - 1e-12)
        param = (u - j * self.section.rotation) % 1.0
        return np.where(ok, t, np.nan), np.where(ok, param, np.nan)

    def describe(self):
        return {"kind": "arc", "lo": self.lo, "length": self.length}


class PointSlice(Slice):
    """A single point theta_0 on a periodic circle."""

    def __init__(self, flow, theta):
        if not isinstance(flow, PeriodicCircle):
            raise ParameterError("point slices live on periodic circles")
        self.flow = flow
        self.theta = float(theta)

    def next_hit(self, coords, t_from, t_to):
        coords = _as_coords(coords, 1)[..., 0]
        M = self.flow.period
        base = (self.theta - coords) % M
        t_from = np.asarray(t_from, dtype=float)
        t = base + M * np.ceil((t_from - base) / M - 1e-12)
        ok = t <= np.asarray(t_to) + 1e-12
        return np.where(ok, t, np.nan), np.where(ok, 0.0, np.nan)

    def describe(self):
        return {"kind": "point", "theta": self.theta}


class VertexSlice(Slice):
    """Chosen positions on the master tiling of a hull (e.g. occurrences of a patch)."""

    def __init__(self, flow, positions):
        if not isinstance(flow, TilingHull):
            raise ParameterError("vertex slices live on tiling hulls")
        self.flow = flow
        self.positions = np.sort(np.asarray(positions, dtype=float))

    def next_hit(self, coords, t_from, t_to):
        x = _as_coords(coords, 1)[..., 0]
        k = np.searchsorted(self.positions, x + np.asarray(t_from) - 1e-12, side="left")
        k_ok = k < len(self.positions)
        t = np.where(k_ok, self.positions[np.minimum(k, len(self.positions) - 1)] - x, np.nan)
        ok = k_ok & (t <= np.asarray(t_to) + 1e-12)
        return np.where(ok, t, np.nan), np.where(ok, np.minimum(k, len(self.positions) - 1), np.nan)

    def prev_hit(self, coords, t_from, t_to):
        x = _as_coords(coords, 1)[..., 0]
        k = np.searchsorted(self.positions, x + np.asarray(t_to) + 1e-12, side="right") - 1
        k_ok = k >= 0
        t = np.where(k_ok, self.positions[np.maximum(k, 0)] - x, np.nan)
        ok = k_ok & (t >= np.asarray(t_from) - 1e-12)
        return np.where(ok, t, np.nan), np.where(ok, np.maximum(k, 0), np.nan)

    def describe(self):
        return {"kind": "vertices", "count": int(len(self.positions))}


class SegmentSlice(Slice):
    """Straight segment anchor + sigma*direction, |sigma| <= half_width, in a 2-torus."""

    def __init__(self, flow, anchor, direction, half_width):
        if not isinstance(flow, TorusLinear) or flow.dim != 2:
            raise ParameterError("segment slices live on 2-tori")
        self.flow = flow
        self.anchor = np.asarray(anchor, dtype=float)
        self.direction = np.asarray(direction, dtype=float)
        self.half_width = float(half_width)
        mat = np.column_stack([flow.velocity, -self.direction])
        if abs(np.linalg.det(mat)) < 1e-12:
            raise ParameterError("segment is parallel to the flow")
        self.inverse = np.linalg.inv(mat)

    def next_hit(self, coords, t_from, t_to):
        coords = _as_coords(coords, 2)
        v = self.flow.velocity
        t_from = np.broadcast_to(np.asarray(t_from, dtype=float), (len(coords),))
        t_to = np.broadcast_to(np.asarray(t_to, dtype=float), (len(coords),))
        ends = np.concatenate([coords + t_from[:, None] * v, coords + t_to[:, None] * v])
        reach = np.abs(self.direction) * self.half_width
        lo = np.floor(ends.min(axis=0) - self.anchor - reach) - 1
        hi = np.ceil(ends.max(axis=0) - self.anchor + reach) + 1
        best_t = np.full(len(coords), np.inf)
        best_p = np.full(len(coords), np.nan)
        for n in itertools.product(range(int(lo[0]), int(hi[0]) + 1), range(int(lo[1]), int(hi[1]) + 1)):
            rhs = self.anchor + np.array(n, dtype=float) - coords
            t, sigma = (self.inverse @ rhs.T)
            ok = (np.abs(sigma) <= self.half_width) & (t >= t_from - 1e-12) & (t <= t_to + 1e-12) & (t < best_t)
            best_t = np.where(ok, t, best_t)
            best_p = np.where(ok, sigma, best_p)
        found = np.isfinite(best_t)
        return np.where(found, best_t, np.nan), np.where(found, best_p, np.nan)

    def describe(self):
        return {"kind": "segment", "anchor": self.anchor.tolist(), "direction": self.direction.tolist(),
                "half_width": self.half_width}


# ---------------------------------------------------------------------------
# boxes and open regions


@dataclass(frozen=True)
class FlowBox:
    """Box Phi_[center - length/2, center + length/2](slice) with exit margin ``margin``."""

    slice: Slice
    length: float
    margin: float
    center: float = 0.0
    name: str = ""

    @property
    def hit_window(self):
        return -self.center - 0.5 * self.length, -self.center + 0.5 * self.length

    def locate(self, coords):
        lo, hi = self.hit_window
        return self.slice.next_hit(coords, lo, hi)

    def contains(self, coords):
        t, _ = self.locate(coords)
        return ~np.isnan(t)

    def exit_times(self, coords):
        """(a_minus, a_plus); nan outside the box."""
        t, _ = self.locate(coords)
        lo, _ = self.hit_window
        a_plus = t - lo
        return a_plus - self.length, a_plus

    def a_plus(self, coords):
        return self.exit_times(coords)[1]

    def stretch(self, L):
        return stretch_box(self, L)

    def describe(self):
        return {"name": self.name, "length": self.length, "margin": self.margin, "center": self.center,
                "slice": self.slice.describe()}


def stretch_box(box, L):
    """Phi_[-L, L](B): same slice, length grows by 2L, margin shrinks by 2L."""
    if L < 0:
        raise ParameterError("stretch must be non-negative")
    if L >= box.margin / 2:
        raise MarginExhausted(f"stretch {L} is not below half the margin {box.margin}")
    return replace(box, length=box.length + 2 * L, margin=box.margin - 2 * L)


@dataclass(frozen=True)
class OpenFlowRegion:
    """Open set Phi_(t0, t1)(S) for a slice S (slice boundaries are measure-zero)."""

    slice: Slice
    t0: float
    t1: float

    def contains(self, coords):
        t, _ = self.slice.next_hit(coords, -self.t1, -self.t0)
        return ~np.isnan(t) & (t > -self.t1) & (t < -self.t0)

    def contains_segment(self, coords, L):
        """Phi_[-L, L](y) inside the region."""
        lo, hi = -self.t1 + L, -self.t0 - L
        if hi <= lo:
            return np.zeros(len(np.atleast_2d(coords)), dtype=bool)
        t, _ = self.slice.next_hit(coords, lo, hi)
        return ~np.isnan(t) & (t > lo) & (t < hi)

    def stretched_closure_contains(self, coords, L):
        """y in Phi_[-L, L] of the closure of the region."""
        t, _ = self.slice.next_hit(coords, -self.t1 - L, -self.t0 + L)
        return ~np.isnan(t)


def verify_box(space, box, t_step, indices=None, tol=1e-9):
    """Check the box axioms on the samples by following every orbit in steps of t_step.

    Checks: the slice parametrization is injective on the box, points stay in
    the box between a_- and a_+, leave it on both margins, the scanned length
    matches l_B, and a_+ decreases at unit rate along orbits.
    """
    if not t_step > 0 or t_step > box.margin / 4 + 1e-15:
        raise ParameterError(f"t_step={t_step} must be positive and at most margin/4={box.margin / 4}")
    flow = space.flow
    idx = np.arange(space.size) if indices is None else np.asarray(indices)
    pts = space.points[idx]
    cert = Certificate(f"box {box.name or ''}".strip(), provenance={
        "box": box.describe(), "t_step": t_step, "samples": int(len(idx))})

    lo, hi = box.hit_window
    counts = box.slice.count_hits(pts, lo, hi, cap=2)
    inside = counts >= 1
    cert.add("injectivity: extra slice crossings inside the box", float(np.max(counts, initial=0) - 1 if inside.any() else 0), 0.0)

    pts_in = pts[inside]
    a_minus, a_plus = box.exit_times(pts_in)
    cert.add("length constancy |a_+ - a_- - l|", float(np.max(np.abs(a_plus - a_minus - box.length), initial=0.0)), 0.0, tol)

    n_steps = int(math.ceil((box.length + 2 * box.margin) / t_step))
    # the margins are open intervals: stop just short of a_- - margin and a_+ + margin
    edge_gap = min(1e-6, 0.25 * t_step)
    offsets = np.linspace(-box.margin + edge_gap, box.length + box.margin - edge_gap, n_steps + 1)
    missing = 0
    intruding = 0
    drift = 0.0
    scan_exit_hi = np.full(len(pts_in), -np.inf)
    scan_exit_lo = np.full(len(pts_in), np.inf)
    for off in offsets:
        # times relative to each point: from a_- - margin to a_+ + margin
        t = a_minus + off
        moved = flow.evolve(pts_in, t)
        member = box.contains(moved)
        core = (t >= a_minus + tol) & (t <= a_plus - tol)
        edge = (t < a_minus - tol) | (t > a_plus + tol)
        missing += int(np.sum(core & ~member))
        intruding += int(np.sum(edge & member))
        if member.any():
            ap = box.a_plus(moved[member])
            drift = max(drift, float(np.max(np.abs(ap - (a_plus[member] - t[member])))))
            scan_exit_hi[member] = np.maximum(scan_exit_hi[member], t[member])
            scan_exit_lo[member] = np.minimum(scan_exit_lo[member], t[member])
    cert.add("membership along [a_-, a_+] (misses)", missing, 0)
    cert.add("exit on the margins (re-entries)", intruding, 0)
    cert.add("exit-time equivariance |a_+(Phi_t y) - a_+(y) + t|", drift, 0.0, 1e-7)
    if len(pts_in):
        scanned = scan_exit_hi - scan_exit_lo
        cert.add("scanned length vs l_B", float(np.max(np.abs(scanned - box.length))), 0.0, 2 * t_step)
    return cert
