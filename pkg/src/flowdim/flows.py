"""Flow families, sampled spaces, scalar fields and averaging along orbits.

Every family evolves points in closed form on its natural chart.  Fields are
stored as values on a regular sample grid; off-grid values come either from
an exact evaluator attached to the field or from multilinear interpolation.
"""

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ExtrapolationError, InvalidWindow, ParameterError, WindowExceeded
from .tiling import agreement_radius, fibonacci_tiling, tiling_distance


def wrap_signed(x, period=1.0):
    """Representative of x modulo period in [-period/2, period/2)."""
    return (np.asarray(x) + 0.5 * period) % period - 0.5 * period


def _as_coords(coords, dim):
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1 and dim == 1:
        coords = coords[:, None]
    elif coords.ndim == 1:
        coords = coords[None, :]
    return coords


# ---------------------------------------------------------------------------
# flow families


class Flow:
    """Base class: subclasses define ``dim``, ``evolve`` and ``chart_distance``."""

    dim = 1
    name = "flow"

    def evolve(self, coords, t):
        raise NotImplementedError

    def chart_distance(self, a, b):
        raise NotImplementedError

    def speed(self):
        """Upper bound on chart speed, used to size orbit scans."""
        return 1.0

    def describe(self):
        return {"family": self.name}


class TorusLinear(Flow):
    """Linear flow x -> x + t v on the torus R^n / Z^n."""

    name = "torus-linear"

    def __init__(self, velocity):
        self.velocity = np.asarray(velocity, dtype=float)
        if self.velocity.ndim != 1 or not np.all(np.isfinite(self.velocity)):
            raise ParameterError("velocity must be a finite vector")
        if np.linalg.norm(self.velocity) == 0:
            raise ParameterError("velocity must be nonzero")
        self.dim = len(self.velocity)
        self.periods = np.ones(self.dim)

    def evolve(self, coords, t):
        coords = _as_coords(coords, self.dim)
        t = np.asarray(t, dtype=float)
        return np.mod(coords + t[..., None] * self.velocity, 1.0)

    def chart_distance(self, a, b):
        d = wrap_signed(_as_coords(a, self.dim) - _as_coords(b, self.dim))
        return np.sqrt(np.sum(d * d, axis=-1))

    def speed(self):
        return float(np.linalg.norm(self.velocity))

    def return_time(self, horizon, gap):
        """First re-entry time into the gap-ball after leaving it (same for all points)."""
        v = self.velocity
        speed = self.speed()
        reach = horizon * v
        ranges = [
            range(int(math.floor(min(0.0, r))) - 1, int(math.ceil(max(0.0, r))) + 2)
            for r in reach
        ]
        best = horizon
        for n in itertools.product(*ranges):
            n = np.array(n, dtype=float)
            if not n.any():
                continue
            tstar = float(n @ v) / speed**2
            if tstar <= 0:
                continue
            miss = float(np.linalg.norm(n - tstar * v))
            if miss < gap:
                entry = tstar - math.sqrt(gap * gap - miss * miss) / speed
                best = min(best, max(entry, gap / speed))
        return best

    def describe(self):
        return {"family": self.name, "velocity": self.velocity.tolist()}


class PeriodicCircle(Flow):
    """Rotation theta -> theta + t on R / M Z."""

    name = "periodic-circle"

    def __init__(self, period):
        if not period > 0:
            raise ParameterError("period must be positive")
        self.period = float(period)
        self.periods = np.array([self.period])

    def evolve(self, coords, t):
        coords = _as_coords(coords, 1)
        t = np.asarray(t, dtype=float)
        return np.mod(coords + t[..., None], self.period)

    def chart_distance(self, a, b):
        d = wrap_signed(_as_coords(a, 1) - _as_coords(b, 1), self.period)
        return np.abs(d[..., 0])

    def return_time(self, horizon, gap):
        return min(horizon, self.period - gap)

    def describe(self):
        return {"family": self.name, "period": self.period}


class Suspension(Flow):
    """Suspension of the rotation u -> u + rotation under a positive roof.

    Points are (u, s) with 0 <= s < roof(u), glued by (u, roof(u)) ~ (u +
    rotation, 0).  The chart used for sampling is (w, sigma) with sigma =
    s / roof(u) and w = u + rotation * sigma, in which the gluing becomes plain
    periodicity, so the chart is the standard 2-torus.
    """

    name = "suspension"
    dim = 2

    def __init__(self, rotation, roof=None, roof_min=None, roof_max=None):
        self.rotation = float(rotation) % 1.0
        self.roof = roof if roof is not None else (lambda u: np.ones_like(np.asarray(u, dtype=float)))
        probe = self.roof(np.linspace(0.0, 1.0, 4097))
        self.roof_min = float(roof_min if roof_min is not None else probe.min())
        self.roof_max = float(roof_max if roof_max is not None else probe.max())
        if not self.roof_min > 0:
            raise ParameterError("roof function must be positive")
        self.periods = np.ones(2)

    def to_section(self, coords):
        """(w, sigma) -> (u, s)."""
        coords = _as_coords(coords, 2)
        sigma = coords[..., 1]
        u = np.mod(coords[..., 0] - self.rotation * sigma, 1.0)
        return u, sigma * self.roof(u)

    def from_section(self, u, s):
        sigma = s / self.roof(u)
        return np.stack([np.mod(u + self.rotation * sigma, 1.0), np.mod(sigma, 1.0)], axis=-1)

    def evolve(self, coords, t):
        coords = _as_coords(coords, 2)
        u, s = self.to_section(coords)
        s = s + np.broadcast_to(np.asarray(t, dtype=float), s.shape)
        u = np.array(u, copy=True)
        for _ in range(int(abs(np.max(np.abs(t))) / self.roof_min) + 3):
            r = self.roof(u)
            up = s >= r
            if up.any():
                s = np.where(up, s - r, s)
                u = np.where(up, np.mod(u + self.rotation, 1.0), u)
            down = s < 0
            if down.any():
                u = np.where(down, np.mod(u - self.rotation, 1.0), u)
                s = np.where(down, s + self.roof(u), s)
            if not (up.any() or down.any()):
                break
        return self.from_section(u, s)

    def chart_distance(self, a, b):
        d = wrap_signed(_as_coords(a, 2) - _as_coords(b, 2))
        return np.sqrt(np.sum(d * d, axis=-1))

    def speed(self):
        return math.hypot(1.0, self.rotation) / self.roof_min

    def describe(self):
        return {"family": self.name, "rotation": self.rotation,
                "roof_min": self.roof_min, "roof_max": self.roof_max}


class TilingHull(Flow):
    """Translation flow on the continuous hull of a one-dimensional tiling.

    The chart coordinate x stands for the master tiling translated by -x, so
    the flow is x -> x + t.  Orbits can only be followed while they stay on
    the finite master patch.
    """

    name = "tiling-hull"

    def __init__(self, tiling, window_radius):
        self.tiling = tiling
        self.window_radius = float(window_radius)
        if self.window_radius > tiling.extent:
            raise ParameterError("window radius exceeds the master tiling")
        self.reach = tiling.extent
        self.periods = np.array([np.inf])

    def evolve(self, coords, t):
        coords = _as_coords(coords, 1)
        out = coords + np.asarray(t, dtype=float)[..., None]
        if np.any(np.abs(out) > self.reach):
            raise WindowExceeded(
                f"orbit leaves the master tiling (|x| > {self.reach:.3f})"
            )
        return out

    def chart_distance(self, a, b):
        a = _as_coords(a, 1)[..., 0]
        b = _as_coords(b, 1)[..., 0]
        return np.array([tiling_distance(self.tiling, x, y) for x, y in zip(np.ravel(a), np.ravel(b))]).reshape(a.shape)

    def return_time(self, x, horizon, gap):
        """First time the orbit of x comes within gap of x again (after leaving).

        Close returns require long agreement of tile words, i.e. a shift equal
        to a difference of vertex positions.  Shifts whose agreement runs into
        the end of the master patch cannot be decided and count as returns.
        """
        verts = self.tiling.vertices
        i = int(self.tiling.tile_index(x))
        best = horizon
        for j in range(i + 1, len(verts) - 1):
            shift = verts[j] - verts[i]
            if shift - gap >= best:
                break
            r, truncated = agreement_radius(self.tiling, x, x + shift, report_truncation=True)
            if truncated or 1.0 / (1.0 + r) < gap:
                best = min(best, shift - gap)
        return best

    def describe(self):
        return {"family": self.name, "window_radius": self.window_radius,
                "lengths": {k: float(v) for k, v in self.tiling.lengths.items()}}


# ---------------------------------------------------------------------------
# sampled spaces


@dataclass(frozen=True)
class Grid:
    """Regular grid in the chart; axis k has shape[k] nodes origin[k] + i*spacing[k]."""

    origin: np.ndarray
    spacing: np.ndarray
    shape: tuple
    periodic: tuple

    def nodes(self):
        axes = [self.origin[k] + self.spacing[k] * np.arange(n) for k, n in enumerate(self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def weights_for(self, coords):
        """Corner indices and multilinear weights for arbitrary chart points."""
        coords = np.asarray(coords, dtype=float)
        corners = []
        for k, n in enumerate(self.shape):
            u = (coords[..., k] - self.origin[k]) / self.spacing[k]
            if self.periodic[k]:
                i0 = np.floor(u)
                frac = u - i0
                i0 = i0.astype(np.int64) % n
                i1 = (i0 + 1) % n
            else:
                tol = 1e-9
                if np.any(u < -tol) or np.any(u > n - 1 + tol):
                    raise ExtrapolationError(
                        f"chart coordinate {k} outside the sampled range "
                        f"[{self.origin[k]:.6g}, {self.origin[k] + (n - 1) * self.spacing[k]:.6g}]"
                    )
                u = np.clip(u, 0.0, n - 1)
                i0 = np.minimum(np.floor(u), n - 2).astype(np.int64)
                frac = u - i0
                i1 = i0 + 1
            corners.append(((i0, 1.0 - frac), (i1, frac)))
        return corners

    def interpolate(self, values, coords):
        """Multilinear interpolation; ``values`` has sample index as last axis."""
        values = np.asarray(values)
        lead = values.shape[:-1]
        grid_values = values.reshape(lead + tuple(self.shape))
        corners = self.weights_for(coords)
        out = 0.0
        for choice in itertools.product((0, 1), repeat=len(self.shape)):
            idx = tuple(corners[k][c][0] for k, c in enumerate(choice))
            w = np.prod([corners[k][c][1] for k, c in enumerate(choice)], axis=0)
            out = out + grid_values[(Ellipsis,) + idx] * w
        return out

    @property
    def max_spacing(self):
        return float(np.max(self.spacing))


@dataclass(frozen=True, eq=False)
class SampledSpace:
    """A compact space with a flow, a regular sample grid and quadrature weights."""

    flow: Flow
    grid: Grid
    weights: np.ndarray
    regions: dict = field(default_factory=dict)
    translation_chart: bool = False

    @cached_property
    def points(self):
        return self.grid.nodes()

    @property
    def size(self):
        return int(np.prod(self.grid.shape))

    @property
    def dim(self):
        return self.flow.dim

    def region(self, name=None):
        if name is None or name == "all":
            return np.arange(self.size)
        try:
            return self.regions[name]
        except KeyError:
            raise ParameterError(f"unknown region {name!r}") from None

    def with_region(self, name, indices):
        regions = dict(self.regions)
        regions[name] = np.asarray(indices, dtype=np.int64)
        return SampledSpace(self.flow, self.grid, self.weights, regions, self.translation_chart)

    def metric(self, i, j):
        a, b = self.points[np.atleast_1d(i)], self.points[np.atleast_1d(j)]
        return self.flow.chart_distance(a, b)

    def interpolate(self, values, coords):
        return self.grid.interpolate(values, coords)

    def evolve(self, indices, t):
        return self.flow.evolve(self.points[indices], t)

    def describe(self):
        return {
            "flow": self.flow.describe(),
            "grid_shape": list(self.grid.shape),
            "spacing": self.grid.spacing.tolist(),
            "samples": self.size,
        }


def torus_space(velocity, dx):
    flow = TorusLinear(velocity)
    n = int(round(1.0 / dx))
    if n < 2 or abs(n * dx - 1.0) > 1e-9:
        raise ParameterError("torus spacing must be 1/N for an integer N >= 2")
    grid = Grid(np.zeros(flow.dim), np.full(flow.dim, 1.0 / n), (n,) * flow.dim, (True,) * flow.dim)
    weights = np.full(n**flow.dim, 1.0 / n**flow.dim)
    return SampledSpace(flow, grid, weights, translation_chart=True)


def circle_space(period, dx):
    flow = PeriodicCircle(period)
    n = int(round(period / dx))
    if n < 2:
        raise ParameterError("circle needs at least two samples")
    grid = Grid(np.zeros(1), np.array([period / n]), (n,), (True,))
    return SampledSpace(flow, grid, np.full(n, 1.0 / n), translation_chart=True)


def suspension_space(rotation, dx, roof=None):
    flow = Suspension(rotation, roof)
    n = int(round(1.0 / dx))
    grid = Grid(np.zeros(2), np.full(2, 1.0 / n), (n, n), (True, True))
    nodes = grid.nodes()
    # invariant measure is du x ds; in the (w, sigma) chart its density is roof(u)
    u, _ = flow.to_section(nodes)
    density = flow.roof(u)
    return SampledSpace(flow, grid, density / density.sum())


def hull_space(window_radius, dx, pad=20.0, tiling=None):
    """Samples of the Fibonacci hull: translates by x in [-R_w, R_w]."""
    tiling = tiling or fibonacci_tiling(window_radius + pad)
    flow = TilingHull(tiling, window_radius)
    n = int(round(2 * window_radius / dx)) + 1
    grid = Grid(np.array([-window_radius]), np.array([2 * window_radius / (n - 1)]), (n,), (False,))
    return SampledSpace(flow, grid, np.full(n, 1.0 / n), translation_chart=True)


# ---------------------------------------------------------------------------
# fields


class ScalarField:
    """Complex (or real) values on the samples of a space, plus optional exact evaluator.

    ``exact`` maps an (m, dim) array of chart points to m values; when it is
    absent, off-grid values are interpolated from the samples.
    """

    __slots__ = ("space", "values", "exact")

    def __init__(self, space, values, exact=None):
        values = np.asarray(values)
        if values.shape != (space.size,):
            raise ValueError(f"expected {space.size} values, got shape {values.shape}")
        self.space = space
        self.values = values
        self.exact = exact

    @classmethod
    def from_function(cls, space, fn):
        return cls(space, np.asarray(fn(space.points)), exact=fn)

    @classmethod
    def constant(cls, space, c):
        return cls.from_function(space, lambda x: np.full(len(x), c, dtype=np.result_type(c, float)))

    def at(self, coords):
        coords = _as_coords(coords, self.space.dim)
        if self.exact is not None:
            return np.asarray(self.exact(coords))
        return self.space.interpolate(self.values, coords)

    def sup_norm(self, indices=None):
        v = self.values if indices is None else self.values[indices]
        return float(np.max(np.abs(v))) if v.size else 0.0

    def _combine(self, other, op):
        if isinstance(other, ScalarField):
            if self.exact is not None and other.exact is not None:
                f, g = self.exact, other.exact
                return ScalarField(self.space, op(self.values, other.values), lambda x: op(f(x), g(x)))
            return ScalarField(self.space, op(self.values, other.values))
        f = self.exact
        return ScalarField(self.space, op(self.values, other), None if f is None else (lambda x: op(f(x), other)))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def conj(self):
        f = self.exact
        return ScalarField(self.space, np.conj(self.values), None if f is None else (lambda x: np.conj(f(x))))

    def abs(self):
        f = self.exact
        return ScalarField(self.space, np.abs(self.values), None if f is None else (lambda x: np.abs(f(x))))

    def map(self, fn):
        """Pointwise post-composition with a numpy ufunc-like callable."""
        f = self.exact
        return ScalarField(self.space, fn(self.values), None if f is None else (lambda x: fn(f(x))))

    def to_rows(self):
        pts = self.space.points
        vals = self.values.astype(complex)
        for i in range(self.space.size):
            yield (i, *pts[i].tolist(), float(vals[i].real), float(vals[i].imag))


def evolve(space, point_index, t):
    """Chart coordinates of Phi_t applied to the given sample(s)."""
    return space.flow.evolve(space.points[point_index], t)


def pullback(field, t):
    """alpha_t(f) = f o Phi_{-t}, evaluated on the samples."""
    space = field.space
    flow = space.flow
    values = field.at(flow.evolve(space.points, -t))
    exact = None
    if field.exact is not None:
        f = field.exact
        exact = lambda x: f(flow.evolve(x, -t))  # noqa: E731
    return ScalarField(space, values, exact)


@dataclass(frozen=True)
class Window:
    """Integrable weight on [lo, hi]; the uniform probability density when profile is None."""

    lo: float
    hi: float
    profile: object = None

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.hi > self.lo:
            raise InvalidWindow(f"window [{self.lo}, {self.hi}] is empty or reversed")

    def nodes(self, dt):
        n = max(int(math.ceil((self.hi - self.lo) / dt - 1e-9)), 1)
        t = np.linspace(self.lo, self.hi, n + 1)
        w = np.full(n + 1, (self.hi - self.lo) / n)
        w[0] *= 0.5
        w[-1] *= 0.5
        if self.profile is None:
            w = w / (self.hi - self.lo)
        else:
            w = w * np.asarray(self.profile(t))
        return t, w


def flow_average(field, window, dt):
    """Trapezoid quadrature of int w(t) f(Phi_{-t} y) dt on every sample."""
    if not dt > 0:
        raise InvalidWindow("time step must be positive")
    space = field.space
    flow = space.flow
    times, weights = window.nodes(dt)
    pts = space.points
    values = 0.0
    for t, w in zip(times, weights):
        values = values + w * field.at(flow.evolve(pts, -t))
    if field.exact is None:
        return ScalarField(space, np.asarray(values))
    f = field.exact

    def exact(x):
        acc = 0.0
        for t, w in zip(times, weights):
            acc = acc + w * f(flow.evolve(x, -t))
        return acc

    return ScalarField(space, np.asarray(values), exact)


def smear(field, lam, dt):
    """Uniform flow average over [-lam, lam]."""
    if not lam > 0:
        raise InvalidWindow("smearing radius must be positive")
    return flow_average(field, Window(-lam, lam), dt)


def flow_lipschitz_constant(field, t_grid, indices=None):
    """Empirical sup of |f(Phi_t y) - f(y)| / |t|; a lower bound on the true constant."""
    space = field.space
    idx = np.arange(space.size) if indices is None else np.asarray(indices)
    pts = space.points[idx]
    base = field.values[idx]
    best = 0.0
    for t in np.atleast_1d(t_grid):
        if t == 0:
            continue
        moved = field.at(space.flow.evolve(pts, t))
        best = max(best, float(np.max(np.abs(moved - base))) / abs(float(t)))
    return best


@dataclass(frozen=True)
class InvariantMeasure:
    """Quadrature weights for an invariant probability measure.

    Invariance holds up to |tau(alpha_t f) - tau(f)| <= grid_defect * Lip(f)
    + edge_rate * |t| * sup|f|; the edge term is nonzero only for truncated
    windows (tiling hulls).
    """

    space: SampledSpace
    grid_defect: float
    edge_rate: float = 0.0

    @property
    def weights(self):
        return self.space.weights

    def defect_bound(self, t, lipschitz, sup):
        return self.grid_defect * lipschitz + self.edge_rate * abs(t) * sup


def invariant_measure(space):
    if isinstance(space.flow, TilingHull):
        return InvariantMeasure(space, space.grid.max_spacing, 1.0 / (2 * space.flow.window_radius))
    return InvariantMeasure(space, space.grid.max_spacing)


def invariant_integral(measure, field):
    return complex(np.sum(measure.weights * field.values))


def min_separation_time(space, horizon, gap=1e-3, indices=None):
    """Per sample, the first time <= horizon at which the orbit re-enters the gap-ball.

    The orbit leaves the ball of radius ``gap`` around its starting point
    immediately; the bound is the first later time it comes back closer than
    ``gap`` (or ``horizon`` if it never does).
    """
    if not horizon > 0:
        raise ParameterError("horizon must be positive")
    flow = space.flow
    idx = np.arange(space.size) if indices is None else np.asarray(indices)
    if isinstance(flow, (TorusLinear, PeriodicCircle)):
        return np.full(len(idx), flow.return_time(horizon, gap))
    if isinstance(flow, TilingHull):
        return np.array([flow.return_time(float(space.points[i, 0]), horizon, gap) for i in idx])
    # generic orbit scan
    pts = space.points[idx]
    step = 0.5 * gap / flow.speed()
    out = np.full(len(idx), float(horizon))
    open_ = np.ones(len(idx), dtype=bool)
    left = np.zeros(len(idx), dtype=bool)
    t = step
    while t <= horizon and open_.any():
        d = flow.chart_distance(flow.evolve(pts[open_], t), pts[open_])
        sub = np.flatnonzero(open_)
        left[sub] |= d >= gap
        hit = left[sub] & (d < gap)
        out[sub[hit]] = t
        open_[sub[hit]] = False
        t += step
    return out
