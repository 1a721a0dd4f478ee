"""Discretized twisted convolution algebra C(Y) x| R on a sampled space.

Elements are functions of time on a symmetric grid t_k = k*dt, |k| <= N, with
values in the sampled functions on Y.  Flow translates alpha_s(a) = a o Phi_{-s}
are computed by multilinear interpolation of the samples.  Norms are the L1
norm int sup_y |f(t)(y)| dt, an upper bound for the crossed-product norm, and
the sup norm over the grid.
"""

import math
from dataclasses import dataclass

import numpy as np

from .certificate import Certificate
from .errors import NotTransversal, ParameterError, ResolutionError, WindowExceeded
from .flows import TilingHull, TorusLinear, wrap_signed
from .tiling import patch_signature

NORM_SEMANTICS = "L1 norm (upper bound for the crossed-product norm) and sup norm"


def pullback(space, values, s):
    """alpha_s on sample values (sample index last): values at Phi_{-s}(points)."""
    values = np.asarray(values)
    if s == 0:
        return values
    coords = space.flow.evolve(space.points, -s)
    grid = space.grid
    if not all(grid.periodic):
        lo = grid.origin
        hi = grid.origin + (np.asarray(grid.shape) - 1) * grid.spacing
        # outside the sampled window the values are held constant; norms on
        # the hull are taken over an interior core that this never reaches
        coords = np.clip(coords, lo, hi)
    return grid.interpolate(values, coords)


def _trapezoid_weights(n, dt):
    w = np.full(n, dt)
    if n > 1:
        w[0] *= 0.5
        w[-1] *= 0.5
    return w


@dataclass
class ConvolutionElement:
    """f in C_c(R, C(Y)) sampled at t_k = (k - N) dt, k = 0..2N."""

    space: object
    dt: float
    values: np.ndarray
    t_max: float = math.inf

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 2 or self.values.shape[0] % 2 != 1 or self.values.shape[1] != self.space.size:
            raise ParameterError(f"values must have shape (2N+1, {self.space.size}), got {self.values.shape}")
        if self.N * self.dt > self.t_max + 1e-12:
            raise WindowExceeded(f"support [-{self.N * self.dt}, {self.N * self.dt}] exceeds T_max={self.t_max}")

    @property
    def N(self):
        return (self.values.shape[0] - 1) // 2

    @property
    def times(self):
        return (np.arange(2 * self.N + 1) - self.N) * self.dt

    def at_time(self, t):
        k = int(round(t / self.dt)) + self.N
        if not 0 <= k <= 2 * self.N:
            return np.zeros(self.space.size, dtype=complex)
        return self.values[k]

    def padded(self, N):
        if N < self.N:
            raise ParameterError("cannot pad to a shorter grid")
        extra = N - self.N
        z = np.zeros((extra, self.space.size), dtype=complex)
        return ConvolutionElement(self.space, self.dt, np.concatenate([z, self.values, z]), self.t_max)

    def _aligned(self, other):
        if other.space is not self.space or abs(other.dt - self.dt) > 1e-15:
            raise ParameterError("elements live on different grids")
        N = max(self.N, other.N)
        return self.padded(N), other.padded(N)

    def __add__(self, other):
        a, b = self._aligned(other)
        return ConvolutionElement(self.space, self.dt, a.values + b.values, min(self.t_max, other.t_max))

    def __sub__(self, other):
        a, b = self._aligned(other)
        return ConvolutionElement(self.space, self.dt, a.values - b.values, min(self.t_max, other.t_max))

    def scale(self, c):
        return ConvolutionElement(self.space, self.dt, c * self.values, self.t_max)

    def l1_norm(self, indices=None):
        v = self.values if indices is None else self.values[:, indices]
        return float(np.sum(np.max(np.abs(v), axis=1)) * self.dt)

    def sup_norm(self, indices=None):
        v = self.values if indices is None else self.values[:, indices]
        return float(np.max(np.abs(v)))

    def header(self):
        return {"dt": self.dt, "N": self.N, "samples": self.space.size, "l1": self.l1_norm(),
                "sup": self.sup_norm(), "semantics": NORM_SEMANTICS}

    def to_csv_rows(self):
        yield ("t", "sample", "re", "im")
        for k, t in enumerate(self.times):
            row = self.values[k]
            for i in np.flatnonzero(row):
                yield (float(t), int(i), float(row[i].real), float(row[i].imag))


@dataclass
class TimeWindowFunction:
    """Scalar function h on the time grid (an element of L1(R) acting by convolution)."""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 1 or len(self.values) % 2 != 1:
            raise ParameterError("time window values need odd length 2N+1")

    @property
    def N(self):
        return (len(self.values) - 1) // 2

    @property
    def times(self):
        return (np.arange(2 * self.N + 1) - self.N) * self.dt

    def l1_norm(self):
        return float(np.sum(np.abs(self.values)) * self.dt)

    def fourier(self, omega):
        """h^(omega) = int h(t) exp(-2 pi i omega t) dt (Riemann sum on the grid)."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        phase = np.exp(-2j * np.pi * np.outer(omega, self.times))
        return phase @ self.values * self.dt

    def as_element(self, space, t_max=math.inf):
        return ConvolutionElement(space, self.dt, np.repeat(self.values[:, None], space.size, axis=1), t_max)


def modulate(h, t0):
    """mu_{t0}(h)(s) = exp(2 pi i t0 s) h(s); t0 in Hz."""
    return TimeWindowFunction(h.dt, np.exp(2j * np.pi * t0 * h.times) * h.values)


def convolve(f, g):
    """(f * g)(t) = int f(s) alpha_s(g(t - s)) ds by the trapezoid rule on the common grid."""
    if g.space is not f.space or abs(g.dt - f.dt) > 1e-15:
        raise ParameterError("elements live on different grids")
    t_max = min(f.t_max, g.t_max)
    N_out = f.N + g.N
    if N_out * f.dt > t_max + 1e-12:
        raise WindowExceeded(f"product support {N_out * f.dt} exceeds T_max={t_max}")
    out = np.zeros((2 * N_out + 1, f.space.size), dtype=complex)
    weights = _trapezoid_weights(2 * f.N + 1, f.dt)
    live = np.flatnonzero(np.any(f.values != 0, axis=1))
    width = 2 * g.N + 1
    for j in live:
        s = (j - f.N) * f.dt
        shifted = pullback(f.space, g.values, s)
        out[j:j + width] += weights[j] * f.values[j][None, :] * shifted
    return ConvolutionElement(f.space, f.dt, out, t_max)


def adjoint(f):
    """f~(t) = alpha_t(f(-t)^*)."""
    out = np.empty_like(f.values)
    for k, t in enumerate(f.times):
        out[k] = pullback(f.space, np.conj(f.values[2 * f.N - k]), t)
    return ConvolutionElement(f.space, f.dt, out, f.t_max)


def left_multiply(a, f):
    """(a f)(t) = a f(t) for a sampled function a."""
    return ConvolutionElement(f.space, f.dt, np.asarray(a)[None, :] * f.values, f.t_max)


def right_multiply(f, a):
    """(f a)(t) = f(t) alpha_t(a)."""
    out = np.array([f.values[k] * pullback(f.space, a, t) for k, t in enumerate(f.times)])
    return ConvolutionElement(f.space, f.dt, out, f.t_max)


def trace(f, weights=None):
    """zeta(f) = tau(f(0)) for the invariant measure given by the sample weights."""
    w = f.space.weights if weights is None else weights
    return complex(np.sum(w * f.values[f.N]))


def random_element(space, dt, half_width, rng, modes=2):
    """Random compactly supported element: smooth time bump times a low-mode trigonometric field."""
    N = int(round(half_width / dt))
    t = (np.arange(2 * N + 1) - N) * dt
    bump = np.cos(0.5 * np.pi * np.clip(t / half_width, -1, 1)) ** 2
    pts = space.points
    field = np.zeros(space.size, dtype=complex)
    span = _chart_periods(space)
    for _ in range(modes + 1):
        k = rng.integers(-modes, modes + 1, size=space.dim)
        c = rng.normal() + 1j * rng.normal()
        field += c * np.exp(2j * np.pi * (pts / span) @ k)
    shift = rng.normal(size=3) + 1j * rng.normal(size=3)
    profile = bump * (shift[0] + shift[1] * t + shift[2] * t**2)
    values = profile[:, None] * field[None, :]
    return ConvolutionElement(space, dt, values / max(np.max(np.abs(values)), 1e-300))


def _chart_periods(space):
    g = space.grid
    return np.asarray(g.shape) * g.spacing


# ---------------------------------------------------------------------------
# projections


def _projection_report(p, title, indices=None, extra=None):
    tilde = adjoint(p)
    square = convolve(p, p)
    cert = Certificate(title, provenance={"dt": p.dt, "samples": p.space.size, "semantics": NORM_SEMANTICS,
                                          **(extra or {})})
    sa = tilde - p
    idem = square - p
    tr = trace(p) if indices is None else complex(np.sum(p.space.weights[indices] * p.values[p.N, indices])
                                                   / np.sum(p.space.weights[indices]))
    residuals = {
        "self_adjoint_l1": sa.l1_norm(indices), "self_adjoint_sup": sa.sup_norm(indices),
        "idempotent_l1": idem.l1_norm(indices), "idempotent_sup": idem.sup_norm(indices),
        "trace": tr.real,
    }
    cert.provenance["residuals"] = residuals
    return cert, residuals


@dataclass
class CoordinateTransversal:
    """X = {x_axis = level} for a linear torus flow; Phi_{-s(y)}(y) lies in X."""

    flow: TorusLinear
    axis: int = 1
    level: float = 0.0

    @property
    def speed(self):
        return float(self.flow.velocity[self.axis])

    def offset(self, coords):
        coords = np.atleast_2d(coords)
        return wrap_signed(coords[:, self.axis] - self.level) / self.speed

    def return_time(self):
        return 1.0 / abs(self.speed)


def cutoff_profile(u):
    """(1 - |u|)_+^2: continuous, 1 at 0, supported in (-1, 1)."""
    return np.maximum(0.0, 1.0 - np.abs(u)) ** 2


@dataclass
class Projection:
    element: ConvolutionElement
    cutoff: np.ndarray
    certificate: Certificate
    residuals: dict


def transversal_projection(space, transversal, r, dt, profile=cutoff_profile):
    """p(t) = g alpha_t(g) on |t| <= 2r, g = (f / int_{-2r}^{2r} f o Phi_t dt)^(1/2)."""
    if not r > 0:
        raise ParameterError("r must be positive")
    if transversal.return_time() <= 3 * r:
        raise NotTransversal(f"X returns to itself after {transversal.return_time():.4g} <= 3r = {3 * r}")
    N = int(round(2 * r / dt))
    if abs(N * dt - 2 * r) > 1e-9 or N < 2:
        raise ResolutionError("2r must be a multiple of dt with at least two steps")
    q = np.linspace(-2 * r, 2 * r, 16 * N + 1)
    qw = _trapezoid_weights(len(q), q[1] - q[0])

    def g_exact(coords):
        f = profile(transversal.offset(coords) / r)
        # denominator by quadrature along the orbit, step dt/8
        denom = sum(w * profile(transversal.offset(space.flow.evolve(coords, t)) / r) for t, w in zip(q, qw))
        return np.where(f > 0, np.sqrt(f / np.where(denom > 0, denom, 1.0)), 0.0)

    pts = space.points
    g = g_exact(pts)
    values = np.array([g * pullback(space, g, t) for t in (np.arange(2 * N + 1) - N) * dt])
    p = ConvolutionElement(space, dt, values)
    cert, res = _projection_report(p, f"transversal projection r={r}", extra={"r": r, "dx": space.grid.max_spacing})
    ortho = max(float(np.max(np.abs(g * g_exact(space.flow.evolve(pts, -sgn * 2 * r))))) for sgn in (1, -1))
    res["boundary_orthogonality"] = ortho
    cert.add("g alpha_(+-2r)(g) = 0", ortho, 0.0)
    cert.add("trace(p) > 0", -res["trace"], 0.0, note="negated trace")
    return Projection(p, g, cert, res)


def tiling_cutoff(r):
    """Hat bump on B_r(0) with unit L2 norm."""
    c = math.sqrt(3.0 / (2.0 * r))
    return lambda x: c * np.maximum(0.0, 1.0 - np.abs(x) / r)


def tiling_points(tiling):
    """Tile midpoints: a Delone set locally derivable from the tiling."""
    return tiling.midpoints()


def tiling_projection(space, r, dt, bump=None, core_margin=None):
    """p(t) = conj(g) alpha_t(g) with the pattern-equivariant g(x) = sum_{y in Lambda} f(x - y)."""
    flow = space.flow
    if not isinstance(flow, TilingHull):
        raise ParameterError("tiling_projection needs a tiling hull")
    lam = tiling_points(flow.tiling)
    gaps = np.diff(lam)
    if gaps.min() < 6 * r:
        raise ParameterError(f"some 3r-ball holds two points of Lambda (min gap {gaps.min():.4g} < 6r = {6 * r})")
    N = int(round(2 * r / dt))
    if abs(N * dt - 2 * r) > 1e-9 or N < 2:
        raise ResolutionError("2r must be a multiple of dt with at least two steps")
    bump = bump or tiling_cutoff(r)

    def g_exact(x):
        x = np.asarray(x, dtype=float)
        k = np.clip(np.searchsorted(lam, x), 1, len(lam) - 1)
        return bump(x - lam[k - 1]) + bump(x - lam[k])

    x = space.points[:, 0]
    g = g_exact(x).astype(complex)
    values = np.array([np.conj(g) * pullback(space, g, t) for t in (np.arange(2 * N + 1) - N) * dt])
    p = ConvolutionElement(space, dt, values)
    margin = 8 * r + 1.0 if core_margin is None else core_margin
    core = np.flatnonzero(np.abs(x) <= flow.window_radius - margin)
    cert, res = _projection_report(p, f"tiling projection r={r}", core, {"r": r, "dx": space.grid.max_spacing,
                                                                         "core": int(len(core))})
    ortho = max(float(np.max(np.abs(np.conj(g) * g_exact(x - sgn * 2 * r)))) for sgn in (1, -1))
    res["boundary_orthogonality"] = ortho
    cert.add("conj(g) alpha_(+-2r)(g) = 0", ortho, 0.0)
    cert.add("trace(p) > 0", -res["trace"], 0.0, note="negated trace")
    pe = pattern_equivariance_defect(flow.tiling, g_exact, r, x[core][:: max(1, len(core) // 50)])
    res["pattern_equivariance"] = pe
    cert.add("pattern equivariance at radius r + max tile", pe, 0.0, 1e-12)
    return Projection(p, g, cert, res)


def pattern_equivariance_defect(tiling, g, r, xs):
    """max |g(x) - g(x')| over pairs whose tilings agree on B_R, R = r + longest tile."""
    R = r + max(tiling.lengths.values())
    verts = tiling.vertices
    worst = 0.0
    for x in xs:
        sig = patch_signature(tiling, x, R)
        i = int(tiling.tile_index(x))
        for j in range(len(verts) - 1):
            if j == i:
                continue
            y = x + verts[j] - verts[i]
            if y - R < verts[0] or y + R > verts[-1]:
                continue
            if patch_signature(tiling, y, R) == sig:
                worst = max(worst, float(abs(g(np.array([x]))[0] - g(np.array([y]))[0])))
                break
    return worst


# ---------------------------------------------------------------------------
# stability witness


def _smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.clip(u, 0.0, 1.0)
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def band_limited_kernel(p, dt, half_width, plateau=0.5, n_omega=4001):
    """(g, g~): g^ smooth, 1 on |w| <= plateau*p/2, 0 off (-p/2, p/2); g~ = g times a Fejer window on [-T, T].

    g~ is compactly supported and positive definite (product of positive
    definite functions), normalized so that sup g~^ = 1 on a fine frequency grid.
    """
    N = int(round(half_width / dt))
    t = (np.arange(2 * N + 1) - N) * dt
    nyquist = 0.5 / dt
    if p / 2 >= nyquist / 2:
        raise ResolutionError(f"band edge p/2={p / 2} is not resolved by dt={dt} (Nyquist {nyquist})")
    edge = 0.5 * p * (1 - 1e-9)
    omega = np.linspace(-edge, edge, n_omega)
    ghat = _smooth_step((edge - np.abs(omega)) / (edge * (1 - plateau)))
    dw = omega[1] - omega[0]
    g = (np.exp(2j * np.pi * np.outer(t, omega)) @ ghat) * dw
    window = np.maximum(0.0, 1.0 - np.abs(t) / half_width)
    g_t = g * window
    probe = np.linspace(-p, p, 2001)
    peak = np.max(np.abs(TimeWindowFunction(dt, g_t).fourier(probe)))
    g_t = g_t / peak
    return TimeWindowFunction(dt, g), TimeWindowFunction(dt, g_t)


def stability_witness(f, frame, epsilon, kernel_width=None, tolerance=None):
    """y = f a (sum_l x^(l) mu_{(l+1)p}(g~)) for b = f * f~, with a = 1 on the compact space.

    ``frame`` supplies x^(l) with alpha_t(x^(l)) = exp(i (l+1) p t) x^(l); p is
    converted to Hz for the modulation.
    """
    space, dt = f.space, f.dt
    x = frame.evaluate(space.points)
    p_hz = frame.p / (2 * math.pi)
    if p_hz < 0:
        x, p_hz = np.conj(x), -p_hz
    d = len(x) - 1
    kernel_width = kernel_width if kernel_width is not None else max(1.0, 40.0 / p_hz)
    g, g_t = band_limited_kernel(p_hz, dt, kernel_width)
    b = convolve(f, adjoint(f))
    tol = dt if tolerance is None else tolerance

    X = None
    mods = []
    for l in range(d + 1):
        mu = modulate(g_t, (l + 1) * p_hz)
        mods.append(mu)
        term = left_multiply(x[l], mu.as_element(space))
        X = term if X is None else X + term
    y = convolve(f, X)
    yy = convolve(y, adjoint(y))
    y2 = convolve(y, y)
    target = (6 * d + 10) * epsilon
    defect_yy = (yy - b).l1_norm()
    cert = Certificate(f"stability witness d={d}, eps={epsilon}", provenance={
        "p_hz": p_hz, "dt": dt, "kernel_width": kernel_width, "semantics": NORM_SEMANTICS,
        "b_l1": b.l1_norm(), "g_truncation_l1": float(np.sum(np.abs(g.values - g_t.values)) * dt)})
    cert.add("||y y* - b||_1", defect_yy, target, tol)
    cert.add("||y^2||_1", y2.l1_norm(), target, tol)
    cert.add("||y||^2 <= ||y y*||_1", yy.l1_norm(), 1 + target, tol, note="||b||_1 <= 1 bounds ||b||")
    cert.add("||b||_1 <= 1", b.l1_norm(), 1.0, 1e-12)
    ortho = 0.0
    for l in range(d + 1):
        for k in range(d + 1):
            if k != l:
                prod = convolve(mods[l].as_element(space), mods[k].as_element(space))
                ortho = max(ortho, prod.l1_norm())
    gg = convolve(mods[0].as_element(space), g_t.as_element(space)).l1_norm()
    cert.add("mu_(l+1)p(g) mutually orthogonal", ortho, 0.0, tol)
    cert.add("mu_p(g) g = 0", gg, 0.0, tol)
    return y, cert
