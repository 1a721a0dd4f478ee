"""Finite-tolerance Rokhlin witnesses for flows: certification, order zero calculus,
conversion from tower covers and back to boxes, and discrete-time towers."""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .certificate import Certificate
from .errors import BoxError, DefectBudgetExceeded, ParameterError
from .flows import ScalarField
from .tube import build_long_thin_cover, tower_partition

PHASE_THRESHOLD = 1e-6
BOX_EPSILON = 1.0 / 96.0


@dataclass
class RokhlinWitness:
    """Contraction fields x^(0..d) with alpha_t(x) ~ exp(i p t) x on [-T, T].

    ``evaluate`` maps chart points (m, dim) to a (d+1, m) complex array; the
    action is alpha_t(x) = x o Phi_{-t}.
    """

    space: object
    evaluate: object
    p: float
    horizon: float
    tests: list
    delta: float = 0.0
    defects: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def period(self):
        return 2 * math.pi / abs(self.p)

    @property
    def d(self):
        return len(self.evaluate(self.space.points[:1])) - 1

    def fields(self):
        pts = self.space.points
        values = self.evaluate(pts)
        return [ScalarField(self.space, values[l], lambda x, l=l: self.evaluate(x)[l]) for l in range(len(values))]

    def header(self):
        return {"p": self.p, "period": self.period, "horizon": self.horizon, "d": self.d,
                "delta": self.delta, "defects": self.defects, **self.provenance}

    def to_csv_rows(self):
        values = self.evaluate(self.space.points)
        head = ["sample"] + [f"x{l}_{part}" for l in range(len(values)) for part in ("re", "im")]
        yield tuple(head)
        for i in range(self.space.size):
            row = [i]
            for l in range(len(values)):
                row += [float(values[l, i].real), float(values[l, i].imag)]
            yield tuple(row)


def _constant_tests(space):
    return [ScalarField.constant(space, 1.0)]


def circle_witness(space, tests=None, horizon=10.0, harmonic=1):
    """x(theta) = exp(2 pi i k theta / M) on the periodic circle; frequency p = -2 pi k / M."""
    M = space.flow.period
    if int(harmonic) != harmonic or harmonic == 0:
        raise ParameterError("harmonic must be a nonzero integer")

    def evaluate(x):
        return np.exp(2j * np.pi * harmonic * np.asarray(x)[:, 0] / M)[None, :]

    if tests is None:
        tests = [ScalarField.constant(space, 1.0), ScalarField.from_function(space, lambda x: evaluate(x)[0])]
    return RokhlinWitness(space, evaluate, -2 * math.pi * harmonic / M, float(horizon), tests, 0.0,
                          provenance={"construction": "circle eigenfunction", "harmonic": int(harmonic)})


def zero_witness(space, d=0, horizon=1.0, p=2 * math.pi):
    def evaluate(x):
        return np.zeros((d + 1, len(x)), dtype=complex)

    return RokhlinWitness(space, evaluate, p, horizon, _constant_tests(space), 0.0,
                          provenance={"construction": "zero fields"})


def witness_from_cover(cover, partition, M, horizon=1.0, delta=None, tests=None):
    """x^(l) = sum over colour-l members of sqrt(phi_i) exp(2 pi i a_+(B_i) / M)."""
    if not M > 0:
        raise ParameterError("period M must be positive")
    boxes = partition.boxes
    for b in boxes:
        if not callable(getattr(b, "a_plus", None)):
            raise BoxError(f"box {getattr(b, 'name', b)!r} has no exit-time map")
    colours = list(partition.colours)
    d = max(colours)

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        phi = partition.at(x)
        out = np.zeros((d + 1, len(x)), dtype=complex)
        for i, (colour, box) in enumerate(zip(colours, boxes)):
            mask = phi[i] > 0
            if not mask.any():
                continue
            a_plus = box.a_plus(x[mask])
            if np.isnan(a_plus).any():
                raise BoxError(f"partition function {i} is positive outside its box")
            out[colour, mask] += np.sqrt(phi[i, mask]) * np.exp(2j * np.pi * a_plus / M)
        return out

    prov = {"construction": "tower cover", "M": M, "members": len(boxes), "cover_L": cover.L}
    ramp = getattr(getattr(cover.towers, "params", None), "ramp", 0.0)
    if ramp:
        # along an orbit only one same-colour sqrt(phi_i) is nonzero at a time, each with
        # flow-Lipschitz constant pi/(2w); the phase factor is exactly equivariant
        prov["predicted_delta_a"] = math.pi * horizon / (2 * ramp)
        prov["ramp"] = ramp
    return RokhlinWitness(cover.space, evaluate, 2 * math.pi / M, float(horizon),
                          tests if tests is not None else _constant_tests(cover.space),
                          float(delta) if delta is not None else 0.0, provenance=prov)


def ramp_for_defect(delta, horizon, safety=1.25):
    """Ramp width w with pi*T/(2w) = delta/safety."""
    if not delta > 0:
        raise ParameterError("target defect must be positive")
    return safety * math.pi * horizon / (2 * delta)


def cover_witness(space, L, M, horizon, delta, region=None, safety=1.25):
    """Tower cover at scale L with a ramp sized for delta, its flat partition and the witness."""
    cover = build_long_thin_cover(space, L, region, ramp=ramp_for_defect(delta, horizon, safety))
    partition = tower_partition(cover)
    return cover, partition, witness_from_cover(cover, partition, M, horizon, delta)


def _default_grid(horizon):
    return np.linspace(-horizon, horizon, 41)


def _product(a, b):
    """Pointwise complex product with operand-symmetric rounding, so a*b - b*a is exactly 0."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return (a.real * b.real - a.imag * b.imag) + 1j * (a.real * b.imag + a.imag * b.real)


def certify_witness(witness, t_grid=None, indices=None, tolerance=1e-9):
    """Measure the four finitary residuals (sup over samples, tests, l and t) and contraction."""
    space = witness.space
    T = witness.horizon
    t_grid = _default_grid(T) if t_grid is None else np.asarray(t_grid, dtype=float)
    if np.any(np.abs(t_grid) > T + 1e-12):
        raise ParameterError("time grid must lie inside [-T, T]")
    pts = space.points if indices is None else space.points[indices]
    x = witness.evaluate(pts)
    weights = np.array([np.abs(a.at(pts)) for a in witness.tests])
    wmax = weights.max(axis=0)

    delta_a = 0.0
    for t in t_grid:
        moved = witness.evaluate(space.flow.evolve(pts, -t))
        diff = np.abs(moved - np.exp(1j * witness.p * t) * x).max(axis=0)
        delta_a = max(delta_a, float(np.max(wmax * diff)))
    delta_b = float(np.max(wmax * np.abs(1.0 - np.sum(np.abs(x) ** 2, axis=0))))
    delta_c = 0.0
    delta_d = 0.0
    for a in witness.tests:
        av = np.broadcast_to(a.at(pts), x.shape)
        delta_c = max(delta_c, float(np.max(np.abs(_product(x, av) - _product(av, x)))))
        normal = _product(x, np.conj(x)) - _product(np.conj(x), x)
        delta_d = max(delta_d, float(np.max(np.abs(_product(av, normal)))))
    sup = float(np.max(np.abs(x)))

    witness.defects = {"a": delta_a, "b": delta_b, "c": delta_c, "d": delta_d, "sup": sup}
    cert = Certificate("Rokhlin witness", provenance={
        "p": witness.p, "T": T, "d": witness.d, "samples": int(len(pts)), "times": len(t_grid),
        "tests": len(witness.tests), **witness.provenance})
    bound = witness.delta
    cert.add("(a) equivariance |a(alpha_t x - e^{ipt} x)|", delta_a, bound, tolerance)
    cert.add("(b) completeness |a(1 - sum |x|^2)|", delta_b, bound, tolerance)
    cert.add("(c) commutator [x, a]", delta_c, bound, tolerance)
    cert.add("(d) normality a[x, x*]", delta_d, bound, tolerance)
    cert.add("contraction sup |x|", sup, 1.0, tolerance)
    return cert


# ---------------------------------------------------------------------------
# order zero calculus


def _phase(values, M):
    """M * arg(x) / 2 pi in [0, M)."""
    return M * (np.angle(values) / (2 * np.pi) % 1.0)


def order_zero_apply(x, f, M, threshold=PHASE_THRESHOLD):
    """|x|^2 f(M arg(x) / 2 pi), zero where |x| is below the phase threshold."""
    def apply(values):
        values = np.asarray(values)
        mod = np.abs(values)
        live = mod > threshold
        out = np.zeros(values.shape, dtype=complex)
        out[live] = mod[live] ** 2 * f(_phase(values[live], M))
        return out

    exact = None if x.exact is None else (lambda c: apply(x.exact(c)))
    return ScalarField(x.space, apply(x.values), exact)


def circle_generator(M, power=1):
    return lambda theta: np.exp(2j * np.pi * power * theta / M)


@dataclass
class Eigenframe:
    """Fields x~^(l) with alpha_t(x~^(l)) ~ exp(i (l+1) p t) x~^(l)."""

    space: object
    evaluate: object
    p: float
    horizon: float
    tests: list
    source_defects: dict
    defects: dict = field(default_factory=dict)

    @property
    def frequencies(self):
        n = len(self.evaluate(self.space.points[:1]))
        return [(l + 1) * self.p for l in range(n)]


def eigenframe_from_witness(witness, threshold=PHASE_THRESHOLD):
    """x~^(l) = |x^(l)| u^(l+1), u the phase of x^(l); equal to x^(0) for l = 0."""
    def evaluate(c):
        x = witness.evaluate(c)
        mod = np.abs(x)
        u = np.where(mod > threshold, x / np.where(mod > threshold, mod, 1.0), 0.0)
        powers = np.arange(1, len(x) + 1)[:, None]
        return mod * u ** powers

    return Eigenframe(witness.space, evaluate, witness.p, witness.horizon, witness.tests, dict(witness.defects))


def certify_eigenframe(frame, t_grid=None, indices=None, tolerance=1e-9):
    space = frame.space
    t_grid = _default_grid(frame.horizon) if t_grid is None else np.asarray(t_grid, dtype=float)
    pts = space.points if indices is None else space.points[indices]
    x = frame.evaluate(pts)
    wmax = np.array([np.abs(a.at(pts)) for a in frame.tests]).max(axis=0)
    per_index = np.zeros(len(x))
    for t in t_grid:
        moved = frame.evaluate(space.flow.evolve(pts, -t))
        for l in range(len(x)):
            r = np.abs(moved[l] - np.exp(1j * (l + 1) * frame.p * t) * x[l])
            per_index[l] = max(per_index[l], float(np.max(wmax * r)))
    complete = float(np.max(wmax * np.abs(1.0 - np.sum(np.abs(x) ** 2, axis=0))))
    frame.defects = {"frequency": per_index.tolist(), "completeness": complete}
    delta_a = frame.source_defects.get("a", 0.0)
    delta_b = frame.source_defects.get("b", 0.0)
    cert = Certificate("eigenframe", provenance={"p": frame.p, "T": frame.horizon, "source": frame.source_defects})
    for l, r in enumerate(per_index):
        cert.add(f"frequency-{l + 1}p equivariance, index {l}", r, (l + 1) * delta_a, tolerance)
    cert.add("completeness |1 - sum |x~|^2|", complete, delta_b, tolerance)
    return cert


# ---------------------------------------------------------------------------
# discrete towers for the time-t map


def _is_prime(n):
    return n >= 2 and all(n % k for k in range(2, int(math.isqrt(n)) + 1))


def _rotation_multiplier(rho, n, tol, kmax=10**6):
    """Smallest K with K*rho within tol of 1/n modulo 1."""
    chunk = 100_000
    for start in range(1, kmax + 1, chunk):
        K = np.arange(start, min(start + chunk, kmax + 1))
        err = (K * rho - 1.0 / n + 0.5) % 1.0 - 0.5
        ok = np.flatnonzero(np.abs(err) <= tol)
        if ok.size:
            return int(K[ok[0]]), float(err[ok[0]])
    raise ParameterError("no tower multiplier found: the rotation is too close to rational")


@dataclass
class DiscreteTowers:
    """Positive contractions f_j^(i,l) = |x^(l)|^2 b_j^(i)(phase of x^(l))."""

    witness: object
    t: float
    n: int
    epsilon: float
    multiplier: int
    rotation_error: float
    conjugate: bool

    def circle_functions(self, theta):
        """b_j^(i)(theta), shape (2, n, m): hats on the circle pulled back by psi = n K theta / M mod n."""
        M = self.witness.period
        psi = self.n * ((self.multiplier * np.asarray(theta) / M) % 1.0)
        out = np.empty((2, self.n) + np.shape(theta))
        for i in range(2):
            for j in range(self.n):
                u = (psi - j - 0.5 * i + 0.5 * self.n) % self.n - 0.5 * self.n
                out[i, j] = np.maximum(0.0, 1.0 - 2.0 * np.abs(u))
        return out

    def evaluate(self, coords):
        """Array of shape (2, d+1, n, m)."""
        x = self.witness.evaluate(coords)
        if self.conjugate:
            x = np.conj(x)
        mod = np.abs(x)
        live = mod > PHASE_THRESHOLD
        b = self.circle_functions(_phase(x, self.witness.period))
        return np.where(live, mod ** 2, 0.0)[None, :, None, :] * np.moveaxis(b, 2, 1)


def discrete_towers(witness, t, n, epsilon=0.1):
    """Two single towers of height n for alpha_t, pushed through the witness' order zero maps."""
    if not _is_prime(int(n)) or int(n) != n:
        raise ParameterError(f"tower height must be prime, got {n}")
    n = int(n)
    M = witness.period
    rho = t / M
    approx = Fraction(rho).limit_denominator(10_000)
    if abs(rho - float(approx)) < 1e-12:
        raise ParameterError(f"t/M = {rho} is rational ({approx}); choose M independent of t")
    # shift error of b_{j+1} - lambda_t(b_j) is 2 n |K t / M - 1/n| (hat slope 2)
    K, err = _rotation_multiplier(rho, n, 0.5 * epsilon / (2 * n))
    # order zero maps intertwine the circle shift with alpha only when the phase
    # falls along the flow, i.e. p < 0; otherwise use the conjugate fields
    return DiscreteTowers(witness, float(t), n, float(epsilon), K, err, witness.p > 0)


def certify_towers(towers, indices=None, tolerance=1e-9):
    w = towers.witness
    space = w.space
    pts = space.points if indices is None else space.points[indices]
    f = towers.evaluate(pts)
    back = towers.evaluate(space.flow.evolve(pts, -towers.t))
    wmax = np.array([np.abs(a.at(pts)) for a in w.tests]).max(axis=0)
    eps = towers.epsilon
    delta_a = w.defects.get("a", 0.0)
    delta_b = w.defects.get("b", 0.0)

    total = float(np.max(wmax * np.abs(1.0 - f.sum(axis=(0, 1, 2)))))
    shifted = np.roll(f, -1, axis=2)  # f_{j+1}, with f_0 following f_{n-1}
    diff = wmax * np.abs(shifted - back)
    step = float(np.max(diff[:, :, :-1])) if towers.n > 1 else 0.0
    cyclic = float(np.max(diff[:, :, -1]))
    ortho = 0.0
    for j1 in range(towers.n):
        for j2 in range(towers.n):
            if j1 != j2:
                ortho = max(ortho, float(np.max(wmax * f[:, :, j1] * f[:, :, j2])))

    phase_slope = 2 * towers.n * towers.multiplier / (2 * math.pi)
    shift_bound = 2 * eps + (2 + phase_slope) * delta_a
    cert = Certificate(f"discrete towers t={towers.t}, n={towers.n}", provenance={
        "multiplier": towers.multiplier, "rotation_error": towers.rotation_error,
        "epsilon": eps, "samples": int(len(pts))})
    cert.add("sum of towers = 1", total, 2 * eps + delta_b, tolerance)
    cert.add("shift |f_{j+1} - alpha_t(f_j)|", step, shift_bound, tolerance)
    cert.add("cyclic |f_0 - alpha_t(f_{n-1})|", cyclic, shift_bound, tolerance)
    cert.add("orthogonality |f_j1 f_j2|", ortho, 2 * eps, tolerance)
    return cert


# ---------------------------------------------------------------------------
# boxes from a witness


def defect_budget(d, eps=BOX_EPSILON):
    """Largest delta admissible for the annular sections D_0 c D_1 c D_2 (strict)."""
    root = math.sqrt(d + 2)
    # radial gap between consecutive inner radii, and angular gap eps (in turns)
    # seen from the inner radius of D_1
    return min(1.0 / (d + 2), 1.0 / (3 * root), (2.0 / (3 * root)) * math.sin(2 * math.pi * eps))


@dataclass
class BoxGeometry:
    d: int
    L: float
    eps: float = BOX_EPSILON

    @property
    def inner(self):
        """Inner radii of D_0, D_1, D_2."""
        root = math.sqrt(self.d + 2)
        return [(3 - j) / (3 * root) for j in range(3)]

    @property
    def period(self):
        return 8 * self.L

    @property
    def tube(self):
        return (0.5 - 4 * self.eps) * self.period

    @property
    def band(self):
        return 0.5 - 8 * self.eps

    @property
    def length(self):
        return (1 - 16 * self.eps) * self.period

    @property
    def margin(self):
        # consecutive D_1 clusters on an orbit are (1 - 12 eps) 8L apart at least
        return 4 * self.eps * self.period

    def g(self, z):
        """Continuous, 1 on D_1, supported in D_2."""
        turns = np.angle(z) / (2 * np.pi)
        r0, r1, r2 = self.inner
        ang = np.clip((2 * self.eps - np.abs(turns)) / self.eps, 0.0, 1.0)
        rad = np.clip((np.abs(z) - r2) / (r1 - r2), 0.0, 1.0)
        return ang * rad

    def in_d1(self, z):
        return (np.abs(np.angle(z)) / (2 * np.pi) <= self.eps) & (np.abs(z) >= self.inner[1])


class WitnessBoxes:
    """The 2(d+1) sets B^(l, sigma), evaluated from orbit profiles of the witness.

    Membership, the averaged phase xi and Lambda = arg(xi)/2 pi are computed on
    a time grid of step 8L/768 along each orbit; xi uses the trapezoid rule over
    the window [-4L, 4L] and the D_1 condition a sliding window of radius
    (1/2 - 4 eps) 8L.
    """

    def __init__(self, witness, L, eps=BOX_EPSILON, resolution=768, chunk=128):
        self.witness = witness
        self.space = witness.space
        self.d = witness.d
        self.geo = BoxGeometry(self.d, float(L), eps)
        self.h = self.geo.period / resolution
        self.half_window = resolution // 2
        self.tube_steps = int(math.floor(self.geo.tube / self.h + 1e-9))
        self.pad = max(self.half_window, self.tube_steps)
        self.chunk = chunk
        self.branches = [(l, s) for l in range(self.d + 1) for s in (+1, -1)]

    @property
    def names(self):
        return [f"B({l},{'+' if s > 0 else '-'})" for l, s in self.branches]

    def profile(self, pts, k_lo, k_hi):
        """member (branches, m, K) and Lambda (branches, m, K) at times k*h, k_lo <= k <= k_hi."""
        pts = np.atleast_2d(pts)
        m = len(pts)
        ks = np.arange(k_lo, k_hi + 1)
        member = np.zeros((len(self.branches), m, len(ks)), dtype=bool)
        lam = np.full((len(self.branches), m, len(ks)), np.nan)
        for start in range(0, m, self.chunk):
            sl = slice(start, min(start + self.chunk, m))
            mb, lb = self._profile_chunk(pts[sl], k_lo, k_hi)
            member[:, sl] = mb
            lam[:, sl] = lb
        return ks * self.h, member, lam

    def _profile_chunk(self, pts, k_lo, k_hi):
        geo, h, pad = self.geo, self.h, self.pad
        raw = np.arange(k_lo - pad, k_hi + pad + 1)
        times = raw * h
        m = len(pts)
        flow = self.space.flow
        x = np.empty((self.d + 1, m, len(raw)), dtype=complex)
        for k, t in enumerate(times):
            x[:, :, k] = self.witness.evaluate(flow.evolve(pts, t))
        K = k_hi - k_lo + 1
        rot = np.exp(2j * np.pi * times / geo.period)
        W, S = self.half_window, self.tube_steps
        member = np.zeros((len(self.branches), m, K), dtype=bool)
        lam = np.full((len(self.branches), m, K), np.nan)
        for b, (l, sign) in enumerate(self.branches):
            z = sign * x[l]
            integrand = geo.g(z) * rot
            cum = np.concatenate([np.zeros((m, 1)), np.cumsum(0.5 * (integrand[:, 1:] + integrand[:, :-1]) * h, axis=1)],
                                 axis=1)
            idx = np.arange(pad, pad + K)
            xi = (cum[:, idx + W] - cum[:, idx - W]) * np.conj(rot[idx]) / geo.period
            hits = np.concatenate([np.zeros((m, 1)), np.cumsum(geo.in_d1(z), axis=1)], axis=1)
            near_d1 = (hits[:, idx + S + 1] - hits[:, idx - S]) > 0
            mod = np.abs(xi)
            turns = np.angle(xi) / (2 * np.pi)
            in_v = (mod > 1e-12) & (mod <= 8 * geo.eps * (1 + 1e-9)) & (np.abs(turns) <= geo.band)
            member[b] = near_d1 & in_v
            lam[b] = np.where(mod > 1e-12, turns, np.nan)
        return member, lam

    def contains(self, coords):
        """(branches, m) membership."""
        _, member, _ = self.profile(coords, 0, 0)
        return member[:, :, 0]

    def exit_times(self, coords):
        """(a_minus, a_plus), each (branches, m); nan outside."""
        _, member, lam = self.profile(coords, 0, 0)
        a_plus = np.where(member[:, :, 0], (lam[:, :, 0] + self.geo.band) * self.geo.period, np.nan)
        return a_plus - self.geo.length, a_plus


@dataclass
class WitnessCover:
    """Output of the box extraction: one box per branch (l, sigma), each its own colour."""

    boxes: WitnessBoxes
    L: float
    region: np.ndarray
    certificate: Certificate
    membership: np.ndarray

    @property
    def names(self):
        return self.boxes.names

    @property
    def size(self):
        return len(self.boxes.branches)

    @property
    def length(self):
        return self.boxes.geo.length

    @property
    def margin(self):
        return self.boxes.geo.margin

    def multiplicity(self):
        return int(self.membership.sum(axis=0).max())

    def to_csv_rows(self):
        yield ("member", "colour", "sample")
        for k in range(self.size):
            for i in np.flatnonzero(self.membership[k]):
                yield (k, k, int(i))


def _verify_profiles(boxes, indices, tol=1e-7):
    """Box checks from orbit profiles: one slice crossing, exact exit equivariance, margins."""
    geo, h = boxes.geo, boxes.h
    space = boxes.space
    span = int(math.ceil((geo.length + geo.margin) / h)) + 1
    times, member, lam = boxes.profile(space.points[indices], -span, span)
    zero = span
    rows = []
    for b in range(len(boxes.branches)):
        inside = member[b, :, zero]
        stats = {"samples": int(inside.sum()), "crossings": 0, "misses": 0, "reentries": 0,
                 "drift": 0.0, "scan": 0.0, "equivariance": 0.0}
        if inside.any():
            mb, lb = member[b, inside], lam[b, inside]
            a_plus = (lb[:, zero] + geo.band) * geo.period
            a_minus = a_plus - geo.length
            t = times[None, :]
            window = (t > a_minus[:, None] - geo.margin) & (t < a_plus[:, None] + geo.margin)
            core = (t >= a_minus[:, None] + tol) & (t <= a_plus[:, None] - tol)
            edge = window & ((t < a_minus[:, None] - tol) | (t > a_plus[:, None] + tol))
            stats["misses"] = int(np.sum(core & ~mb))
            stats["reentries"] = int(np.sum(edge & mb))
            ap = (lb + geo.band) * geo.period
            drift = np.where(mb & window, np.abs(ap - (a_plus[:, None] - t)), 0.0)
            stats["drift"] = float(np.max(drift))
            lam_drift = np.where(mb & window, np.abs(lb - lb[:, zero:zero + 1] + t / geo.period), 0.0)
            stats["equivariance"] = float(np.max(lam_drift))
            # crossings of Lambda = 0 between consecutive member samples
            both = mb[:, 1:] & mb[:, :-1] & window[:, 1:]
            cross = both & (lb[:, :-1] > 0) & (lb[:, 1:] <= 0)
            stats["crossings"] = int(np.max(cross.sum(axis=1)))
            tt = np.where(mb & window, t, np.nan)
            stats["scan"] = float(np.max(np.abs(np.nanmax(tt, axis=1) - np.nanmin(tt, axis=1) - geo.length)))
        rows.append(stats)
    return rows


def boxes_from_witness(witness, L, region=None, eps=BOX_EPSILON, verify_indices=None, coverage_indices=None,
                       t_grid=None, resolution=768):
    """Extract the 2(d+1) boxes B^(l, sigma) of length (1 - 16 eps) 8L from a certified witness."""
    if not L > 0:
        raise ParameterError("L must be positive")
    L = float(L)
    period = 8 * L
    if abs(witness.period - period) > 1e-9 * period or witness.p < 0:
        raise ParameterError(f"witness must have p = 2 pi / 8L = {2 * math.pi / period}, got {witness.p}")
    if witness.horizon < period - 1e-12:
        raise ParameterError(f"witness horizon {witness.horizon} is below 8L = {period}")
    space = witness.space
    region = np.arange(space.size) if region is None else np.asarray(region)
    t_grid = np.linspace(-period, period, 33) if t_grid is None else t_grid
    wcert = certify_witness(witness, t_grid)
    d = witness.d
    budget = defect_budget(d, eps)
    measured = max(witness.defects[k] for k in "abcd")
    if not measured < budget:
        raise DefectBudgetExceeded(f"witness defect {measured:.4g} is not below the budget {budget:.4g} for d={d}")

    boxes = WitnessBoxes(witness, L, eps, resolution)
    geo = boxes.geo
    cert = Certificate(f"boxes from witness at L={L}", provenance={
        "L": L, "d": d, "epsilon": eps, "budget": budget, "defects": dict(witness.defects),
        "length": geo.length, "margin": geo.margin, "time_step": boxes.h})
    cert.extend(wcert, "witness: ")
    cert.add("member count vs 2(d+1)", len(boxes.branches), 2 * (d + 1))
    cert.add("box length |l_B - (1 - 16 eps) 8L|", abs(geo.length - (1 - 16 * eps) * period), 0.0, 1e-12)

    # coverage: Phi_[-L, L](y) inside some box for every sampled y in K
    cov = region if coverage_indices is None else np.intersect1d(region, coverage_indices)
    k_l = int(math.ceil(L / boxes.h))
    _, member, _ = boxes.profile(space.points[cov], -k_l, k_l)
    whole = member.all(axis=2)
    cert.add("uncovered Phi_[-L,L] segments", int(np.sum(~whole.any(axis=0))), 0,
             note=f"{len(cov)} samples, {2 * k_l + 1} times each")
    membership = np.zeros((len(boxes.branches), space.size), dtype=bool)
    membership[:, cov] = member[:, :, k_l]

    vidx = cov if verify_indices is None else np.asarray(verify_indices)
    for name, stats in zip(boxes.names, _verify_profiles(boxes, vidx)):
        prefix = f"box {name}: "
        cert.add(prefix + "injectivity: slice crossings", max(stats["crossings"] - 1, 0), 0)
        cert.add(prefix + "membership along [a_-, a_+] (misses)", stats["misses"], 0)
        cert.add(prefix + "exit on the margins (re-entries)", stats["reentries"], 0)
        cert.add(prefix + "exit-time equivariance", stats["drift"], 0.0, 1e-7)
        cert.add(prefix + "Lambda decreases at rate 1/8L", stats["equivariance"], 0.0, 1e-9)
        cert.add(prefix + "scanned length vs l_B", stats["scan"], 0.0, 2 * boxes.h)
    cert.provenance["box_samples"] = [int(s) for s in membership.sum(axis=1)]
    return WitnessCover(boxes, L, region, cert, membership)
