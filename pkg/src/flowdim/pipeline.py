"""Scenario files: parsing, validation, stage execution and report assembly.

A scenario declares one flow family, a default grid and a list of stages.
Stages name their dependencies with ``after`` (and implicitly with
``witness``); a stage whose dependency did not pass is skipped, every other
stage still runs.
"""

import copy
import csv
import hashlib
import json
import math
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .certificate import Certificate
from .crossprod import (
    ConvolutionElement,
    CoordinateTransversal,
    adjoint,
    convolve,
    random_element,
    stability_witness,
    tiling_projection,
    trace,
    transversal_projection,
)
from .errors import FlowdimError, UsageError
from .flows import ScalarField, circle_space, flow_lipschitz_constant, hull_space, smear, suspension_space, torus_space
from .rokhlin import (
    boxes_from_witness,
    certify_eigenframe,
    certify_towers,
    certify_witness,
    circle_witness,
    cover_witness,
    defect_budget,
    discrete_towers,
    eigenframe_from_witness,
    zero_witness,
)
from .tube import build_long_thin_cover, tube_dimension_certificate

SCENARIO_DIR = Path(__file__).parent / "scenarios"

# ---------------------------------------------------------------------------
# schema


def _positive(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 and math.isfinite(v)


def _number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _integer(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _positive_int(v):
    return _integer(v) and v > 0


def _fraction(v):
    return _number(v) and 0 < v < 1


def _bool(v):
    return isinstance(v, bool)


def _string(v):
    return isinstance(v, str) and v != ""


def _list_of(check):
    return lambda v: isinstance(v, list) and len(v) > 0 and all(check(x) for x in v)


def _vector(v):
    return isinstance(v, list) and len(v) >= 1 and all(_number(x) for x in v)


def _levels(v):
    return isinstance(v, list) and len(v) >= 2 and all(
        isinstance(x, dict) and set(x) == {"dx", "dt"} and _positive(x["dx"]) and _positive(x["dt"]) for x in v)


FLOW_FIELDS = {
    "torus": {"velocity": (_vector, True, "list of numbers")},
    "circle": {"period": (_positive, True, "positive number")},
    "suspension": {"rotation": (_fraction, True, "number in (0, 1)"),
                   "roof": (_positive, False, "positive number")},
    "hull": {"window_radius": (_positive, True, "positive number"),
             "pad": (_positive, False, "positive number")},
}

COMMON = {
    "id": (_string, True, "non-empty string"),
    "kind": (_string, True, "stage kind"),
    "after": (_list_of(_string), False, "list of stage ids"),
    "grid": (lambda v: isinstance(v, dict), False, "mapping with dx and/or dt"),
}

STAGE_FIELDS = {
    "cover": {"L": (_positive, True, "positive number"), "ramp": (_number, False, "number >= 0"),
              "verify_boxes": (_bool, False, "boolean"), "box_stride": (_positive_int, False, "positive integer")},
    "tube-dimension": {"d": (_integer, True, "integer"), "L": (_list_of(_positive), True, "list of positive numbers")},
    "smear": {"lambdas": (_list_of(_positive), True, "list of positive numbers"),
              "fields": (_positive_int, False, "positive integer"), "modes": (_positive_int, False, "positive integer"),
              "sample_stride": (_positive_int, False, "positive integer")},
    "witness": {"source": (lambda v: v in ("circle", "cover", "zero"), True, "one of circle, cover, zero"),
                "T": (_positive, False, "positive number"), "harmonic": (_integer, False, "nonzero integer"),
                "L": (_positive, False, "positive number"), "M": (_positive, False, "positive number"),
                "delta": (_positive, False, "positive number"),
                "budget_fraction": (_fraction, False, "number in (0, 1)"),
                "t_points": (_positive_int, False, "positive integer")},
    "eigenframe": {"witness": (_string, True, "stage id")},
    "towers": {"witness": (_string, True, "stage id"), "t": (_positive, True, "positive number"),
               "n": (_positive_int, True, "prime number"), "epsilon": (_positive, False, "positive number")},
    "boxes": {"witness": (_string, True, "stage id"), "L": (_positive, True, "positive number"),
              "coverage_stride": (_positive_int, False, "positive integer"),
              "verify_stride": (_positive_int, False, "positive integer")},
    "projection": {"r": (_positive, True, "positive number"), "levels": (_levels, True, "list of {dx, dt}, >= 2"),
                   "axis": (_integer, False, "integer"), "level": (_number, False, "number"),
                   "ratio_range": (lambda v: _vector(v) and len(v) == 2, False, "[low, high]")},
    "trace": {"pairs": (_positive_int, False, "positive integer"), "half_width": (_positive, False, "positive number")},
    "stability": {"harmonic": (_integer, True, "nonzero integer"), "epsilon": (_positive, True, "positive number"),
                  "kernel_width": (_positive, False, "positive number"),
                  "support": (_positive, False, "positive number")},
}


class _Lines:
    """Source line of every node, keyed by its path in the document."""

    def __init__(self, text):
        self.lines = {}
        try:
            node = yaml.compose(text)
        except yaml.YAMLError:
            node = None
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self._walk(v, path + (k.value,))
                self.lines[path + (k.value,)] = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def at(self, path):
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)


def _field_name(path):
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


@dataclass
class Stage:
    id: str
    kind: str
    params: dict
    after: list
    grid: dict


@dataclass
class Scenario:
    name: str
    seed: int
    flow: dict
    grid: dict
    stages: list
    source: str = ""
    path: str = ""
    description: str = ""

    @property
    def digest(self):
        return hashlib.sha256(self.source.encode()).hexdigest()

    def order(self):
        return list(TopologicalSorter({s.id: s.after for s in self.stages}).static_order())

    def stage(self, sid):
        return next(s for s in self.stages if s.id == sid)


def resolve_scenario(name_or_path):
    p = Path(name_or_path)
    if p.exists():
        return p
    shipped = SCENARIO_DIR / f"{name_or_path}.yaml"
    if shipped.exists():
        return shipped
    raise UsageError(f"scenario {name_or_path!r}: no such file or shipped scenario")


def shipped_scenarios():
    out = []
    for p in sorted(SCENARIO_DIR.glob("*.yaml")):
        data = yaml.safe_load(p.read_text()) or {}
        out.append((p.stem, str(data.get("description", "")).strip()))
    return out


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"{path}: cannot read scenario ({exc.strerror})") from exc
    return parse_scenario(text, str(path))


def parse_scenario(text, origin="<scenario>"):
    lines = _Lines(text)

    def fail(path, message):
        line = lines.at(path)
        where = f"{origin}:{line}" if line else origin
        raise UsageError(f"{where}: field '{_field_name(path)}': {message}")

    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{origin}:{mark.line + 1}" if mark else origin
        raise UsageError(f"{where}: not a valid scenario file ({getattr(exc, 'problem', exc)})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{origin}: scenario must be a mapping")

    allowed = {"name", "description", "seed", "flow", "grid", "stages"}
    for key in data:
        if key not in allowed:
            fail((key,), "unknown field")
    for key in ("name", "flow", "grid", "stages"):
        if key not in data:
            fail((key,), "missing")
    if not _string(data["name"]):
        fail(("name",), "expected a non-empty string")
    seed = data.get("seed", 0)
    if not _integer(seed) or not 0 <= seed < 2**64:
        fail(("seed",), "expected an unsigned 64-bit integer")

    flow = data["flow"]
    if not isinstance(flow, dict) or flow.get("family") not in FLOW_FIELDS:
        fail(("flow", "family"), f"expected one of {', '.join(FLOW_FIELDS)}")
    _check_fields(flow, FLOW_FIELDS[flow["family"]], ("flow",), fail, extra={"family"})

    grid = _check_grid(data["grid"], ("grid",), fail, require=True)
    stages_raw = data["stages"]
    if not isinstance(stages_raw, list) or not stages_raw:
        fail(("stages",), "expected a non-empty list")
    stages = []
    ids = set()
    for i, raw in enumerate(stages_raw):
        path = ("stages", i)
        if not isinstance(raw, dict):
            fail(path, "expected a mapping")
        kind = raw.get("kind")
        if kind not in STAGE_FIELDS:
            fail(path + ("kind",), f"expected one of {', '.join(STAGE_FIELDS)}")
        _check_fields(raw, {**COMMON, **STAGE_FIELDS[kind]}, path, fail)
        if raw["id"] in ids:
            fail(path + ("id",), f"duplicate stage id {raw['id']!r}")
        ids.add(raw["id"])
        stage_grid = _check_grid(raw.get("grid", {}), path + ("grid",), fail, require=False)
        after = list(raw.get("after", []))
        if "witness" in raw and raw["witness"] not in after:
            after.append(raw["witness"])
        params = {k: v for k, v in raw.items() if k not in COMMON}
        stages.append(Stage(raw["id"], kind, params, after, {**grid, **stage_grid}))
    for i, s in enumerate(stages):
        for dep in s.after:
            if dep not in ids:
                key = "witness" if s.params.get("witness") == dep else "after"
                fail(("stages", i, key), f"unknown stage id {dep!r}")
        if "witness" in s.params and stages[[t.id for t in stages].index(s.params["witness"])].kind != "witness":
            fail(("stages", i, "witness"), f"stage {s.params['witness']!r} is not a witness stage")
        _check_ranges(s, flow, ("stages", i), fail)
    scenario = Scenario(data["name"], seed, flow, grid, stages, text, origin, str(data.get("description", "")))
    try:
        scenario.order()
    except CycleError as exc:
        raise UsageError(f"{origin}: field 'stages': dependency cycle {' -> '.join(exc.args[1])}") from exc
    return scenario


def _check_fields(raw, schema, path, fail, extra=()):
    for key in raw:
        if key not in schema and key not in extra:
            fail(path + (key,), "unknown field")
    for key, (check, required, expected) in schema.items():
        if key not in raw:
            if required:
                fail(path + (key,), "missing")
            continue
        if not check(raw[key]):
            fail(path + (key,), f"expected {expected}, got {raw[key]!r}")


def _check_grid(raw, path, fail, require):
    if not isinstance(raw, dict):
        fail(path, "expected a mapping with dx and dt")
    for key in raw:
        if key not in ("dx", "dt"):
            fail(path + (key,), "unknown field")
    for key in ("dx", "dt"):
        if key in raw and not _positive(raw[key]):
            fail(path + (key,), f"expected a positive number, got {raw[key]!r}")
        if require and key not in raw:
            fail(path + (key,), "missing")
    return dict(raw)


def _check_ranges(stage, flow, path, fail):
    p, fam = stage.params, flow["family"]
    if stage.kind in ("cover", "tube-dimension") and fam == "circle":
        return  # rejected at run time with NotFree, which is the point of such a stage
    if stage.kind == "witness":
        src = p["source"]
        if src == "cover":
            for key in ("L", "M"):
                if key not in p:
                    fail(path + (key,), f"missing (required for source {src})")
            if ("delta" in p) == ("budget_fraction" in p):
                fail(path + ("delta",), "give exactly one of delta and budget_fraction")
        if src == "circle" and fam != "circle":
            fail(path + ("source",), "circle witnesses need the circle flow family")
        if p.get("harmonic", 1) == 0:
            fail(path + ("harmonic",), "must be nonzero")
    if stage.kind == "tube-dimension" and p["d"] < 0:
        fail(path + ("d",), "must be >= 0")
    if stage.kind == "cover" and p.get("ramp", 0) < 0:
        fail(path + ("ramp",), "must be >= 0")
    if stage.kind == "projection" and fam not in ("torus", "hull"):
        fail(path + ("kind",), "projections need the torus or hull family")
    if stage.kind == "stability" and fam != "circle":
        fail(path + ("kind",), "the stability stage uses a circle eigenframe")
    if stage.kind == "stability" and p["harmonic"] == 0:
        fail(path + ("harmonic",), "must be nonzero")


# ---------------------------------------------------------------------------
# execution


def make_space(flow, dx):
    fam = flow["family"]
    if fam == "torus":
        return torus_space(flow["velocity"], dx)
    if fam == "circle":
        return circle_space(flow["period"], dx)
    if fam == "suspension":
        roof = flow.get("roof")
        return suspension_space(flow["rotation"], dx, None if roof is None else (lambda u: roof + 0 * u))
    return hull_space(flow["window_radius"], dx, pad=flow.get("pad", 20.0))


@dataclass
class Context:
    scenario: Scenario
    stage: Stage
    index: int
    seed: int
    out: Path
    inputs: dict
    artifacts: list = field(default_factory=list)

    @property
    def rng(self):
        return np.random.default_rng([self.seed, self.index])

    def space(self, dx=None):
        return make_space(self.scenario.flow, self.stage.grid["dx"] if dx is None else dx)

    def write_csv(self, suffix, rows):
        if self.out is None:
            return
        name = f"{self.stage.id}-{suffix}.csv"
        with open(self.out / name, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(_csv_value(r) for r in rows)
        self.artifacts.append(name)


def _csv_value(row):
    return [repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row]


def _stage_cover(ctx):
    p = ctx.stage.params
    space = ctx.space()
    cover = build_long_thin_cover(space, p["L"], ramp=p.get("ramp", 0.0))
    stride = p.get("box_stride")
    cert = cover.certificate(verify_boxes=p.get("verify_boxes", True),
                             box_indices=None if stride is None else np.arange(0, space.size, stride))
    cert.provenance["dx"] = ctx.stage.grid["dx"]
    ctx.write_csv("members", cover.to_csv_rows())
    return [cert], cover


def _stage_tube_dimension(ctx):
    p = ctx.stage.params
    return [tube_dimension_certificate(ctx.space(), p["d"], p["L"])], None


def _random_trig_field(space, rng, modes):
    """Random trigonometric field with known amplitude and spatial Lipschitz bound."""
    span = np.asarray(space.grid.shape) * space.grid.spacing
    ks = [rng.integers(-modes, modes + 1, size=space.dim) for _ in range(modes + 1)]
    cs = [complex(rng.normal(), rng.normal()) for _ in ks]
    sup = sum(abs(c) for c in cs)
    lip = sum(abs(c) * 2 * math.pi * float(np.linalg.norm(k / span)) for c, k in zip(cs, ks))

    def fn(x):
        return sum(c * np.exp(2j * np.pi * (x / span) @ k) for c, k in zip(cs, ks)) / sup

    return ScalarField.from_function(space, fn), lip / sup


def _stage_smear(ctx):
    p = ctx.stage.params
    space = ctx.space()
    dt, dx = ctx.stage.grid["dt"], space.grid.max_spacing
    rng = ctx.rng
    stride = p.get("sample_stride", 1)
    idx = np.arange(0, space.size, stride)
    fields = [_random_trig_field(space, rng, p.get("modes", 3)) for _ in range(p.get("fields", 20))]
    cert = Certificate("smearing Lipschitz bound", provenance={"dt": dt, "dx": dx, "fields": len(fields),
                                                              "seed": ctx.seed, "sample_stride": stride})
    rows = [("lambda", "field", "measured", "bound")]
    for lam in p["lambdas"]:
        worst_ratio, worst = -math.inf, None
        for j, (f, lip) in enumerate(fields):
            # interpolated (not exact) field values off the grid, so Lip(f) enters via dx
            f = ScalarField(space, f.values)
            g = smear(f, lam, dt)
            measured = flow_lipschitz_constant(g, np.linspace(-0.1, 0.1, 5), indices=idx)
            bound = 2 * f.sup_norm() / (2 * lam) + 5 * (dt + dx * lip)
            rows.append((lam, j, measured, bound))
            if measured - bound > worst_ratio:
                worst_ratio, worst = measured - bound, (measured, bound)
        cert.add("smeared flow-Lipschitz constant", worst[0], worst[1], parameter=float(lam),
                 note="worst field at this lambda")
    ctx.write_csv("series", rows)
    return [cert], None


def _stage_witness(ctx):
    p = ctx.stage.params
    space = ctx.space()
    src = p["source"]
    T = p.get("T", 10.0 if src == "circle" else 1.0)
    extra = {}
    if src == "circle":
        w = circle_witness(space, horizon=T, harmonic=p.get("harmonic", 1))
    elif src == "zero":
        w = zero_witness(space, horizon=T)
    else:
        delta = p.get("delta")
        if delta is None:
            delta = p["budget_fraction"] * defect_budget(space.dim)
            extra["budget"] = defect_budget(space.dim)
        _, _, w = cover_witness(space, p["L"], p["M"], T, delta)
    cert = certify_witness(w, np.linspace(-T, T, p.get("t_points", 41)))
    cert.provenance.update(extra)
    cert.provenance["dx"] = ctx.stage.grid["dx"]
    ctx.write_csv("fields", w.to_csv_rows())
    return [cert], w


def _stage_eigenframe(ctx):
    w = ctx.inputs[ctx.stage.params["witness"]]
    return [certify_eigenframe(eigenframe_from_witness(w))], None


def _stage_towers(ctx):
    p = ctx.stage.params
    w = ctx.inputs[p["witness"]]
    towers = discrete_towers(w, p["t"], p["n"], p.get("epsilon", 0.1))
    return [certify_towers(towers)], towers


def _stage_boxes(ctx):
    p = ctx.stage.params
    w = ctx.inputs[p["witness"]]
    n = w.space.size
    cov = np.arange(0, n, p.get("coverage_stride", 1))
    ver = np.arange(0, n, p.get("verify_stride", 1))
    cover = boxes_from_witness(w, p["L"], coverage_indices=cov, verify_indices=ver)
    cover.certificate.provenance.update({"coverage_stride": p.get("coverage_stride", 1),
                                         "verify_stride": p.get("verify_stride", 1)})
    ctx.write_csv("members", cover.to_csv_rows())
    return [cover.certificate], cover


def _stage_projection(ctx):
    p = ctx.stage.params
    fam = ctx.scenario.flow["family"]
    lo, hi = p.get("ratio_range", [0.3, 0.7])
    cert = Certificate(f"projection convergence r={p['r']}", provenance={"family": fam, "levels": p["levels"]})
    rows = [("dx", "dt", "idempotent_l1", "idempotent_sup", "self_adjoint_l1", "self_adjoint_sup", "trace")]
    previous = None
    certs = [cert]
    for lev in p["levels"]:
        space = ctx.space(lev["dx"])
        if fam == "torus":
            section = CoordinateTransversal(space.flow, p.get("axis", 1), p.get("level", 0.0))
            proj = transversal_projection(space, section, p["r"], lev["dt"])
        else:
            proj = tiling_projection(space, p["r"], lev["dt"])
        res = proj.residuals
        rows.append((lev["dx"], lev["dt"], res["idempotent_l1"], res["idempotent_sup"], res["self_adjoint_l1"],
                     res["self_adjoint_sup"], res["trace"]))
        cert.add("residual ||p*p - p||_1", res["idempotent_l1"], math.inf, parameter=float(lev["dx"]))
        cert.add("residual ||p~ - p||_1", res["self_adjoint_l1"], math.inf, parameter=float(lev["dx"]))
        certs.append(proj.certificate)
        if previous is not None:
            ratio = res["idempotent_l1"] / previous
            cert.add("refinement ratio of ||p*p - p||_1 above the lower end", lo - ratio, 0.0,
                     parameter=float(lev["dx"]), note=f"ratio {ratio:.4g} >= {lo}")
            cert.add("refinement ratio of ||p*p - p||_1", ratio, hi, parameter=float(lev["dx"]))
        previous = res["idempotent_l1"]
    ctx.write_csv("convergence", rows)
    return certs, None


def _stage_trace(ctx):
    p = ctx.stage.params
    space = ctx.space()
    dt = ctx.stage.grid["dt"]
    rng = ctx.rng
    hw = p.get("half_width", 0.5)
    pairs = p.get("pairs", 50)
    cert = Certificate("trace and involution", provenance={"pairs": pairs, "dt": dt, "seed": ctx.seed})
    worst_gap, worst_pos = -math.inf, math.inf
    for _ in range(pairs):
        f = random_element(space, dt, hw * rng.uniform(0.4, 1.0), rng)
        g = random_element(space, dt, hw * rng.uniform(0.4, 1.0), rng)
        gap = abs(trace(convolve(f, g)) - trace(convolve(g, f))) / (10 * dt * f.l1_norm() * g.l1_norm())
        worst_gap = max(worst_gap, gap)
        worst_pos = min(worst_pos, trace(convolve(f, adjoint(f))).real)
    cert.add("|zeta(f*g) - zeta(g*f)| / (10 dt ||f||_1 ||g||_1)", worst_gap, 1.0)
    cert.add("-zeta(f*f~)", -worst_pos, 1e-9)
    return [cert], None


def _stage_stability(ctx):
    p = ctx.stage.params
    space = ctx.space()
    dt = ctx.stage.grid["dt"]
    rng = ctx.rng
    support = p.get("support", 1.0)
    N = int(round(support / dt))
    t = (np.arange(2 * N + 1) - N) * dt
    bump = np.cos(0.5 * np.pi * t / support) ** 2
    theta = space.points[:, 0] / space.flow.period
    field_values = sum(complex(rng.normal(), rng.normal()) * np.exp(2j * np.pi * n * theta) for n in (-1, 0, 1))
    f = ConvolutionElement(space, dt, bump[:, None] * field_values[None, :])
    f = f.scale(1 / math.sqrt(convolve(f, adjoint(f)).l1_norm()))
    frame = circle_witness(space, harmonic=p["harmonic"])
    _, cert = stability_witness(f, frame, p["epsilon"], kernel_width=p.get("kernel_width"))
    cert.provenance["seed"] = ctx.seed
    return [cert], None


RUNNERS = {
    "cover": _stage_cover,
    "tube-dimension": _stage_tube_dimension,
    "smear": _stage_smear,
    "witness": _stage_witness,
    "eigenframe": _stage_eigenframe,
    "towers": _stage_towers,
    "boxes": _stage_boxes,
    "projection": _stage_projection,
    "trace": _stage_trace,
    "stability": _stage_stability,
}


@dataclass
class StageResult:
    stage: Stage
    status: str
    certificates: list
    output: object = None
    error: str = ""
    artifacts: list = field(default_factory=list)
    seconds: float = 0.0

    def to_dict(self):
        out = {"id": self.stage.id, "kind": self.stage.kind, "status": self.status,
               "after": list(self.stage.after), "grid": self.stage.grid,
               "certificates": [_jsonable(c.to_dict()) for c in self.certificates],
               "artifacts": list(self.artifacts)}
        if self.error:
            out["error"] = self.error
        return out


def _run_stage(scenario, stage, index, seed, out, inputs):
    ctx = Context(scenario, stage, index, seed, out, inputs)
    start = time.perf_counter()
    try:
        certs, output = RUNNERS[stage.kind](ctx)
        status = "pass" if all(c.passed for c in certs) else "fail"
        res = StageResult(stage, status, certs, output, artifacts=ctx.artifacts)
    except FlowdimError as exc:
        res = StageResult(stage, "error", [], error=f"{type(exc).__name__}: {exc}", artifacts=ctx.artifacts)
    res.seconds = time.perf_counter() - start
    return res


def run_scenario(scenario, out=None, threads=1, seed=None, log=None):
    """Execute every stage; independent stages run concurrently on ``threads`` workers."""
    seed = scenario.seed if seed is None else int(seed)
    out = None if out is None else Path(out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    index = {s.id: i for i, s in enumerate(scenario.stages)}
    sorter = TopologicalSorter({s.id: s.after for s in scenario.stages})
    sorter.prepare()
    results = {}

    def launch(sid):
        stage = scenario.stage(sid)
        blocked = [d for d in stage.after if results[d].status != "pass"]
        if blocked:
            return StageResult(stage, "skipped", [], error=f"dependency did not pass: {', '.join(blocked)}")
        # dependents may run concurrently and certification records defects on
        # the witness, so every consumer gets its own shallow copy
        inputs = {d: _private_copy(results[d].output) for d in stage.after}
        return _run_stage(scenario, stage, index[sid], seed, out, inputs)

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        pending = {}
        while sorter.is_active():
            for sid in sorter.get_ready():
                pending[pool.submit(launch, sid)] = sid
            done = next(iter(wait(pending, return_when=FIRST_COMPLETED).done))
            sid = pending.pop(done)
            results[sid] = done.result()
            if log:
                r = results[sid]
                log(f"[{r.status:>7}] {sid} ({r.stage.kind}) {r.seconds:.2f}s {r.error}".rstrip())
            sorter.done(sid)
    ordered = [results[s.id] for s in scenario.stages]
    report = build_report(scenario, ordered, seed)
    if out is not None:
        (out / "report.json").write_text(dump_report(report), encoding="utf-8")
        timings = {r.stage.id: round(r.seconds, 3) for r in ordered}
        (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n", encoding="utf-8")
    return report, ordered


def _private_copy(obj):
    if obj is None:
        return None
    dup = copy.copy(obj)
    if isinstance(getattr(dup, "defects", None), dict):
        dup.defects = dict(dup.defects)
    return dup


def build_report(scenario, results, seed):
    checks = [c for r in results for cert in r.certificates for c in cert.checks]
    worst = {}
    for r in results:
        bad = [c for cert in r.certificates for c in cert.checks]
        if bad:
            c = max(bad, key=lambda c: _slack(c))
            worst[r.stage.id] = {"check": c.name, "measured": _num(c.measured), "bound": _num(c.bound)}
    status = {k: sum(r.status == k for r in results) for k in ("pass", "fail", "error", "skipped")}
    return {
        "scenario": scenario.name,
        "pass": all(r.status == "pass" for r in results),
        "summary": {"stages": len(results), **status, "checks": len(checks),
                    "checks_passed": sum(c.passed for c in checks), "worst_checks": worst},
        "provenance": {"scenario_sha256": scenario.digest, "seed": seed, "flow": scenario.flow,
                       "grid": scenario.grid, "flowdim": __version__},
        "stages": [r.to_dict() for r in results],
    }


def _slack(check):
    m, b = float(check.measured), float(check.bound) + float(check.tolerance)
    if math.isnan(m):
        return math.inf
    if math.isinf(b):
        return -math.inf
    return (m - b) / max(abs(b), 1e-300) if b != 0 else m


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, complex):
        return [_num(obj.real), _num(obj.imag)]
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dump_report(report):
    return json.dumps(_jsonable(report), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def plot_series(report, check_name):
    """(parameter, measured, bound) rows of every check with the given name."""
    rows = [("parameter", "measured", "bound")]
    all_checks = [c for st in report.get("stages", []) for cert in st.get("certificates", [])
                  for c in cert.get("checks", [])]
    if not all_checks:
        return rows
    hits = [c for c in all_checks if c.get("check") == check_name]
    if not hits:
        raise UsageError(f"no check named {check_name!r} in the report")
    for c in hits:
        rows.append((c.get("parameter", ""), c["measured"], c["bound"]))
    return rows
