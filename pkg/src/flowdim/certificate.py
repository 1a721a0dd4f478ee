"""Pass/fail records for numerical checks."""

import json
import math
from dataclasses import dataclass, field


@dataclass
class Check:
    """One measured quantity compared against a bound: passes iff measured <= bound + tolerance."""

    name: str
    measured: float
    bound: float
    tolerance: float = 0.0
    parameter: object = None
    note: str = ""

    @property
    def passed(self):
        m = float(self.measured)
        return not math.isnan(m) and m <= self.bound + self.tolerance

    def to_dict(self):
        out = {
            "check": self.name,
            "measured": _num(self.measured),
            "bound": _num(self.bound),
            "tolerance": _num(self.tolerance),
            "pass": self.passed,
        }
        if self.parameter is not None:
            out["parameter"] = _num(self.parameter) if isinstance(self.parameter, (int, float)) else self.parameter
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class Certificate:
    title: str
    checks: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, name, measured, bound, tolerance=0.0, parameter=None, note=""):
        check = Check(name, float(measured), float(bound), float(tolerance), parameter, note)
        self.checks.append(check)
        return check

    def extend(self, other, prefix=""):
        for c in other.checks:
            self.checks.append(Check(prefix + c.name, c.measured, c.bound, c.tolerance, c.parameter, c.note))
        return self

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def get(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {
            "title": self.title,
            "pass": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "provenance": self.provenance,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def summary(self):
        lines = [f"{self.title}: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            flag = "ok " if c.passed else "BAD"
            lines.append(f"  [{flag}] {c.name}: {c.measured:.6g} <= {c.bound:.6g} + {c.tolerance:.3g}")
        return "\n".join(lines)


def _num(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x
