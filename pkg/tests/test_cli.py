import csv
import io
import json

import pytest
from click.testing import CliRunner

from flowdim.cli import main
from flowdim.errors import UsageError
from flowdim.pipeline import parse_scenario, plot_series

SMALL = """\
name: small
seed: 3
flow:
  family: torus
  velocity: [1.0, 1.4142135623730951]
grid:
  dx: 0.0625
  dt: 0.05
stages:
  - id: cover
    kind: cover
    L: 1.0
  - id: smear
    kind: smear
    lambdas: [0.5, 1.0, 2.0]
    fields: 3
    sample_stride: 3
  - id: projection
    kind: projection
    r: 0.1
    # the coarsest level is pre-asymptotic
    ratio_range: [0.2, 0.8]
    levels:
      - {dx: 0.0625, dt: 0.05}
      - {dx: 0.03125, dt: 0.025}
      - {dx: 0.015625, dt: 0.0125}
"""

BROKEN_DEPENDENCY = """\
name: partial
flow: {family: circle, period: 1.0}
grid: {dx: 0.0078125, dt: 0.0078125}
stages:
  - id: zero
    kind: witness
    source: zero
  - id: frame
    kind: eigenframe
    witness: zero
  - id: exact
    kind: witness
    source: circle
"""


@pytest.fixture()
def runner():
    return CliRunner()


def _write(tmp_path, text, name="scenario.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_list_and_validate_shipped(runner):
    res = runner.invoke(main, ["list-scenarios"])
    assert res.exit_code == 0
    names = [line.split("\t")[0] for line in res.output.splitlines()]
    assert {"circle-exact", "torus-golden", "fibonacci-hull"} <= set(names)
    for name in names:
        assert runner.invoke(main, ["validate", "--scenario", name]).exit_code == 0


def test_run_circle_exact(runner, tmp_path):
    out = tmp_path / "out"
    res = runner.invoke(main, ["run", "--scenario", "circle-exact", "--out", str(out)])
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert report["pass"] and report["summary"]["fail"] == 0
    assert report["provenance"]["seed"] == 20261015
    assert len(report["provenance"]["scenario_sha256"]) == 64
    assert (out / "witness-fields.csv").read_text().startswith("sample,")


def test_run_is_deterministic_across_threads_and_seeds(runner, tmp_path, monkeypatch):
    path = _write(tmp_path, SMALL)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert runner.invoke(main, ["run", "--scenario", path, "--out", str(a)]).exit_code == 0
    monkeypatch.setenv("FLOWDIM_THREADS", "3")
    assert runner.invoke(main, ["run", "--scenario", path, "--out", str(b)]).exit_code == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert runner.invoke(main, ["run", "--scenario", path, "--out", str(c), "--seed", "99"]).exit_code == 0
    assert json.loads((c / "report.json").read_text())["provenance"]["seed"] == 99
    assert (a / "report.json").read_bytes() != (c / "report.json").read_bytes()


def test_failed_stage_skips_only_dependents(runner, tmp_path):
    out = tmp_path / "out"
    res = runner.invoke(main, ["run", "--scenario", _write(tmp_path, BROKEN_DEPENDENCY), "--out", str(out)])
    assert res.exit_code == 1
    status = {s["id"]: s["status"] for s in json.loads((out / "report.json").read_text())["stages"]}
    assert status == {"zero": "fail", "frame": "skipped", "exact": "pass"}


@pytest.mark.parametrize("text, field", [
    ("name: x\nflow: {family: torus, velocity: [1, 2]}\ngrid: {dx: 0.1}\nstages: [{id: a, kind: cover, L: 1}]\n",
     "grid.dt"),
    ("name: x\nflow: {family: torus, velocity: [1, 2]}\ngrid: {dx: 0.1, dt: 0.1}\nstages:\n"
     "  - id: a\n    kind: cover\n    L: -1\n", "stages[0].L"),
    ("name: x\nflow: {family: moebius}\ngrid: {dx: 0.1, dt: 0.1}\nstages: [{id: a, kind: cover, L: 1}]\n",
     "flow.family"),
    ("name: x\nflow: {family: circle, period: 1}\ngrid: {dx: 0.1, dt: 0.1}\nstages:\n"
     "  - {id: a, kind: eigenframe, witness: nowhere}\n", "stages[0].witness"),
    ("name: x\nflow: {family: circle, period: 1}\ngrid: {dx: 0.1, dt: 0.1}\nstages:\n"
     "  - {id: a, kind: witness, source: circle, Tee: 3}\n", "stages[0].Tee"),
])
def test_malformed_scenarios_name_the_field(runner, tmp_path, text, field):
    res = runner.invoke(main, ["validate", "--scenario", _write(tmp_path, text)])
    assert res.exit_code == 2
    assert f"field '{field}'" in res.output


def test_parse_errors_carry_line_numbers():
    text = "name: x\nflow: {family: circle, period: 1}\ngrid: {dx: 0.1, dt: 0.1}\nstages:\n  - id: a\n    kind: nope\n"
    with pytest.raises(UsageError, match=r"<s>:6: field 'stages\[0\]\.kind'"):
        parse_scenario(text, "<s>")
    with pytest.raises(UsageError, match=r"<s>:2: not a valid scenario"):
        parse_scenario("name: x\n\tflow: 1\n", "<s>")


def test_dependency_cycle_is_rejected():
    text = ("name: x\nflow: {family: circle, period: 1}\ngrid: {dx: 0.1, dt: 0.1}\nstages:\n"
            "  - {id: a, kind: trace, after: [b]}\n  - {id: b, kind: trace, after: [a]}\n")
    with pytest.raises(UsageError, match="cycle"):
        parse_scenario(text)


def test_plotdata_series(runner, tmp_path):
    out = tmp_path / "out"
    assert runner.invoke(main, ["run", "--scenario", _write(tmp_path, SMALL), "--out", str(out)]).exit_code == 0
    report = str(out / "report.json")
    res = runner.invoke(main, ["plotdata", "--report", report, "--check", "residual ||p*p - p||_1"])
    assert res.exit_code == 0
    rows = list(csv.reader(io.StringIO(res.output)))
    assert rows[0] == ["parameter", "measured", "bound"]
    residuals = [float(r[1]) for r in rows[1:]]
    assert len(residuals) == 3 and residuals[0] > residuals[1] > residuals[2]
    res = runner.invoke(main, ["plotdata", "--report", report, "--check", "smeared flow-Lipschitz constant"])
    for lam, measured, bound in list(csv.reader(io.StringIO(res.output)))[1:]:
        assert float(measured) <= float(bound)
    res = runner.invoke(main, ["plotdata", "--report", report, "--check", "no such check"])
    assert res.exit_code == 2 and "no such check" in res.output


def test_plotdata_empty_report(runner, tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"stages": []}))
    res = runner.invoke(main, ["plotdata", "--report", str(empty), "--check", "anything"])
    assert res.exit_code == 0
    assert res.output.strip() == "parameter,measured,bound"
    assert plot_series({}, "x") == [("parameter", "measured", "bound")]


def test_bad_thread_environment(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("FLOWDIM_THREADS", "lots")
    res = runner.invoke(main, ["run", "--scenario", _write(tmp_path, BROKEN_DEPENDENCY), "--out", str(tmp_path)])
    assert res.exit_code == 2
