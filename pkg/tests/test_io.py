import json
import math
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from homoflow import core, flow, io
from homoflow.errors import ConfigError, DomainError
from homoflow.initial import InitialProfile

ROOT = os.path.dirname(os.path.dirname(__file__))
REF_INI = os.path.join(ROOT, "configs", "reference.ini")
SVG = "{http://www.w3.org/2000/svg}"

MINIMAL = """schema = 1
[model]
m = 1.2
chi = 0.1
n = 5
[initial]
kind = tanh
[time]
t_max = 2
dt_schedule = inf:0.1
"""


def test_reference_config():
    spec = io.read_run_spec(REF_INI)
    assert spec.params == core.ModelParams(1.2, 1.45, 0.0, 200)
    assert spec.initial.kind == "tanh" and spec.initial.option("amplitude") == 4.0
    assert spec.dt_schedule == ((4.0, 0.05), (math.inf, 0.5))
    assert spec.chi_convention == "mass"
    assert spec.newton == flow.NewtonOptions() and spec.stop == flow.StopOptions()


def test_defaults_filled():
    spec = io.parse_run_spec(MINIMAL)
    assert spec.params.alpha == 0.0 and spec.record_every == 1 and spec.dt_growth == 1.3
    assert spec.chi_convention == "discrete"


@pytest.mark.parametrize("edit,key,line", [
    (("chi = 0.1\n", ""), "chi", None),
    (("dt_schedule = inf:0.1", "dt_schedule = inf:-1"), "dt_schedule", 10),
    (("n = 5\n", "n = 5\nfoo = 1\n"), "foo", 6),
    (("m = 1.2", "m = abc"), "m", 3),
    (("kind = tanh", "kind = sawtooth"), "kind", 7),
    (("schema = 1", "schema = 2"), "schema", 1),
    (("t_max = 2", "t_max = nan"), "t_max", 9),
])
def test_validation_errors(edit, key, line):
    with pytest.raises(ConfigError) as info:
        io.parse_run_spec(MINIMAL.replace(*edit))
    assert info.value.key == key
    assert key in str(info.value)
    if line is not None:
        assert info.value.line == line and info.value.column is not None


def test_parse_errors_have_location():
    with pytest.raises(ConfigError) as info:
        io.parse_run_spec(MINIMAL + "this line is garbage\n")
    assert info.value.line == 11 and info.value.column == 1
    with pytest.raises(ConfigError) as info:
        io.parse_run_spec(MINIMAL + "[model]\n")
    assert info.value.line == 11
    with pytest.raises(ConfigError):
        io.parse_run_spec(MINIMAL + "[bogus]\nx = 1\n")


def test_log_config():
    spec = io.parse_run_spec(MINIMAL.replace("m = 1.2", "m = 1").replace("n = 5", "n = 5\npairs = unordered"))
    assert spec.params == flow.LogParams(0.1, 5, "unordered")
    with pytest.raises(ConfigError):
        io.parse_run_spec(MINIMAL.replace("n = 5", "n = 5\npairs = unordered"))


finite = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False)


@st.composite
def run_specs(draw):
    n = draw(st.integers(2, 12))
    if draw(st.booleans()):
        params = flow.LogParams(draw(finite), n, draw(st.sampled_from(["ordered", "unordered"])))
        conv = "discrete"
    else:
        params = core.ModelParams(draw(st.floats(1.0001, 5.0)), draw(finite), draw(st.floats(-3, 3)), n)
        conv = draw(st.sampled_from(["discrete", "mass"]))
    kind = draw(st.sampled_from(sorted(["tanh", "uniform", "two_blocks", "explicit"])))
    if kind == "explicit":
        opts = {"positions": list(np.cumsum(draw(st.lists(finite, min_size=n, max_size=n))))}
    elif kind == "tanh":
        opts = {"amplitude": draw(finite), "steepness": draw(finite)}
    elif kind == "uniform":
        opts = {"half_width": draw(finite)}
    else:
        opts = {}
    try:
        initial = InitialProfile(kind, n, opts)
    except DomainError:
        assume(False)
    bounds = sorted(set(draw(st.lists(finite, min_size=0, max_size=3))))
    sched = tuple((b, draw(finite)) for b in bounds) + ((math.inf, draw(finite)),)
    return flow.RunSpec(
        params, initial, sched, draw(finite),
        flow.NewtonOptions(draw(st.integers(1, 100)), draw(finite), draw(st.booleans())),
        flow.StopOptions(draw(st.one_of(st.none(), finite)), draw(finite)),
        draw(st.integers(1, 50)), draw(st.floats(1.0, 3.0)), conv,
    )


@settings(max_examples=100, deadline=None)
@given(run_specs())
def test_config_round_trip(spec):
    assert io.parse_run_spec(io.render_run_spec(spec)) == spec


def small_result():
    p = core.ModelParams(1.2, 1.0, 0.0, 4)
    init = InitialProfile("explicit", 4, {"positions": [-1.5, -0.5, 0.4, 1.6]})
    return flow.simulate(flow.RunSpec(p, init, t_max=100.0))


def test_csv_files(tmp_path):
    res = small_result()
    d, s = tmp_path / "d.csv", tmp_path / "s.csv"
    io.write_trajectory_csv(res, d, s)
    raw = d.read_bytes()
    assert raw.startswith(b"t,dt,F,U,W,f2,fmp1,min_gap,H,newton_iters\n") and b"\r" not in raw
    assert s.read_text().splitlines()[0] == "t,x1,x2,x3,x4"
    back = io.read_snapshots_csv(s)
    assert len(back) == len(res.snapshots)
    for (t0, x0), (t1, x1) in zip(res.snapshots, back):
        assert t0 == t1 and np.array_equal(x0, x1)
    assert io.read_diagnostics_csv(d) == res.rows
    f = [r.F for r in res.rows]
    assert len(f) >= 2 and all(b <= a for a, b in zip(f, f[1:]))


def test_empty_trajectory(tmp_path):
    res = flow.SimulationResult([], [], flow.Completed(1.0), core.ModelParams(1.2, 0.1, 0.0, 3))
    io.write_trajectory_csv(res, tmp_path / "d.csv", tmp_path / "s.csv")
    assert (tmp_path / "d.csv").read_text() == ",".join(io.DIAGNOSTICS_HEADER) + "\n"
    assert (tmp_path / "s.csv").read_text() == "t,x1,x2,x3\n"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=2, max_size=6))
def test_csv_float_round_trip(vals):
    x = np.array(vals)
    res = flow.SimulationResult([], [(0.1, x)], None)
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        s = os.path.join(tmp, "s.csv")
        io.write_trajectory_csv(res, os.path.join(tmp, "d.csv"), s)
        assert np.array_equal(io.read_snapshots_csv(s)[0][1], x)


def test_filesystem_errors(tmp_path):
    res = small_result()
    with pytest.raises(OSError):
        io.write_trajectory_csv(res, tmp_path / "missing" / "d.csv", tmp_path / "s.csv")
    with pytest.raises(OSError):
        io.render_svg(res, io.PlotSpec("worldlines"), tmp_path / "missing" / "w.svg")


def test_summary(tmp_path):
    res = small_result()
    io.write_summary_json(res, tmp_path / "s.json", c_n=0.27, blowup_sets={"relative": []})
    d = json.loads((tmp_path / "s.json").read_text())
    assert d["termination"]["type"] == "blowup"
    assert d["termination"]["t_estimate"] == res.maximal_time_estimate
    assert d["extrema"]["t_energy_sign_change"] == 0.0  # negative from the start
    assert d["c_n"] == 0.27 and d["blowup_sets"] == {"relative": []}
    p = core.ModelParams(1.2, 0.01, 0.0, 4)
    done = flow.simulate(flow.RunSpec(p, InitialProfile("tanh", 4), t_max=1.0))
    d = io.summary_dict(done)
    assert d["termination"]["type"] == "completed" and d["termination"]["t_estimate"] == "inf"
    assert d["extrema"]["t_energy_sign_change"] is None
    assert io.energy_sign_change_time([0.0, 1.0, 2.0], [1.0, 0.5, -0.5]) == pytest.approx(1.5)


def polylines(svg_text):
    root = ET.fromstring(svg_text.split("\n", 1)[1])
    assert root.tag == SVG + "svg" and root.get("version") == "1.1"
    return [[tuple(map(float, p.split(","))) for p in el.get("points").split()] for el in root.iter(SVG + "polyline")]


def test_svg_two_points(tmp_path):
    rows = [flow.DiagnosticsRow(0.0, 0.0, 2.0, 1, 1, 1, 1, 1, 0, 0), flow.DiagnosticsRow(1.0, 1.0, 1.0, 1, 1, 1, 1, 1, 0, 0)]
    res = flow.SimulationResult(rows, [], None)
    for kind in ("energy_vs_t", "moment_vs_t"):
        lines = polylines(io.render_svg(res, io.PlotSpec(kind), tmp_path / "p.svg"))
        assert len(lines) == 1 and len(lines[0]) == 2
    ET.parse(tmp_path / "p.svg")


def test_svg_kinds(tmp_path):
    res = small_result()
    text = io.render_svg(res, io.PlotSpec("energy_vs_t"), tmp_path / "e.svg")
    (line,) = polylines(text)
    ys = [p[1] for p in line]
    assert all(b >= a - 1e-9 for a, b in zip(ys, ys[1:]))  # SVG y grows downwards
    lines = polylines(io.render_svg(res, io.PlotSpec("worldlines"), tmp_path / "w.svg"))
    assert len(lines) == 4 and all(len(l) == len(res.snapshots) for l in lines)
    lines = polylines(io.render_svg(res, io.PlotSpec("rescaled_worldlines"), tmp_path / "r.svg", set_range=(0, 1)))
    assert len(lines) == 4
    text = io.render_svg(res, io.PlotSpec("density_hist", t_range=(0.0, 0.05)), tmp_path / "h.svg")
    root = ET.fromstring(text.split("\n", 1)[1])
    assert len([r for r in root.iter(SVG + "rect")]) == 1 + 3
    for name in ("e", "w", "r", "h"):
        ET.parse(tmp_path / f"{name}.svg")


def test_svg_errors(tmp_path):
    empty = flow.SimulationResult([], [], None)
    for kind in io.PLOT_KINDS:
        with pytest.raises(DomainError):
            io.render_svg(empty, io.PlotSpec(kind), tmp_path / "x.svg")
    with pytest.raises(DomainError):
        io.PlotSpec("pie")
    with pytest.raises(DomainError):
        io.PlotSpec("worldlines", width=0)


def test_nice_ticks():
    assert io.nice_ticks(0.0, 1.0) == pytest.approx([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    assert io.nice_ticks(-3.0, 7.0) == pytest.approx([-2, 0, 2, 4, 6])
