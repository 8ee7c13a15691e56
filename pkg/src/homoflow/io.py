"""Run configuration files, trajectory CSV, JSON summaries and SVG plots.

Configuration documents are flat INI-style files (one ``[section]`` per group)::

    schema = 1

    [model]
    m = 1.2
    chi = 1.45
    alpha = 0
    n = 200
    chi_convention = mass     ; discrete | mass
    pairs = ordered            ; m = 1 only: ordered | unordered

    [initial]
    kind = tanh                ; tanh | uniform | two_blocks | explicit
    amplitude = 4
    steepness = 10
    center_p = 0.5

    [time]
    t_max = 1000
    dt_schedule = 4.0:0.05, inf:0.5
    dt_growth = 1.3

    [newton]
    max_iters = 50
    tol = 1e-10
    damping = true

    [stop]
    gap_min = auto
    dt_min = 1e-10

    [output]
    record_every = 1

``m = 1`` selects the logarithmic functional.
"""

import configparser
import csv
import json
import math
import os
import re
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from . import core
from .errors import ConfigError, DomainError
from .flow import (BlowUp, Completed, DiagnosticsRow, Failure, LogParams, NewtonOptions, RunSpec,
                   SimulationResult, StopOptions)
from .initial import KINDS, InitialProfile

SCHEMA_VERSION = 1
DIAGNOSTICS_HEADER = ["t", "dt", "F", "U", "W", "f2", "fmp1", "min_gap", "H", "newton_iters"]

_TOP = "__top__"
_SCHEMA = {
    _TOP: {"schema"},
    "model": {"m", "chi", "alpha", "n", "chi_convention", "pairs"},
    "initial": {"kind", "amplitude", "steepness", "center_p", "half_width", "separation",
                "block_width", "positions"},
    "time": {"t_max", "dt_schedule", "dt_growth"},
    "newton": {"max_iters", "tol", "damping"},
    "stop": {"gap_min", "dt_min"},
    "output": {"record_every"},
}
_REQUIRED = {"model": {"m", "chi", "n"}, "initial": {"kind"}, "time": {"t_max", "dt_schedule"}}


class _Doc:
    """Parsed config plus a map from (section, key) to source line and column."""

    def __init__(self, text):
        self.text = text
        self.cp = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=(";", "#"), default_section="__defaults__"
        )
        self.cp.optionxform = str
        try:
            self.cp.read_string(f"[{_TOP}]\n" + text)
        except configparser.DuplicateSectionError as exc:
            raise ConfigError(f"duplicate section [{exc.section}]", line=_shift(exc.lineno)) from None
        except configparser.DuplicateOptionError as exc:
            raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", key=exc.option,
                              line=_shift(exc.lineno)) from None
        except configparser.ParsingError as exc:
            lineno = _shift(exc.errors[0][0])
            src = text.splitlines()[lineno - 1].strip() if lineno <= len(text.splitlines()) else ""
            raise ConfigError(f"cannot parse {src!r}", line=lineno, column=1) from None
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        self.locations = {}
        section = _TOP
        for i, raw in enumerate(text.splitlines(), start=1):
            m = re.match(r"\s*\[([^\]]+)\]", raw)
            if m:
                section = m.group(1).strip()
                continue
            m = re.match(r"\s*([^=:;#\s][^=:]*?)\s*[=:]\s*", raw)
            if m:
                self.locations[(section, m.group(1).strip())] = (i, m.end() + 1)

    def error(self, msg, section, key):
        line, col = self.locations.get((section, key), (None, None))
        return ConfigError(f"[{section}] {key}: {msg}" if section != _TOP else f"{key}: {msg}",
                           key=key, line=line, column=col)

    def get(self, section, key, conv, default=None):
        if not self.cp.has_option(section, key):
            if default is _MISSING:
                raise ConfigError(f"missing required key {key!r} in [{section}]", key=key)
            return default
        raw = self.cp.get(section, key).strip()
        try:
            return conv(raw)
        except (ValueError, DomainError) as exc:
            raise self.error(f"invalid value {raw!r} ({exc})", section, key) from None


_MISSING = object()


def _shift(lineno):
    return None if lineno is None else max(1, lineno - 1)


def _float(s):
    v = float(s)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError("expected an integer")
    return int(v)


def _bool(s):
    low = s.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected true or false")


def _schedule(s):
    out = []
    for item in s.split(","):
        if not item.strip():
            continue
        t_until, dt = item.split(":")
        out.append((_float(t_until), _float(dt)))
    if not out:
        raise ValueError("empty schedule")
    return tuple(out)


def _float_list(s):
    return tuple(_float(v) for v in re.split(r"[,\s]+", s.strip()) if v)


def parse_run_spec(text):
    """Parse and validate a configuration document into a RunSpec."""
    doc = _Doc(text)
    for section in doc.cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in doc.cp.options(section):
            if key not in _SCHEMA[section]:
                raise doc.error("unknown key", section, key)
    for section, keys in _REQUIRED.items():
        for key in keys:
            if not doc.cp.has_option(section, key):
                raise ConfigError(f"missing required key {key!r} in [{section}]", key=key)

    schema = doc.get(_TOP, "schema", _int, SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise doc.error(f"unsupported schema version (expected {SCHEMA_VERSION})", _TOP, "schema")

    m = doc.get("model", "m", _float)
    chi = doc.get("model", "chi", _float)
    alpha = doc.get("model", "alpha", _float, 0.0)
    n = doc.get("model", "n", _int)
    convention = doc.get("model", "chi_convention", str, "discrete")
    pairs = doc.get("model", "pairs", str, None)
    try:
        if m == 1.0:
            if alpha != 0.0:
                raise doc.error("alpha must be 0 for the logarithmic functional", "model", "alpha")
            params = LogParams(chi, n, pairs or "ordered")
        else:
            if pairs is not None:
                raise doc.error("pairs applies to m = 1 only", "model", "pairs")
            params = core.ModelParams(m, chi, alpha, n)
    except DomainError as exc:
        key = next((k for k in ("m", "chi", "n", "pairs") if k in str(exc).split()[0:2]), "m")
        raise doc.error(str(exc), "model", key) from None

    kind = doc.get("initial", "kind", str)
    if kind not in KINDS:
        raise doc.error(f"unknown kind (choose from {sorted(KINDS)})", "initial", "kind")
    options = {}
    for key in doc.cp.options("initial"):
        if key == "kind":
            continue
        if key not in KINDS[kind]:
            raise doc.error(f"not an option of kind {kind!r}", "initial", key)
        options[key] = doc.get("initial", key, _float_list if key == "positions" else _float)
    try:
        initial = InitialProfile(kind, n, options)
        initial.positions()
    except DomainError as exc:
        raise doc.error(str(exc), "initial", "kind") from None

    newton = NewtonOptions(
        max_iters=doc.get("newton", "max_iters", _int, NewtonOptions.max_iters),
        tol=doc.get("newton", "tol", _float, NewtonOptions.tol),
        damping=doc.get("newton", "damping", _bool, NewtonOptions.damping),
    )
    if newton.max_iters < 1:
        raise doc.error("must be >= 1", "newton", "max_iters")
    if not newton.tol > 0:
        raise doc.error("must be positive", "newton", "tol")
    gap_min = doc.get("stop", "gap_min", lambda s: None if s == "auto" else _float(s), None)
    stop = StopOptions(gap_min, doc.get("stop", "dt_min", _float, StopOptions.dt_min))

    fields = dict(
        params=params,
        initial=initial,
        dt_schedule=doc.get("time", "dt_schedule", _schedule),
        t_max=doc.get("time", "t_max", _float),
        newton=newton,
        stop=stop,
        record_every=doc.get("output", "record_every", _int, 1),
        dt_growth=doc.get("time", "dt_growth", _float, 1.3),
        chi_convention=convention,
    )
    checks = [
        ("time", "dt_schedule", lambda: all(dt > 0 for _, dt in fields["dt_schedule"]), "dt values must be positive"),
        ("time", "dt_schedule", lambda: all(a[0] < b[0] for a, b in zip(fields["dt_schedule"], fields["dt_schedule"][1:])),
         "t_until values must be strictly increasing"),
        ("time", "t_max", lambda: fields["t_max"] > 0, "must be positive"),
        ("time", "dt_growth", lambda: fields["dt_growth"] >= 1, "must be >= 1"),
        ("stop", "gap_min", lambda: gap_min is None or gap_min > 0, "must be positive"),
        ("stop", "dt_min", lambda: stop.dt_min > 0, "must be positive"),
        ("output", "record_every", lambda: fields["record_every"] >= 1, "must be >= 1"),
        ("model", "chi_convention", lambda: convention in ("discrete", "mass"), "must be discrete or mass"),
    ]
    for section, key, ok, msg in checks:
        if not ok():
            raise doc.error(msg, section, key)
    try:
        return RunSpec(**fields)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def read_run_spec(path):
    with open(path, encoding="utf-8") as fh:
        return parse_run_spec(fh.read())


def _fmt(v):
    return repr(float(v))


def render_run_spec(spec):
    """Inverse of parse_run_spec."""
    p = spec.params
    lines = [f"schema = {SCHEMA_VERSION}", "", "[model]"]
    if isinstance(p, LogParams):
        lines += ["m = 1.0", f"chi = {_fmt(p.chi)}", "alpha = 0.0", f"n = {p.n}", f"pairs = {p.pairs}"]
    else:
        lines += [f"m = {_fmt(p.m)}", f"chi = {_fmt(p.chi)}", f"alpha = {_fmt(p.alpha)}", f"n = {p.n}"]
    lines += [f"chi_convention = {spec.chi_convention}", "", "[initial]", f"kind = {spec.initial.kind}"]
    for key, val in sorted(spec.initial.options.items()):
        if key == "positions":
            lines.append("positions = " + ", ".join(_fmt(v) for v in val))
        else:
            lines.append(f"{key} = {_fmt(val)}")
    sched = ", ".join(f"{_fmt(a)}:{_fmt(b)}" for a, b in spec.dt_schedule)
    gap_min = "auto" if spec.stop.gap_min is None else _fmt(spec.stop.gap_min)
    lines += [
        "", "[time]", f"t_max = {_fmt(spec.t_max)}", f"dt_schedule = {sched}", f"dt_growth = {_fmt(spec.dt_growth)}",
        "", "[newton]", f"max_iters = {spec.newton.max_iters}", f"tol = {_fmt(spec.newton.tol)}",
        f"damping = {'true' if spec.newton.damping else 'false'}",
        "", "[stop]", f"gap_min = {gap_min}", f"dt_min = {_fmt(spec.stop.dt_min)}",
        "", "[output]", f"record_every = {spec.record_every}", "",
    ]
    return "\n".join(lines)


# -- trajectories -----------------------------------------------------------


def _csv_line(values):
    return ",".join(values) + "\n"


def write_trajectory_csv(result, diagnostics_path, snapshots_path):
    """Diagnostics and snapshot tables; floats in shortest round-trip form."""
    with open(diagnostics_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_csv_line(DIAGNOSTICS_HEADER))
        for r in result.rows:
            vals = [_fmt(getattr(r, k)) for k in DIAGNOSTICS_HEADER[:-1]] + [str(int(r.newton_iters))]
            fh.write(_csv_line(vals))
    n = len(result.snapshots[0][1]) if result.snapshots else getattr(result.params, "n", 0)
    with open(snapshots_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_csv_line(["t"] + [f"x{i}" for i in range(1, n + 1)]))
        for t, x in result.snapshots:
            fh.write(_csv_line([_fmt(t)] + [_fmt(v) for v in x]))


def read_snapshots_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: snapshot header must start with 't'")
        out = []
        for row in reader:
            vals = [float(v) for v in row]
            out.append((vals[0], np.array(vals[1:])))
    return out


def read_diagnostics_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != DIAGNOSTICS_HEADER:
            raise ValueError(f"{path}: unexpected diagnostics header")
        rows = []
        for row in reader:
            vals = [float(v) for v in row[:-1]] + [int(row[-1])]
            rows.append(DiagnosticsRow(*vals))
    return rows


def result_from_csv(snapshots_path=None, diagnostics_path=None):
    """A SimulationResult view of CSV files (no termination information)."""
    snaps = read_snapshots_csv(snapshots_path) if snapshots_path else []
    rows = read_diagnostics_csv(diagnostics_path) if diagnostics_path else []
    scale = float(np.max(np.abs(snaps[0][1]))) if snaps else 1.0
    return SimulationResult(rows, snaps, None, None, scale)


# -- summaries --------------------------------------------------------------


def _json_float(v):
    if v is None:
        return None
    v = float(v)
    if math.isfinite(v):
        return v
    return "inf" if v > 0 else ("-inf" if v < 0 else "nan")


def energy_sign_change_time(t, f):
    """First time the energy becomes negative (linear interpolation); 0 if negative at t=0."""
    if len(f) == 0:
        return None
    if f[0] < 0:
        return 0.0
    idx = np.nonzero(np.asarray(f) < 0)[0]
    if idx.size == 0:
        return None
    k = int(idx[0])
    t0, t1, f0, f1 = t[k - 1], t[k], f[k - 1], f[k]
    return float(t0 + (t1 - t0) * f0 / (f0 - f1))


def summary_dict(result, c_n=None, blowup_sets=None, spec=None):
    term = result.termination
    t = result.column("t")
    f2 = result.column("f2")
    f = result.column("F")
    p = result.params
    params = {"m": getattr(p, "m", None), "chi": getattr(p, "chi", None),
              "alpha": getattr(p, "alpha", None), "n": getattr(p, "n", None)}
    if spec is not None:
        params["chi_input"] = getattr(spec.params, "chi", None)
        params["chi_convention"] = spec.chi_convention
    params["time_scale"] = result.time_scale
    if isinstance(p, LogParams):
        params["pairs"] = p.pairs
    termination = {"type": term.kind if term is not None else None}
    if isinstance(term, BlowUp):
        termination.update(t_estimate=term.t_estimate, last_dt=term.last_dt, min_gap=term.min_gap,
                           reason=term.reason)
    elif isinstance(term, Completed):
        termination.update(t_estimate=_json_float(math.inf), t_max=term.t_max)
    elif isinstance(term, Failure):
        termination.update(t_estimate=None, reason=term.reason)
    extrema = {"t_of_max_f2": None, "max_f2": None, "t_energy_sign_change": None}
    if t.size:
        i = int(np.argmax(f2))
        extrema = {"t_of_max_f2": float(t[i]), "max_f2": float(f2[i]),
                   "t_energy_sign_change": energy_sign_change_time(t, f)}
    out = {"params": params, "termination": termination, "extrema": extrema,
           "c_n": _json_float(c_n), "n_rows": len(result.rows)}
    if blowup_sets is not None:
        out["blowup_sets"] = blowup_sets
    return out


def write_summary_json(result, path, c_n=None, blowup_sets=None, spec=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(summary_dict(result, c_n, blowup_sets, spec), fh, indent=2, sort_keys=True,
                  allow_nan=False)
        fh.write("\n")


# -- SVG ----------------------------------------------------------------------

PLOT_KINDS = ("energy_vs_t", "moment_vs_t", "worldlines", "rescaled_worldlines", "density_hist")


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    t_range: tuple = None
    width: int = 800
    height: int = 500

    def __post_init__(self):
        if self.kind not in PLOT_KINDS:
            raise DomainError(f"unknown plot kind {self.kind!r} (choose from {PLOT_KINDS})")
        if not (self.width > 0 and self.height > 0):
            raise DomainError("plot size must be positive")


def nice_ticks(lo, hi, count=5):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


class _Canvas:
    margin = (70, 20, 30, 50)  # left, right, top, bottom

    def __init__(self, spec, xlim, ylim, title, xlabel, ylabel):
        self.w, self.h = spec.width, spec.height
        self.xlim = _pad(xlim)
        self.ylim = _pad(ylim)
        self.parts = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def sx(self, x):
        l, r, _, _ = self.margin
        a, b = self.xlim
        return l + (x - a) / (b - a) * (self.w - l - r)

    def sy(self, y):
        _, _, t, bm = self.margin
        a, b = self.ylim
        return self.h - bm - (y - a) / (b - a) * (self.h - t - bm)

    def polyline(self, xs, ys, color="#1f77b4", width=1.2):
        pts = " ".join(f"{self.sx(x):.3f},{self.sy(y):.3f}" for x, y in zip(xs, ys))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def rect(self, x0, x1, y0, y1, color="#1f77b4"):
        xa, xb = sorted((self.sx(x0), self.sx(x1)))
        ya, yb = sorted((self.sy(y0), self.sy(y1)))
        self.parts.append(f'<rect x="{xa:.3f}" y="{ya:.3f}" width="{xb - xa:.3f}" height="{yb - ya:.3f}" '
                          f'fill="{color}" fill-opacity="0.6" stroke="none"/>')

    def render(self):
        l, r, t, b = self.margin
        out = [
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{self.w}" height="{self.h}" '
            f'viewBox="0 0 {self.w} {self.h}">',
            f'<rect x="0" y="0" width="{self.w}" height="{self.h}" fill="white"/>',
            f'<text x="{self.w / 2:.1f}" y="{t - 10}" text-anchor="middle" font-size="14">{escape(self.title)}</text>',
        ]
        x0, x1 = self.sx(self.xlim[0]), self.sx(self.xlim[1])
        y0, y1 = self.sy(self.ylim[0]), self.sy(self.ylim[1])
        out.append(f'<line x1="{x0:.3f}" y1="{y0:.3f}" x2="{x1:.3f}" y2="{y0:.3f}" stroke="black"/>')
        out.append(f'<line x1="{x0:.3f}" y1="{y0:.3f}" x2="{x0:.3f}" y2="{y1:.3f}" stroke="black"/>')
        for v in nice_ticks(*self.xlim):
            x = self.sx(v)
            out.append(f'<line x1="{x:.3f}" y1="{y0:.3f}" x2="{x:.3f}" y2="{y0 + 5:.3f}" stroke="black"/>')
            out.append(f'<text x="{x:.3f}" y="{y0 + 18:.3f}" text-anchor="middle" font-size="11">{v:.6g}</text>')
        for v in nice_ticks(*self.ylim):
            y = self.sy(v)
            out.append(f'<line x1="{x0 - 5:.3f}" y1="{y:.3f}" x2="{x0:.3f}" y2="{y:.3f}" stroke="black"/>')
            out.append(f'<text x="{x0 - 8:.3f}" y="{y + 4:.3f}" text-anchor="end" font-size="11">{v:.6g}</text>')
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{self.h - 8}" text-anchor="middle" font-size="12">'
                   f'{escape(self.xlabel)}</text>')
        out.append(f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-size="12" '
                   f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{escape(self.ylabel)}</text>')
        out.extend(self.parts)
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _pad(lim):
    a, b = float(lim[0]), float(lim[1])
    if b <= a:
        d = abs(a) * 0.05 or 1.0
        return a - d, b + d
    return a, b


def _window(t, spec):
    mask = np.ones(len(t), dtype=bool)
    if spec.t_range is not None:
        lo, hi = spec.t_range
        mask = (t >= lo) & (t <= hi)
    return mask


def render_svg(result, spec, path, set_range=None):
    """Write a standalone SVG 1.1 plot of ``result`` (rows and/or snapshots)."""
    canvas = _build_canvas(result, spec, set_range)
    svg = canvas.render()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(svg)
    return svg


def _build_canvas(result, spec, set_range):
    from . import blowup

    if spec.kind in ("energy_vs_t", "moment_vs_t"):
        if not result.rows:
            raise DomainError("no diagnostics rows to plot")
        t = result.column("t")
        y = result.column("F" if spec.kind == "energy_vs_t" else "f2")
        mask = _window(t, spec)
        t, y = t[mask], y[mask]
        if t.size == 0:
            raise DomainError("no data in the requested time window")
        label = "free energy F" if spec.kind == "energy_vs_t" else "second moment |X|^2/2"
        c = _Canvas(spec, (t.min(), t.max()), (y.min(), y.max()), label + " vs time", "t", label)
        c.polyline(t, y)
        return c

    if not result.snapshots:
        raise DomainError("no snapshots to plot")
    snaps = result.snapshots
    t = np.array([s[0] for s in snaps])
    mask = _window(t, spec)
    snaps = [s for s, k in zip(snaps, mask) if k]
    if not snaps:
        raise DomainError("no data in the requested time window")

    if spec.kind == "density_hist":
        x = np.asarray(snaps[-1][1])
        # piecewise-constant density: mass 1/N spread over each gap
        g = np.diff(x)
        dens = 1.0 / (len(x) * g)
        c = _Canvas(spec, (x.min(), x.max()), (0.0, dens.max()),
                    f"density at t = {snaps[-1][0]:.6g}", "x", "density")
        for a, b, d in zip(x[:-1], x[1:], dens):
            c.rect(a, b, 0.0, d)
        return c

    if spec.kind == "rescaled_worldlines":
        if set_range is None:
            sets = blowup.detect_relative_blowup(snaps) if len(snaps) >= blowup.TAIL else []
            if not sets:
                raise DomainError("rescaled worldlines need a blow-up set (none detected)")
            set_range = (sets[0].l, sets[0].r)
        snaps = blowup.rescale_trajectory(snaps, set_range)
        title = f"rescaled worldlines, set {set_range[0]}..{set_range[1]}"
    else:
        title = "worldlines"
    t = np.array([s[0] for s in snaps])
    xs = np.array([s[1] for s in snaps])
    finite = xs[np.isfinite(xs)]
    c = _Canvas(spec, (t.min(), t.max()), (finite.min(), finite.max()), title, "t", "position")
    for j in range(xs.shape[1]):
        c.polyline(t, xs[:, j], width=0.6)
    return c
