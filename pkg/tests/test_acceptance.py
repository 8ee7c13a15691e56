"""Acceptance suite: one PASS/FAIL line per criterion, printed at the end of the run."""

import dataclasses
import json
import math
import os

import numpy as np
import pytest

from conftest import random_config, record
from homoflow import blowup as B, cli, core, flow, io, thresholds as T
from homoflow.initial import InitialProfile, tanh_profile
from homoflow.thresholds import positions_from_gaps
from oracles import C3_M12

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
REF_INI = os.path.join(ROOT, "configs", "reference.ini")

NS = (2, 3, 5, 10)
MS = (1.2, 1.5, 1.9)
ALPHAS = (0.0, 0.7)


def instances(per=100, seed=7):
    rng = np.random.default_rng(seed)
    for n in NS:
        for m in MS:
            for a in ALPHAS:
                for _ in range(per):
                    x = random_config(rng, n, rng.uniform(0.5, 3.0), min_gap=0.05)
                    yield x, core.ModelParams(m, rng.uniform(0.05, 0.4), a, n)


def fd_gradient(x, p):
    # fourth-order central stencil, step scaled to the smallest gap
    h = 1e-3 * np.min(np.diff(x))
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        f = [core.energy(x + k * e, p) for k in (-2, -1, 1, 2)]
        g[i] = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
    return g


def test_c01_gradient_consistency():
    worst = 0.0
    count = 0
    for x, p in instances():
        g = core.gradient(x, p)
        worst = max(worst, np.max(np.abs(fd_gradient(x, p) - g)) / np.max(np.abs(g)))
        count += 1
    ok = record(1, worst <= 1e-6, f"{count} instances, max rel FD error {worst:.2e} (tol 1e-6)")
    assert ok


def test_c02_homogeneity_euler():
    hom = eul = 0.0
    rng = np.random.default_rng(11)
    for x, p in instances():
        lam = rng.uniform(0.1, 10.0)
        b = core.energy_breakdown(x, p)
        f0 = b.internal - b.interaction
        b2 = core.energy_breakdown(lam * x, p)
        hom = max(hom, abs((b2.internal - b2.interaction) - lam ** (1 - p.m) * f0)
                  / abs(lam ** (1 - p.m) * f0))
        hom = max(hom, abs(b2.quadratic - lam**2 * b.quadratic) / max(abs(lam**2 * b.quadratic), 1e-300))
        # x.grad F = (1-m) F_0 + 2 Q
        g = core.gradient(x, p)
        lhs = float(x @ g)
        rhs = (1 - p.m) * f0 + 2 * b.quadratic
        scale = max(abs(lhs), (p.m - 1) * (b.internal + b.interaction), 2 * b.quadratic)
        eul = max(eul, abs(lhs - rhs) / scale)
    ok = record(2, hom <= 1e-12 and eul <= 1e-10,
                f"homogeneity {hom:.2e} (tol 1e-12), Euler {eul:.2e} (tol 1e-10)")
    assert ok


def test_c03_thresholds():
    c2 = T.compute_threshold(2, 1.2).c_p
    c3 = T.compute_threshold(3, 1.2).c_p
    msgs = [f"|C2-0.5|={abs(c2 - 0.5):.1e}", f"|C3-oracle|={abs(c3 - C3_M12):.1e}"]
    ok = abs(c2 - 0.5) <= 1e-14 and abs(c3 - C3_M12) <= 1e-5
    for m in (1.2, 1.5):
        table = [e.c_p for e in T.threshold_table(8, m)]
        lower = all(c >= 1.0 / p for p, c in enumerate(table, start=2))
        mono = all(b <= a for a, b in zip(table, table[1:]))
        ok = ok and lower and mono
        msgs.append(f"m={m}: C_p>=1/p {lower}, decreasing {mono}")
    assert record(3, ok, "; ".join(msgs))


def _log_spec(chi, x0, pairs, t_max):
    init = InitialProfile("explicit", x0.size, {"positions": list(x0)})
    return flow.RunSpec(flow.LogParams(chi, x0.size, pairs), init, t_max=t_max)


def test_c04_logarithmic_oracle():
    var = match = 0.0
    dichotomy = True
    half_rule = True
    rng = np.random.default_rng(5)
    for n in (3, 5, 10):
        # well-resolved start: RK4 at dt 1e-5 needs gaps well above sqrt(dt)
        x0 = core.center(np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 1.5, n - 1))]))
        for pairs, thr in (("ordered", 1.0 / n), ("unordered", 2.0 / n)):
            for chi in (0.8 * thr, 1.2 * thr, 0.8 * 2.0 / n, 1.2 * 2.0 / n):
                lp = flow.LogParams(chi, n, pairs)
                tt, traj = flow.integrate_rk4(x0, 1e-5, 10000, lp, record_every=100)
                slopes = np.diff(0.5 * np.sum(traj**2, axis=1)) / np.diff(tt)
                exact = core.log_moment_slope(n, chi, pairs)
                var = max(var, (slopes.max() - slopes.min()) / abs(slopes.mean()))
                match = max(match, np.max(np.abs(slopes - exact)) / abs(exact))
                res = flow.simulate_log(_log_spec(chi, x0, pairs, 200.0))
                blew = isinstance(res.termination, flow.BlowUp)
                dichotomy = dichotomy and blew == (exact < 0)
                if pairs == "unordered":
                    half_rule = half_rule and blew == (chi > 2.0 / n)
    ok = var <= 1e-6 and match <= 1e-8 and dichotomy and half_rule
    assert record(4, ok, f"slope variation {var:.1e} (tol 1e-6), vs exact {match:.1e} (tol 1e-8), "
                          f"blow-up iff slope<0 {dichotomy}, chi=2/N+-20% dichotomy {half_rule}")


@pytest.fixture(scope="module")
def ref50():
    spec = io.read_run_spec(REF_INI)
    spec = dataclasses.replace(spec, params=spec.params.with_(n=50), initial=tanh_profile(50))
    return spec, flow.simulate(spec)


def _moment_law_errors(spec, res, t0, dt=1e-4, steps=2000):
    f = spec.functional()
    m = spec.params.m
    k = int(np.searchsorted(res.times, t0))
    tt, traj = flow.integrate_rk4(res.snapshots[k][1], dt, steps, f, record_every=1)
    nrm = np.linalg.norm(traj, axis=1)
    F = np.array([f.energy(x) for x in traj])[1:-1]
    d2 = (0.5 * nrm[2:] ** 2 - 0.5 * nrm[:-2] ** 2) / (2 * dt)
    dm = (nrm[2:] ** (m + 1) - nrm[:-2] ** (m + 1)) / ((m + 1) * 2 * dt)
    e1 = np.max(np.abs(d2 - (m - 1) * F) / np.abs((m - 1) * F))
    law = (m - 1) * F * nrm[1:-1] ** (m - 1)
    return e1, np.max(np.abs(dm - law) / np.abs(law))


def test_c05_dissipation_and_moment_laws(ref50):
    spec, res = ref50
    jko = res.jko_excess()
    law = max(max(_moment_law_errors(spec, res, t0)) for t0 in (20.0, 100.0, 300.0))
    t = res.column("t")
    fm = res.column("fmp1")
    h = np.diff(t)
    uniform = np.abs(h[1:] - h[:-1]) <= 1e-12 * np.maximum(1.0, t[1:-1])
    sd = (fm[2:] - 2 * fm[1:-1] + fm[:-2])[uniform]
    tol = 1e-6 * np.max(np.abs(fm))
    bad = t[1:-1][uniform][sd > tol]
    ok = jko <= 0 and law <= 1e-3 and bad.size == 0
    assert record(5, ok, f"JKO excess {jko:.1e} (<=0), moment laws rel {law:.1e} (tol 1e-3), "
                         f"f_m+1 second differences max {sd.max():.2e} vs tol {tol:.1e}, "
                         f"violations at t={[round(float(v), 4) for v in bad[:5]]}")


def test_c06_negative_energy_bound():
    m, n = 1.2, 10
    chi = 2 * T.compute_threshold(n, m).c_p
    p = core.ModelParams(m, chi, 0.0, n)
    rng = np.random.default_rng(2024)
    worst = -math.inf
    all_blowup = True
    done = 0
    while done < 10:
        x = random_config(rng, n, rng.uniform(0.5, 3.0), min_gap=0.05)
        f0 = core.energy(x, p)
        if f0 >= 0:
            continue
        init = InitialProfile("explicit", n, {"positions": list(x)})
        spec = flow.RunSpec(p, init, t_max=1e4)
        res = flow.simulate(spec)
        all_blowup = all_blowup and isinstance(res.termination, flow.BlowUp)
        bound = core.second_moment(x) / ((m - 1) * abs(f0)) + spec.scheduled_dt(0.0)
        worst = max(worst, res.maximal_time_estimate - bound)
        done += 1
    ok = all_blowup and worst <= 0
    assert record(6, ok, f"10 runs all BlowUp {all_blowup}, max(T - bound) {worst:.3g} (<= 0)")


def _plateau(t, F):
    rate0 = (F[0] - np.interp(1.0, t, F)) / 1.0
    r = np.abs(np.diff(F) / np.diff(t))
    quiet = r < 0.01 * rate0
    best = (0.0, None, None)
    i = 0
    while i < quiet.size:
        if quiet[i]:
            j = i
            while j + 1 < quiet.size and quiet[j + 1]:
                j += 1
            if t[j + 1] - t[i] > best[0]:
                best = (t[j + 1] - t[i], i, j + 1)
            i = j + 1
        else:
            i += 1
    return rate0, r, best


def test_c07_reference_run(tmp_path):
    out = tmp_path / "run"
    code = cli.main(["simulate", "--config", REF_INI, "--out", str(out)])
    res = io.result_from_csv(out / "snapshots.csv", out / "diagnostics.csv")
    summary = json.loads((out / "summary.json").read_text())
    t = res.column("t")
    F = res.column("F")
    f2 = res.column("f2")
    a = F[0] > 0
    b = bool(np.any(F < 0))
    i = int(np.argmax(f2))
    c = 0 < i < f2.size - 1 and 2 <= t[i] <= 8
    term = summary["termination"]
    T_est = term.get("t_estimate")
    d = code == 0 and term["type"] == "blowup" and 50 <= T_est <= 1000
    rate0, r, (width, s, e) = _plateau(t, F)
    e_ok = width >= 50 and e is not None and np.any(r[e:] >= 0.01 * rate0) and F[-1] < F[e]
    ok = a and b and c and d and e_ok
    assert record(7, ok, f"(a) F0={F[0]:.4g} {a}; (b) {b}; (c) t_max_f2={t[i]:.3g} {c}; "
                         f"(d) T={T_est:.5g} {d}; (e) plateau {width:.4g} time units, "
                         f"terminal drop {e_ok}")


def test_c08_subcritical_global_existence():
    m, n = 1.2, 5
    p = core.ModelParams(m, 0.5 * T.compute_threshold(n, m).c_p, 0.0, n)
    res = flow.simulate(flow.RunSpec(p, tanh_profile(n), t_max=100.0))
    t = res.column("t")
    g = res.column("min_gap")
    late = g[t >= 50.0]
    completed = isinstance(res.termination, flow.Completed)
    # bounded below: no decay over the final half
    ok = completed and late.min() > 0 and late.min() >= 0.5 * late[0]
    assert record(8, ok, f"Completed {completed}, final-half min_gap {late.min():.4g} "
                         f"(at t=50: {late[0]:.4g})")


def test_c09_deficit():
    rng = np.random.default_rng(99)
    worst = math.inf
    for _ in range(1000):
        n = int(rng.integers(2, 11))
        p = core.ModelParams(float(rng.choice(MS)), rng.uniform(0.0, 1.0), 0.0, n)
        x = random_config(rng, n, 1.0, min_gap=0.02)
        y = x / np.linalg.norm(x)
        worst = min(worst, core.deficit_H(y, p))
    c4 = T.compute_threshold(4, 1.2).c_p
    at = T.estimate_delta_H(4, 1.2, c4, c_n=c4)
    above = T.estimate_delta_H(4, 1.2, 1.3 * c4, c_n=c4)
    ok = worst >= -1e-10 and at <= 1e-6 and above > 0
    assert record(9, ok, f"min deficit {worst:.3g} (>= -1e-10), delta_H(C4) {at:.2e} (<= 1e-6), "
                         f"delta_H(1.3 C4) {above:.3g} (> 0)")


def _synthetic(gap_fn, n_max=1e7, k=24):
    return [(float(i), positions_from_gaps(gap_fn(n, i))) for i, n in enumerate(np.geomspace(10, n_max, k))]


def _synthetic_examples():
    out = {}
    s = B.detect_relative_blowup(_synthetic(lambda n, i: [1 / n, 1 / n, 1, 1]))
    out["equal-rate pair"] = ([(x.l, x.r) for x in s] == [(0, 2)]
                              and np.allclose(np.diff(s[0].profile), [2**-0.5, 2**-0.5], rtol=1e-8))
    s = B.detect_relative_blowup(_synthetic(lambda n, i: [1 / n, 1, 1 / n**2], n_max=1e6))
    out["fastest rate"] = [(x.l, x.r) for x in s] == [(2, 3)]
    try:
        B.limiting_profile(_synthetic(lambda n, i: [1 / n, (2 if i % 2 else 1) / n, 1]), (0, 2))
        out["oscillating"] = False
    except B.NonConvergentProfile:
        out["oscillating"] = True
    z = B.limiting_profile(_synthetic(lambda n, i: [1 / n, 2 / n, 1]), (0, 2))
    out["steady profile"] = np.allclose(np.diff(z), np.array([1, 2]) / math.sqrt(5), rtol=1e-8)
    resc = B.rescale_trajectory(_synthetic(lambda n, i: [1 / n, 3 / n, 1]), (0, 2))
    out["self-similar"] = all(np.allclose(x[:3], resc[0][1][:3], atol=1e-6) for _, x in resc)
    snaps = _synthetic(lambda n, i: [1.0, 1 / n, 1 / n, 1.0, 1.0])
    weak = B.detect_weak_blowup(flow.SimulationResult([], snaps, None, initial_scale=1.0))
    out["weak single collapse"] = weak.sets == [(1, 3)]
    return out


def test_c10_blowup_analysis(ref50):
    examples = _synthetic_examples()
    spec, res = ref50
    chi = spec.effective_params().chi
    n = spec.params.n
    # k is the largest p with chi < C_p; thresholds decrease in p
    k = max(p for p in range(2, n + 1) if chi < T.compute_threshold(p, 1.2, n_starts=4).c_p)
    rel = B.detect_relative_blowup(res.snapshots)
    weak = B.detect_weak_blowup(res).sets
    covered = [any(a <= s.l and s.r <= b and b - a + 1 >= k + 1 for a, b in weak) for s in rel]
    ok = all(examples.values()) and len(rel) >= 1 and all(covered)
    failed = [name for name, v in examples.items() if not v]
    assert record(10, ok, f"synthetic examples failing: {failed or 'none'}; relative sets "
                          f"{[(s.l, s.r) for s in rel]}, weak sets {weak}, k={k}")
