"""Discrete HLS constants C_p, critical profiles and the deficit infimum.

Everything here is parametrized by the p-1 gaps of an ordered configuration:
ordering becomes positivity and the center of mass is fixed afterwards.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import core
from .errors import DomainError, SolverError

log = logging.getLogger(__name__)


class NoCriticalPointError(SolverError):
    """Newton stalled on the critical-point equations: no critical point in this regime."""


class EmptyConeError(SolverError):
    """No unit configuration with non-negative energy was found."""


@dataclass(frozen=True)
class ThresholdEstimate:
    p: int
    m: float
    c_p: float
    maximizer: np.ndarray = field(repr=False)
    ratio_value: float
    kkt_residual: float
    mirror_defect: float = 0.0
    local_optima: tuple = ()


@dataclass(frozen=True)
class CriticalProfile:
    p: int
    positions: np.ndarray = field(repr=False)
    chi: float
    alpha: float
    residual: float
    energy: float


def positions_from_gaps(g):
    """Centered positions with the given consecutive gaps."""
    g = np.asarray(g, dtype=float)
    x = np.concatenate([[0.0], np.cumsum(g)])
    x -= x.mean()
    return x - x.mean()


def unit_positions_from_gaps(g):
    x = positions_from_gaps(g)
    return x / np.linalg.norm(x)


def _cut_sums(mat):
    """Q[a, b] = sum_{i <= a, j > b} mat[i, j] for gap indices 0 <= a, b <= p-2.

    A pair (i, j) with i < j straddles gap k exactly when i <= k < j.
    """
    c = np.cumsum(mat, axis=0)
    d = np.cumsum(c[:, ::-1], axis=1)[:, ::-1]
    return d[:-1, 1:]


def _pair_matrix(x, power):
    """Upper-triangular (X_j - X_i)^power for i < j, zero elsewhere."""
    n = x.size
    d = np.subtract.outer(x, x).T  # d[i, j] = x[j] - x[i]
    iu = np.triu_indices(n, k=1)
    out = np.zeros((n, n))
    out[iu] = d[iu] ** power
    return out


def straddle_sums(g, power):
    """S_k = sum over pairs i <= k < j of (X_j - X_i)^power."""
    x = positions_from_gaps(g)
    return np.diag(_cut_sums(_pair_matrix(x, power))).copy()


def hls_ratio(x, m):
    """sum_{i!=j} |X_j-X_i|^(1-m) / sum_i (X_{i+1}-X_i)^(1-m).  Scale invariant."""
    if not m > 1:
        raise DomainError(f"m must be > 1, got {m}")
    g = core.gaps(x)
    x = np.asarray(x, dtype=float)
    e = 1.0 - m
    w = 2.0 * np.sum(core._pair_distances(x) ** e)
    return float(w / np.sum(g**e))


def _ratio_and_grad(g, m):
    """Ratio as a function of gaps and its gradient with respect to the gaps."""
    e = 1.0 - m
    x = positions_from_gaps(g)
    pw = _pair_matrix(x, e)
    u = np.sum(g**e)
    w = 2.0 * pw.sum()
    # dW/dg_k = 2(1-m) S_k with S_k the straddle sum of d^(-m)
    s = np.diag(_cut_sums(_pair_matrix(x, -m)))
    dw = 2.0 * e * s
    du = e * g ** (-m)
    r = w / u
    return r, (dw - r * du) / u


def _project_simplex(v, floor):
    """Euclidean projection onto {g >= floor, sum g = 1}."""
    n = v.size
    shift = v - floor
    total = 1.0 - n * floor
    u = np.sort(shift)[::-1]
    css = np.cumsum(u) - total
    ind = np.arange(1, n + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(shift - theta, 0.0) + floor


def _projected_ascent(g, m, iters=400, floor=1e-9):
    g = _project_simplex(np.asarray(g, dtype=float), floor)
    r, dg = _ratio_and_grad(g, m)
    step = 1.0 / max(1.0, np.abs(dg).max())
    for _ in range(iters):
        while True:
            trial = _project_simplex(g + step * dg, floor)
            rt, dgt = _ratio_and_grad(trial, m)
            # Armijo condition along the projection arc
            if rt >= r + 1e-4 * np.dot(dg, trial - g) or step < 1e-16:
                break
            step *= 0.5
        moved = np.abs(trial - g).max()
        g, r, dg = trial, rt, dgt
        step *= 2.0
        if moved < 1e-13:
            break
    return g


def _threshold_equations(g, m):
    """Residuals 1 - 2 C S_k g_k^m of the maximizer's stationarity, with C = 1/ratio."""
    r, _ = _ratio_and_grad(g, m)
    s = straddle_sums(g, -m)
    return 1.0 - 2.0 * s * g**m / r


def _gap_jacobian(g, m, chi, alpha=0.0):
    """Jacobian of G_k = g_k^-m - 2 chi S_k - alpha/p L_k with respect to the gaps."""
    p = g.size + 1
    x = positions_from_gaps(g)
    t = _cut_sums(m * _pair_matrix(x, -m - 1.0))
    k = np.arange(p - 1)
    lo = np.minimum.outer(k, k)
    hi = np.maximum.outer(k, k)
    # dS_k/dg_l = -m sum over pairs straddling both k and l of d^(-m-1)
    tk = t[lo, hi]
    jac = 2.0 * chi * tk
    jac[k, k] -= m * g ** (-m - 1.0)
    if alpha:
        jac -= alpha / p * (lo + 1.0) * (p - 1.0 - hi)
    return jac


def _gap_residual(g, m, chi, alpha=0.0):
    p = g.size + 1
    res = g ** (-m) - 2.0 * chi * straddle_sums(g, -m)
    if alpha:
        res -= alpha / p * straddle_sums(g, 1.0)
    return res


def _kkt_residual(g, m):
    return float(np.abs(_threshold_equations(g, m)).max())


def _newton_polish(g, m, iters=50, tol=1e-13):
    """Gauss-Newton on (relative gap equations, sum g = 1) with chi tracking 1/ratio."""
    g = g / g.sum()
    best = g
    best_res = _kkt_residual(g, m)
    for _ in range(iters):
        if best_res < tol:
            break
        r, _ = _ratio_and_grad(g, m)
        chi = 1.0 / r
        res = np.append(_gap_residual(g, m, chi) * g**m, g.sum() - 1.0)
        jac = _gap_jacobian(g, m, chi) * (g**m)[:, None]
        jac = np.vstack([jac, np.ones(g.size)])
        step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            trial = g + lam * step
            if np.all(trial > 0):
                trial = trial / trial.sum()
                tres = _kkt_residual(trial, m)
                if tres < best_res:
                    break
            lam *= 0.5
        else:
            break
        g, best, best_res = trial, trial, tres
    return best, best_res


def _starts(p, n_starts, rng):
    k = p - 1
    base = np.ones(k)
    u = np.linspace(-1.0, 1.0, k) if k > 1 else np.zeros(1)
    starts = [base, 1.0 + 2.0 * u**2, 1.0 / (1.0 + 2.0 * u**2), np.exp(u), np.exp(-u)]
    while len(starts) < n_starts:
        starts.append(np.exp(rng.normal(scale=0.75, size=k)))
    return [s / s.sum() for s in starts[:n_starts]]


def compute_threshold(p, m, n_starts=16, seed=0, stationarity_tol=1e-10, ascent_iters=400):
    """C_p = 1 / max hls_ratio over ordered configurations of p particles.

    Multi-start projected gradient ascent on normalized gaps, then a Newton polish
    of the stationarity equations.
    """
    if int(p) != p or p < 2:
        raise DomainError(f"p must be an integer >= 2, got {p}")
    if not m > 1:
        raise DomainError(f"m must be > 1, got {m}")
    p = int(p)
    if p == 2:
        x = np.array([-1.0, 1.0]) / np.sqrt(2.0)
        return ThresholdEstimate(2, m, 0.5, x, 2.0, 0.0, 0.0, (2.0,))

    rng = np.random.default_rng(seed)
    found = []
    for g0 in _starts(p, n_starts, rng):
        g = _projected_ascent(g0, m, iters=ascent_iters)
        g, res = _newton_polish(g, m)
        r = _ratio_and_grad(g, m)[0]
        found.append((r, res, g))

    ok = [f for f in found if f[1] <= stationarity_tol]
    if not ok:
        best = max(found, key=lambda f: f[0])
        raise SolverError(
            f"no start reached stationarity {stationarity_tol:g} for p={p}, m={m}",
            best=ThresholdEstimate(p, m, 1.0 / best[0], unit_positions_from_gaps(best[2]),
                                   best[0], best[1]),
        )
    # deterministic reduction: best ratio, ties by lexicographic gap vector
    top = max(f[0] for f in ok)
    tied = [f for f in ok if f[0] >= top * (1 - 1e-12)]
    r, res, g = min(tied, key=lambda f: tuple(f[2]))

    optima = []
    for f in sorted(ok, key=lambda f: -f[0]):
        if all(abs(f[0] - o) > 1e-9 * abs(o) for o in optima):
            optima.append(float(f[0]))
    mirror = abs(_ratio_and_grad(g[::-1].copy(), m)[0] - r) / r
    x = unit_positions_from_gaps(g)
    return ThresholdEstimate(p, m, float(1.0 / r), x, float(r), float(res), float(mirror), tuple(optima))


def threshold_table(p_max, m, **opts):
    """C_2..C_{p_max}; warns when the sequence fails to be non-increasing."""
    if p_max < 2:
        raise DomainError(f"p_max must be >= 2, got {p_max}")
    table = [compute_threshold(p, m, **opts) for p in range(2, p_max + 1)]
    for a, b in zip(table, table[1:]):
        if b.c_p > a.c_p + 1e-8:
            warnings.warn(
                f"C_{b.p} = {b.c_p} exceeds C_{a.p} = {a.c_p}: a global maximum was likely missed",
                RuntimeWarning,
            )
    return table


def is_monotone(table, tol=1e-8):
    return all(b.c_p <= a.c_p + tol for a, b in zip(table, table[1:]))


def _solve_gaps(g, m, chi, alpha, tol, max_iter):
    """Damped Newton on the gap equations, in relative form G_k g_k^m.

    With alpha = 0 the equations are dilation invariant and the gauge sum g = 1
    is appended (least squares on a consistent overdetermined system).
    """
    gauge = alpha == 0

    def rel(g):
        return _gap_residual(g, m, chi, alpha) * g**m

    def merit(g):
        return float(np.abs(rel(g)).max())

    if gauge:
        g = g / g.sum()
    cur = merit(g)
    for _ in range(max_iter):
        if cur <= tol:
            break
        res = rel(g)
        jac = _gap_jacobian(g, m, chi, alpha) * (g**m)[:, None]
        # derivative of the g_k^m factor
        jac[np.diag_indices(g.size)] += _gap_residual(g, m, chi, alpha) * m * g ** (m - 1.0)
        if gauge:
            res = np.append(res, g.sum() - 1.0)
            jac = np.vstack([jac, np.ones(g.size)])
        step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        lam = 1.0
        while lam > 1e-8:
            trial = g + lam * step
            if np.all(trial > 0):
                if gauge:
                    trial = trial / trial.sum()
                tm = merit(trial)
                if tm < cur:
                    break
            lam *= 0.5
        else:
            break
        g, cur = trial, tm
    return g, cur


def critical_profile(p, m, chi, alpha=0.0, start=None, tol=1e-10, max_iter=100, threshold=None):
    """Solve the p-1 gap equations of a critical point of F^p_{m,alpha}.

    g_k^-m = 2 chi sum_{i<=k<j} (V_j-V_i)^-m + alpha/p sum_{i<=k<j} (V_j-V_i).

    ``residual`` is the max over k of |G_k| g_k^m, i.e. relative to the internal
    force on gap k.  With alpha = 0 the profile is returned at unit norm.
    Raises NoCriticalPointError when Newton stalls above ``tol``.
    """
    if int(p) != p or p < 2:
        raise DomainError(f"p must be an integer >= 2, got {p}")
    p = int(p)
    if alpha < 0:
        log.info("alpha < 0: no critical point is expected")
    if start is not None:
        g = np.asarray(start, dtype=float)
        if g.shape != (p - 1,) or not np.all(g > 0):
            raise DomainError("start must be p-1 positive gaps")
    elif alpha == 0:
        if p == 2:
            g = np.ones(1)
        else:
            est = threshold or compute_threshold(p, m)
            g = np.diff(est.maximizer)
    else:
        g = _balanced_uniform_gaps(p, m, chi, alpha)

    g, res = _solve_gaps(g, m, chi, alpha, tol, max_iter)
    x = positions_from_gaps(g)
    if alpha == 0:
        x = x / np.linalg.norm(x)
    energy = core.energy(x, core.ModelParams(m, chi, 0.0, p))
    if not res <= tol:
        raise NoCriticalPointError(
            f"critical-point equations stalled at residual {res:.3g} (p={p}, chi={chi}, alpha={alpha})",
            best=CriticalProfile(p, x, chi, alpha, res, energy),
        )
    return CriticalProfile(p, x, float(chi), float(alpha), float(res), float(energy))


def _balanced_uniform_gaps(p, m, chi, alpha):
    """Uniform gap h balancing the summed gap equations, h^(m+1) = p sum(1 - 2 chi s)/(alpha sum l)."""
    ones = np.ones(p - 1)
    s = straddle_sums(ones, -m)
    ell = straddle_sums(ones, 1.0)
    num = p * np.sum(1.0 - 2.0 * chi * s)
    den = alpha * np.sum(ell)
    h = (num / den) ** (1.0 / (m + 1.0)) if num > 0 and den > 0 else 1.0
    return h * ones


def _unit_from_params(u):
    return unit_positions_from_gaps(np.exp(u - u.max()))


def _deficit_and_grad(u, m, chi):
    """Deficit H at Y(u) = normalized centered configuration with gaps exp(u), and dH/du."""
    g = np.exp(u - u.max())
    z = positions_from_gaps(g)
    nz = np.linalg.norm(z)
    y = z / nz
    par = core.ModelParams(m, chi, 0.0, y.size)
    gr = core.gradient(y, par)
    f = core.energy(y, par)
    hs = core.hessian(y, par)
    h = float(gr @ gr) - ((m - 1.0) * f) ** 2
    dh_dy = 2.0 * hs @ gr - 2.0 * (m - 1.0) ** 2 * f * gr
    df_dy = gr
    # y = P c(g)/|P c(g)|, dy/dz = (I - y y^T)/|z|, dz/dg_k = centered step at k

    def back(v):
        vz = (v - y * (y @ v)) / nz
        # z_i = sum_{k < i} g_k - mean; the mean shift is killed by centering of vz
        vz = vz - vz.mean()
        dg = np.cumsum(vz[::-1])[::-1][1:]
        return dg * g

    return h, f, back(dh_dy), back(df_dy), core.energy_breakdown(y, par).internal


def estimate_delta_H(n, m, chi, n_starts=16, seed=0, penalty=None, max_n=8, c_n=None):
    """Upper bound on inf { H(Y) : |Y| = 1, F(Y) >= 0 } from multi-start local descent.

    The constraint F >= 0 is handled by an exact penalty mu * max(0, -F).
    Raises EmptyConeError if no start reaches the non-negative energy cone.
    """
    if n > max_n:
        raise DomainError(f"n = {n} exceeds the cost guard max_n = {max_n}")
    if n < 2:
        raise DomainError("n must be >= 2")
    if c_n is None:
        c_n = compute_threshold(n, m, seed=seed).c_p
    if chi < c_n * (1 - 1e-12):
        raise DomainError(f"chi = {chi} is below C_N = {c_n}")
    par = core.ModelParams(m, chi, 0.0, n)
    if n == 2:
        y = np.array([-1.0, 1.0]) / np.sqrt(2.0)
        if core.energy(y, par) < -1e-14:
            raise EmptyConeError(f"no unit configuration with F >= 0 for chi = {chi}")
        return max(core.deficit_H(y, par), 0.0)

    rng = np.random.default_rng(seed)
    starts = [np.log(s) for s in _starts(n, n_starts, rng)]
    if chi <= c_n * (1 + 1e-9):
        # the critical profile is the expected minimizer at the threshold
        try:
            prof = critical_profile(n, m, c_n)
            starts.insert(0, np.log(np.diff(prof.positions)))
        except SolverError:
            pass

    def penalized(u, mu):
        h, f, dh, df, _ = _deficit_and_grad(u, m, chi)
        if f < 0:
            return h - mu * f, dh - mu * df
        return h, dh

    # one-small-gap starts reach the cone when it shrinks towards collisions
    for k in range(n - 1):
        for eps in (1e-3, 1e-6):
            s = np.ones(n - 1)
            s[k] = eps
            starts.append(np.log(s / s.sum()))

    # log-gaps relative to the largest stay above -30 so positions resolve every gap
    bounds = [(-30.0, 0.0)] * (n - 1)
    starts = [np.clip(u - u.max(), -30.0, 0.0) for u in starts]
    best = None
    for u0 in starts:
        h0, _, dh0, _, _ = _deficit_and_grad(u0, m, chi)
        mu = penalty if penalty is not None else 10.0 * max(1.0, np.abs(dh0).max(), abs(h0))
        u = u0
        # raise the penalty until the minimizer is feasible (exact once mu exceeds the multiplier)
        for _ in range(12):
            sol = optimize.minimize(penalized, u, args=(mu,), jac=True, method="L-BFGS-B", bounds=bounds,
                                    options=dict(maxiter=2000, ftol=1e-16, gtol=1e-12))
            u = sol.x
            h, f, _, _, internal = _deficit_and_grad(u, m, chi)
            feasible = f >= -1e-12 * internal
            if feasible or penalty is not None:
                break
            mu *= 10.0
        if feasible:
            if best is None or h < best:
                best = h
    if best is None:
        raise EmptyConeError(f"no unit configuration with F >= 0 found for chi = {chi}")
    return float(best)
