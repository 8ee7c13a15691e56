"""Post-hoc blow-up analysis of recorded trajectories.

Limits over sequences are turned into statistics over the last K snapshots.
Indices are 0-based: a set (l, r) holds particles l..r inclusive and the gaps
l..r-1, gap i being X[i+1] - X[i].
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, HomoflowError

TAIL = 8


class NonConvergentProfile(HomoflowError):
    """Normalized gaps of a blow-up set oscillate over the tail."""

    def __init__(self, msg, last_profile=None):
        super().__init__(msg)
        self.last_profile = last_profile


@dataclass(frozen=True)
class Thresholds:
    """Tail statistics used to decide the three limits of a relative blow-up set.

    A gap ratio is taken as bounded when its tail maximum is below 1/eps_ratio or
    when it does not grow with the collapse, i.e. the slope of log(ratio) against
    log(1/smallest gap) over the tail is at most ``slope_tol``.  A ratio tends to zero when
    its last value is below eps_ratio.
    """

    eps_ratio: float = 0.05
    eps_abs: float = 1e-6
    slope_tol: float = 0.1
    tail: int = TAIL


@dataclass
class BlowUpSet:
    l: int
    r: int
    gap_ratios: np.ndarray = field(repr=False)
    pi_norm_tail: np.ndarray = field(repr=False)
    profile: np.ndarray = field(repr=False)
    thresholds: Thresholds = Thresholds()
    profile_converged: bool = True

    @property
    def size(self):
        return self.r - self.l + 1

    @property
    def j_set(self):
        return list(range(self.l, self.r))

    def boundary(self, n):
        """Gaps adjacent to the set, within 0..n-2."""
        return [j for j in (self.l - 1, self.r) if 0 <= j <= n - 2]


@dataclass
class WeakBlowUpReport:
    sets: list
    t_end: float
    min_gap_history: np.ndarray = field(repr=False)
    gap_tol: float = 0.0


def _tail_gaps(snapshots, tail):
    xs = [np.asarray(s[1] if isinstance(s, tuple) else s, dtype=float) for s in snapshots]
    if len(xs) < tail:
        raise DomainError(f"need at least {tail} snapshots, got {len(xs)}")
    g = np.array([np.diff(x) for x in xs[-tail:]])
    if np.any(g <= 0):
        raise DomainError("snapshots must be strictly ordered")
    return g


def _growing_ratios(g, th):
    """grows[i, k] is True when gap_i / gap_k diverges over the tail (rows of g are times)."""
    lg = np.log(g)
    y = lg[:, :, None] - lg[:, None, :]  # log ratio, [t, i, k]
    bounded_abs = y.max(axis=0) < np.log(1.0 / th.eps_ratio)
    # collapse progress: log of 1/(smallest gap)
    x = -lg.min(axis=1)
    xc = x - x.mean()
    var = float(np.sum(xc**2))
    if var < 1e-24:
        grows = ~bounded_abs
    else:
        slope = np.einsum("t,tik->ik", xc, y - y.mean(axis=0)) / var
        grows = ~bounded_abs & (slope > th.slope_tol)
    np.fill_diagonal(grows, False)
    return grows


def _ranges(mask):
    out, start = [], None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        if not flag and start is not None:
            out.append((start, i - 1))
            start = None
    if start is not None:
        out.append((start, len(mask) - 1))
    return out


def pi_norm(x, l, r):
    """Euclidean norm of the gaps inside particles l..r."""
    g = np.diff(np.asarray(x, dtype=float)[l:r + 1])
    return float(np.sqrt(np.dot(g, g)))


def _profile_from_gaps(g):
    g = g / np.sqrt(np.dot(g, g))
    z = np.concatenate([[0.0], np.cumsum(g)])
    z -= z.mean()
    return z - z.mean()


def detect_relative_blowup(snapshots, eps_ratio=0.05, eps_abs=1e-6, slope_tol=0.1, tail=TAIL):
    """Relative blow-up sets of the terminal segment of a trajectory.

    ``snapshots`` is a sequence of configurations or (t, configuration) pairs.
    Gap i is a candidate when its ratio to every other gap stays bounded over the
    tail; maximal consecutive runs of candidates whose ratios to the boundary gaps
    tend to zero are reported, provided at least one of their gaps is below eps_abs
    (a bounded ratio to a vanishing gap then forces every gap of the run to vanish).
    """
    th = Thresholds(eps_ratio, eps_abs, slope_tol, tail)
    g = _tail_gaps(snapshots, tail)
    ng = g.shape[1]
    n = ng + 1
    decreasing = np.all(np.diff(g, axis=0) <= 0, axis=0)

    candidate = ~_growing_ratios(g, th).any(axis=1)

    sets = []
    for l_gap, r_gap in _ranges(candidate):
        jset = list(range(l_gap, r_gap + 1))
        if not any(g[-1, i] < eps_abs and decreasing[i] for i in jset):
            continue
        l, r = l_gap, r_gap + 1
        bnd = [j for j in (l - 1, r) if 0 <= j <= ng - 1]
        if any(g[-1, i] / g[-1, j] >= eps_ratio for i in jset for j in bnd):
            continue
        sub = g[:, l_gap:r_gap + 1]
        gam = np.mean(sub[:, :, None] / sub[:, None, :], axis=0)
        pis = np.sqrt(np.sum(sub**2, axis=1))
        try:
            z, conv = limiting_profile(snapshots, (l, r), tail=tail), True
        except NonConvergentProfile as exc:
            z, conv = exc.last_profile, False
        sets.append(BlowUpSet(l, r, gam, pis, z, th, conv))
    assert all(s.r < n for s in sets)
    return sets


def limiting_profile(snapshots, set_range, tail=TAIL, osc_tol=0.1):
    """Z with gaps = limit of gap / Pi_I over the tail, centered, unit gap norm.

    Raises NonConvergentProfile when a normalized gap varies by more than
    ``osc_tol`` (relative) over the tail; the last normalized profile is attached.
    """
    l, r = set_range
    if not 0 <= l < r:
        raise DomainError(f"invalid set range {set_range}")
    g = _tail_gaps(snapshots, tail)[:, l:r]
    norm = g / np.sqrt(np.sum(g**2, axis=1))[:, None]
    last = norm[-1]
    z = _profile_from_gaps(last)
    osc = np.max(np.abs(norm - last) / last)
    if osc > osc_tol:
        raise NonConvergentProfile(f"normalized gaps oscillate by {osc:.1%} over the tail", z)
    return z


def detect_weak_blowup(result, gap_tol=None, tail_fraction=0.1):
    """Maximal runs of gaps whose minimum over the final recorded stretch is below gap_tol.

    ``gap_tol`` defaults to 1e-4 times the initial scale of the run.
    """
    snaps = result.snapshots
    if gap_tol is None:
        gap_tol = 1e-4 * getattr(result, "initial_scale", 1.0)
    xs = np.array([np.asarray(x, dtype=float) for _, x in snaps])
    k = max(1, int(np.ceil(tail_fraction * len(xs))))
    gaps = np.diff(xs[-k:], axis=1)
    mins = gaps.min(axis=0)
    sets = [(a, b + 1) for a, b in _ranges(mins < gap_tol)]
    return WeakBlowUpReport(sets, float(snaps[-1][0]), mins, gap_tol)


def rescale_trajectory(snapshots, set_range):
    """Snapshots centered on the set's mean and divided by its Pi norm.

    Particles outside the set are rescaled too and typically run off to infinity.
    """
    l, r = set_range
    out = []
    for s in snapshots:
        t, x = s if isinstance(s, tuple) else (None, s)
        x = np.asarray(x, dtype=float)
        c = x[l:r + 1].mean()
        out.append((t, (x - c) / pi_norm(x, l, r)))
    return out
