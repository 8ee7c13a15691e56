"""Time integration of dX/dt = -grad F(X).

The workhorse is implicit Euler with a Newton inner solve (one step of the
minimizing-movement scheme); explicit RK4 is kept as a reference integrator.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import core
from .errors import DomainError, NotConvergedError, NumericalOverflowError
from .initial import InitialProfile

log = logging.getLogger(__name__)

# tolerance of the minimizing-movement check on accepted steps
JKO_SLACK = 1e-9


@dataclass(frozen=True)
class LogParams:
    """Logarithmic (m = 1) functional; ``pairs`` selects the pair-sum convention."""

    chi: float
    n: int
    pairs: str = "ordered"

    def __post_init__(self):
        if not self.chi >= 0:
            raise DomainError(f"chi must be >= 0, got {self.chi}")
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"n must be an integer >= 2, got {self.n}")
        core._pair_factor(self.pairs)

    m = 1.0
    alpha = 0.0


class Functional:
    """Bundle of energy, gradient and Hessian for one parameter set.

    ``scale`` multiplies the whole functional, which is the same as measuring
    time in units of 1/scale along the gradient flow.
    """

    def __init__(self, params, scale=1.0):
        self.params = params
        self.scale = float(scale)
        self.is_log = isinstance(params, LogParams)

    @property
    def m(self):
        return self.params.m

    def energy(self, x):
        if self.is_log:
            return self.scale * core.energy_log(x, self.params.chi, self.params.pairs)
        return self.scale * core.energy(x, self.params)

    def breakdown(self, x):
        """(internal, interaction term, total)."""
        if self.is_log:
            u = -float(np.sum(np.log(core.gaps(x))))
            f = core.energy_log(x, self.params.chi, self.params.pairs)
            # energy_log = U + chi * pair log sum
            return self.scale * u, self.scale * (f - u), self.scale * f
        b = core.energy_breakdown(x, self.params)
        return self.scale * b.internal, self.scale * b.interaction, self.scale * b.total

    def gradient(self, x):
        if self.is_log:
            return self.scale * core.gradient_log(x, self.params.chi, self.params.pairs)
        return self.scale * core.gradient(x, self.params)

    def hessian(self, x):
        if self.is_log:
            return self.scale * core.hessian_log(x, self.params.chi, self.params.pairs)
        return self.scale * core.hessian(x, self.params)

    def deficit(self, x):
        """H at Y = X/|X| for the alpha = 0 part; NaN for the logarithmic case."""
        if self.is_log:
            return float("nan")
        y = np.asarray(x) / np.linalg.norm(x)
        return self.scale**2 * core.deficit_H(y, self.params.with_(alpha=0.0))

    def moment(self, x):
        if self.is_log:
            return core.second_moment(x)
        return core.moment_power(x, self.params.m)


def _functional(p):
    return p if isinstance(p, Functional) else Functional(p)


CHI_CONVENTIONS = ("discrete", "mass")


def mass_chi(chi, n, m):
    """Discrete coefficient equivalent to a mass-normalized chi with an unordered pair sum.

    chi_discrete = chi * N^(m-2) / 2.  Paired with the time unit N^(m-1).
    """
    return chi * float(n) ** (m - 2.0) / 2.0


@dataclass(frozen=True)
class NewtonOptions:
    max_iters: int = 50
    tol: float = 1e-10
    damping: bool = True
    max_halvings: int = 60


@dataclass(frozen=True)
class StopOptions:
    """Blow-up declaration thresholds. ``gap_min=None`` means 1e-9 times the initial scale."""

    gap_min: Optional[float] = None
    dt_min: float = 1e-10


@dataclass(frozen=True)
class RunSpec:
    params: Union[core.ModelParams, LogParams]
    initial: InitialProfile
    dt_schedule: tuple = ((math.inf, 0.05),)
    t_max: float = 100.0
    newton: NewtonOptions = NewtonOptions()
    stop: StopOptions = StopOptions()
    record_every: int = 1
    dt_growth: float = 1.3
    chi_convention: str = "discrete"

    def __post_init__(self):
        if self.chi_convention not in CHI_CONVENTIONS:
            raise DomainError(f"chi_convention must be one of {CHI_CONVENTIONS}")
        if self.chi_convention == "mass" and isinstance(self.params, LogParams):
            raise DomainError("chi_convention 'mass' applies to the power-law functional only")
        last = -math.inf
        if not self.dt_schedule:
            raise DomainError("dt_schedule must not be empty")
        for t_until, dt in self.dt_schedule:
            if not dt > 0:
                raise DomainError(f"dt must be positive, got {dt}")
            if not t_until > last:
                raise DomainError("dt_schedule t_until values must be strictly increasing")
            last = t_until
        if not self.t_max > 0:
            raise DomainError("t_max must be positive")
        if self.stop.gap_min is not None and not self.stop.gap_min > 0:
            raise DomainError("gap_min must be positive")
        if not self.stop.dt_min > 0:
            raise DomainError("dt_min must be positive")
        if self.record_every < 1:
            raise DomainError("record_every must be >= 1")
        if self.initial.n != self.params.n:
            raise DomainError(f"initial profile has n = {self.initial.n}, model has n = {self.params.n}")

    def effective_params(self):
        """Parameters of the functional actually integrated."""
        if self.chi_convention == "mass":
            p = self.params
            return p.with_(chi=mass_chi(p.chi, p.n, p.m))
        return self.params

    def time_scale(self):
        if self.chi_convention == "mass":
            return float(self.params.n) ** (1.0 - self.params.m)
        return 1.0

    def functional(self):
        return Functional(self.effective_params(), self.time_scale())

    def scheduled_dt(self, t):
        for t_until, dt in self.dt_schedule:
            if t < t_until:
                return dt
        return self.dt_schedule[-1][1]

    def next_boundary(self, t):
        for t_until, _ in self.dt_schedule:
            if t < t_until:
                return t_until
        return math.inf


@dataclass(frozen=True)
class StepResult:
    next: np.ndarray
    newton_iters: int
    converged: bool
    residual_norm: float


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    dt: float
    F: float
    U: float
    W: float
    f2: float
    fmp1: float
    min_gap: float
    H: float
    newton_iters: int


@dataclass(frozen=True)
class Completed:
    t_max: float
    kind = "completed"


@dataclass(frozen=True)
class BlowUp:
    t_estimate: float
    last_dt: float
    min_gap: float
    reason: str = ""
    kind = "blowup"


@dataclass(frozen=True)
class Failure:
    reason: str
    kind = "failure"


@dataclass
class SimulationResult:
    rows: list
    snapshots: list  # (t, positions)
    termination: object
    params: object = None
    initial_scale: float = 1.0
    time_scale: float = 1.0
    # per accepted step: t_new, dt, F_old, F_new, |dX|^2/(2 dt)
    steps: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))

    @property
    def maximal_time_estimate(self):
        if isinstance(self.termination, BlowUp):
            return self.termination.t_estimate
        return math.inf

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def times(self):
        return np.array([t for t, _ in self.snapshots])

    def jko_excess(self):
        """Max over steps of F_new + |dX|^2/(2dt) - F_old - 1e-9 max(1, |F_old|). <= 0 means all pass."""
        if len(self.steps) == 0:
            return -math.inf
        s = self.steps
        return float(np.max(s[:, 3] + s[:, 4] - s[:, 2] - 1e-9 * np.maximum(1.0, np.abs(s[:, 2]))))


def implicit_step(x, dt, p, newton=NewtonOptions(), guess=None):
    """Solve Z - X + dt grad F(Z) = 0 by Newton's method.

    The Jacobian I + dt Hess F(Z) is assembled analytically.  Iterates that
    break the ordering are halved (``damping``).  Raises NotConvergedError.
    """
    f = _functional(p)
    x = np.asarray(x, dtype=float)
    core.gaps(x)
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    z = np.array(guess if guess is not None else x, dtype=float)
    if np.any(np.diff(z) <= 0):
        z = x.copy()
    eye = np.eye(x.size)
    res_norm = math.inf
    for it in range(newton.max_iters + 1):
        try:
            r = z - x + dt * f.gradient(z)
        except NumericalOverflowError as exc:
            raise NotConvergedError(str(exc), res_norm, it) from exc
        res_norm = float(np.linalg.norm(r))
        if res_norm <= newton.tol:
            z = core.center(z)
            return StepResult(z, it, True, res_norm)
        if it == newton.max_iters:
            break
        try:
            jac = eye + dt * f.hessian(z)
            delta = np.linalg.solve(jac, -r)
        except (NumericalOverflowError, np.linalg.LinAlgError) as exc:
            raise NotConvergedError(f"Newton linear solve failed: {exc}", res_norm, it) from exc
        if not np.all(np.isfinite(delta)):
            raise NotConvergedError("non-finite Newton update", res_norm, it)
        lam = 1.0
        for _ in range(newton.max_halvings + 1):
            trial = z + lam * delta
            if np.all(np.diff(trial) > 0):
                break
            if not newton.damping:
                raise NotConvergedError("Newton iterate broke the ordering", res_norm, it)
            lam *= 0.5
        else:
            raise NotConvergedError("damping exhausted", res_norm, it)
        z = trial
    raise NotConvergedError(f"no convergence in {newton.max_iters} iterations", res_norm, newton.max_iters)


def explicit_step_rk4(x, dt, p):
    """Classical RK4 step of dX/dt = -grad F, re-centered."""
    f = _functional(p)
    x = np.asarray(x, dtype=float)
    k1 = -f.gradient(x)
    k2 = -f.gradient(x + 0.5 * dt * k1)
    k3 = -f.gradient(x + 0.5 * dt * k2)
    k4 = -f.gradient(x + dt * k3)
    out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return core.center(out)


def integrate_rk4(x0, dt, n_steps, p, record_every=1):
    """Fixed-step RK4 trajectory; returns (times, positions) arrays of recorded states."""
    x = core.center(x0)
    times, traj = [0.0], [x]
    for k in range(1, n_steps + 1):
        x = explicit_step_rk4(x, dt, p)
        if k % record_every == 0 or k == n_steps:
            times.append(k * dt)
            traj.append(x)
    return np.array(times), np.array(traj)


def _row(f, x, t, dt, iters):
    u, w, total = f.breakdown(x)
    g = np.diff(x)
    try:
        h = f.deficit(x)
    except NumericalOverflowError:
        h = float("nan")
    return DiagnosticsRow(t, dt, total, u, w, core.second_moment(x), f.moment(x),
                          float(g.min()), h, iters)


def simulate(spec):
    """Run the implicit Euler scheme along ``spec.dt_schedule``.

    On Newton failure, or when the Newton root violates the minimizing-movement
    inequality F(Z) + |Z - X|^2/(2 dt) <= F(X), dt is halved and the step retried; after a success dt grows
    by ``dt_growth`` up to the scheduled value.  Blow-up is declared when dt drops
    below ``stop.dt_min`` or the smallest gap below ``stop.gap_min``.
    """
    f = spec.functional()
    x = core.center(spec.initial.positions())
    scale = float(np.max(np.abs(x)))
    gap_min = spec.stop.gap_min if spec.stop.gap_min is not None else 1e-9 * scale
    newton = spec.newton

    t = 0.0
    rows = [_row(f, x, t, 0.0, 0)]
    snaps = [(t, x)]
    steps = []
    dt = spec.scheduled_dt(t)
    accepted = 0
    last_iters = None
    termination = None
    f_old = rows[0].F
    recorded_last = True

    while t < spec.t_max * (1 - 1e-14):
        # absorb round-off so that schedule boundaries are hit exactly
        b = spec.next_boundary(t)
        if b - t <= 1e-9 * spec.scheduled_dt(t):
            t = b
            if t >= spec.t_max * (1 - 1e-14):
                break
        dt = min(dt, spec.scheduled_dt(t))
        h = min(dt, spec.t_max - t, spec.next_boundary(t) - t)
        guess = None
        if last_iters is not None and last_iters <= 3:
            try:
                guess = x - h * f.gradient(x)
            except NumericalOverflowError:
                guess = None
        try:
            st = implicit_step(x, h, f, newton, guess=guess)
        except NotConvergedError as exc:
            dt = h / 2.0
            last_iters = None
            log.debug("Newton failed at t = %g, dt -> %g", t, dt)
            if dt < spec.stop.dt_min:
                termination = BlowUp(t, h, float(np.diff(x).min()), f"Newton failed at dt < dt_min: {exc}")
                break
            continue
        z = st.next
        try:
            f_new = f.energy(z)
        except NumericalOverflowError:
            f_new = math.nan
        if not np.isfinite(f_new) or not np.all(np.isfinite(z)):
            if float(np.diff(z).min()) >= gap_min:
                termination = Failure(f"non-finite state at t = {t}, dt = {h}")
                break
        move = float(np.sum((z - x) ** 2)) / (2.0 * h)
        if np.isfinite(f_new) and f_new + move > f_old + JKO_SLACK * max(1.0, abs(f_old)):
            # Newton reached a root that does not minimize F(Z) + |Z - X|^2 / (2 dt); retry smaller
            dt = h / 2.0
            last_iters = None
            log.debug("spurious implicit root at t = %g, dt -> %g", t, dt)
            if dt < spec.stop.dt_min:
                termination = BlowUp(t, h, float(np.diff(x).min()), "no minimizing implicit step above dt_min")
                break
            continue
        t_new = t + h
        steps.append((t_new, h, f_old, f_new, move))
        x, t, f_old = z, t_new, f_new
        accepted += 1
        last_iters = st.newton_iters
        mg = float(np.diff(x).min())
        recorded_last = False
        if accepted % spec.record_every == 0:
            rows.append(_row(f, x, t, h, st.newton_iters))
            snaps.append((t, x))
            recorded_last = True
        if mg < gap_min:
            termination = BlowUp(t, h, mg, f"min gap {mg:.3g} below gap_min {gap_min:.3g}")
            break
        dt = min(dt * spec.dt_growth, spec.scheduled_dt(t))

    if termination is None:
        termination = Completed(spec.t_max)
    if not recorded_last:
        try:
            rows.append(_row(f, x, t, steps[-1][1] if steps else 0.0, last_iters or 0))
            snaps.append((t, x))
        except NumericalOverflowError:
            pass
    log.info("simulation finished: %s at t = %g after %d steps", termination.kind, t, accepted)
    return SimulationResult(rows, snaps, termination, spec.effective_params(), scale,
                            spec.time_scale(), np.array(steps) if steps else np.zeros((0, 5)))


def simulate_log(spec):
    """Logarithmic (m = 1) variant of ``simulate``; ``spec.params`` must be LogParams.

    The result additionally carries ``df2dt``: finite-difference slopes of f_2
    between consecutive recorded rows, (t_mid, slope) pairs.
    """
    if not isinstance(spec.params, LogParams):
        raise DomainError("simulate_log needs LogParams")
    res = simulate(spec)
    t = res.column("t")
    f2 = res.column("f2")
    if t.size > 1:
        res.df2dt = np.column_stack([(t[1:] + t[:-1]) / 2, np.diff(f2) / np.diff(t)])
    else:
        res.df2dt = np.zeros((0, 2))
    return res
