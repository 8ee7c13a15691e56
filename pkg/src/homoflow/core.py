"""Evaluation kernels for the discrete homogeneous free energy of N ordered particles.

The functional is

    F(X) = 1/(m-1) sum_i (X_{i+1}-X_i)^(1-m)
           - chi/(m-1) sum_{i != j} |X_j-X_i|^(1-m)
           + alpha/2 |X|^2

where the pair sum runs over *ordered* pairs (each unordered pair counted twice).
All functions take plain numpy arrays of positions and are pure.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalOverflowError

CENTER_RTOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Exponent and coefficients of one functional instance."""

    m: float
    chi: float
    alpha: float = 0.0
    n: int = 2

    def __post_init__(self):
        if not (np.isfinite(self.m) and self.m > 1.0):
            raise DomainError(f"m must be > 1, got {self.m}")
        if not (np.isfinite(self.chi) and self.chi >= 0.0):
            raise DomainError(f"chi must be >= 0, got {self.chi}")
        if not np.isfinite(self.alpha):
            raise DomainError(f"alpha must be finite, got {self.alpha}")
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"n must be an integer >= 2, got {self.n}")

    def with_(self, **changes):
        d = dict(m=self.m, chi=self.chi, alpha=self.alpha, n=self.n)
        d.update(changes)
        return ModelParams(**d)


@dataclass(frozen=True)
class EnergyBreakdown:
    """Internal, interaction and quadratic parts of the energy.

    ``interaction`` is the full subtracted term chi/(m-1) * sum_{i!=j} |X_j-X_i|^(1-m),
    so that ``total = internal - interaction + quadratic``.
    """

    internal: float
    interaction: float
    quadratic: float
    total: float


def as_positions(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("positions must be a 1-D sequence of at least 2 reals")
    if not np.all(np.isfinite(x)):
        raise DomainError("positions must be finite")
    return x


def gaps(x):
    """Consecutive differences; raises DomainError unless strictly positive."""
    x = as_positions(x)
    g = np.diff(x)
    if not np.all(g > 0):
        i = int(np.argmin(g))
        raise DomainError(f"positions must be strictly increasing (gap {i} = {g[i]!r})")
    return g


def is_centered(x, rtol=CENTER_RTOL):
    x = np.asarray(x, dtype=float)
    return abs(x.sum()) <= rtol * max(1.0, float(np.max(np.abs(x))))


def validate_configuration(x):
    """Check both Configuration invariants (strict ordering and centering)."""
    gaps(x)
    if not is_centered(x):
        raise DomainError(f"configuration is not centered (sum = {np.sum(x)!r})")
    return np.asarray(x, dtype=float)


def center(x):
    """Subtract the mean. Gaps are unchanged."""
    x = as_positions(x)
    gaps(x)
    c = x - x.mean()
    # one more pass removes the residual left by the first subtraction
    return c - c.mean()


def dilate(x, lam):
    if not lam > 0:
        raise DomainError(f"dilation factor must be positive, got {lam}")
    return lam * as_positions(x)


def second_moment(x):
    """f_2 = |X|^2 / 2."""
    x = np.asarray(x, dtype=float)
    return 0.5 * float(np.dot(x, x))


def moment_power(x, m):
    """f_{m+1} = |X|^(m+1) / (m+1)."""
    x = np.asarray(x, dtype=float)
    return float(np.dot(x, x)) ** ((m + 1.0) / 2.0) / (m + 1.0)


def _pair_distances(x):
    """Upper-triangle pair distances X_j - X_i, j > i, as a flat array."""
    iu, ju = np.triu_indices(x.size, k=1)
    return x[ju] - x[iu]


def _finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericalOverflowError(f"non-finite {what}; a gap is too small to evaluate")
    return value


def energy_breakdown(x, p):
    g = gaps(x)
    x = np.asarray(x, dtype=float)
    e = 1.0 - p.m
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        internal = float(np.sum(g**e)) / (p.m - 1.0)
        interaction = p.chi * 2.0 * float(np.sum(_pair_distances(x) ** e)) / (p.m - 1.0)
    quadratic = p.alpha * second_moment(x)
    total = internal - interaction + quadratic
    _finite([internal, interaction, total], "energy")
    return EnergyBreakdown(internal, interaction, quadratic, total)


def energy(x, p):
    return energy_breakdown(x, p).total


def _pair_inverse_powers(x, power):
    """Matrix |X_j - X_i|^(-power), zero on the diagonal."""
    d = np.abs(np.subtract.outer(x, x))
    np.fill_diagonal(d, 1.0)
    with np.errstate(over="ignore", divide="ignore"):
        k = d ** (-power)
    np.fill_diagonal(k, 0.0)
    return k


def _gradient(x, m, chi, alpha):
    g = gaps(x)
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        gm = g ** (-m)
        grad = np.zeros_like(x)
        grad[:-1] += gm
        grad[1:] -= gm
        k = _pair_inverse_powers(x, m)
        # sum_j sign(j-i) |X_j-X_i|^(-m) = (upper row sum) - (lower row sum)
        signed = np.triu(k).sum(axis=1) - np.tril(k).sum(axis=1)
        grad -= 2.0 * chi * signed
    if alpha:
        grad += alpha * x
    return _finite(grad, "gradient")


def gradient(x, p):
    """Euclidean gradient of the energy (including the +alpha X term).

    The gradient flow velocity is the negation of this vector.
    """
    return _gradient(x, p.m, p.chi, p.alpha)


def _hessian(x, m, chi, alpha):
    g = gaps(x)
    x = np.asarray(x, dtype=float)
    n = x.size
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        a = m * g ** (-m - 1.0)
        h = np.zeros((n, n))
        idx = np.arange(n - 1)
        h[idx, idx] += a
        h[idx + 1, idx + 1] += a
        h[idx, idx + 1] -= a
        h[idx + 1, idx] -= a
        k = m * _pair_inverse_powers(x, m + 1.0)
        h += 2.0 * chi * k
        h[np.diag_indices(n)] -= 2.0 * chi * k.sum(axis=1)
    if alpha:
        h[np.diag_indices(n)] += alpha
    return _finite(h, "hessian")


def hessian(x, p):
    """Analytic Hessian: tridiagonal internal part, dense interaction part, alpha*I."""
    return _hessian(x, p.m, p.chi, p.alpha)


def _pair_factor(pairs):
    if pairs == "ordered":
        return 2.0
    if pairs == "unordered":
        return 1.0
    raise DomainError(f"pairs must be 'ordered' or 'unordered', got {pairs!r}")


def energy_log(x, chi, pairs="ordered"):
    """Logarithmic (m = 1) energy -sum log(gaps) + chi sum_{i!=j} log|X_j - X_i|.

    ``pairs="unordered"`` sums over i < j only, which halves the interaction.
    """
    g = gaps(x)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        val = -float(np.sum(np.log(g))) + chi * _pair_factor(pairs) * float(
            np.sum(np.log(_pair_distances(x)))
        )
    return _finite(val, "energy")


def gradient_log(x, chi, pairs="ordered"):
    # identical in form to the power-law gradient with m = 1
    return _gradient(x, 1.0, chi * _pair_factor(pairs) / 2.0, 0.0)


def hessian_log(x, chi, pairs="ordered"):
    return _hessian(x, 1.0, chi * _pair_factor(pairs) / 2.0, 0.0)


def log_moment_slope(n, chi, pairs="ordered"):
    """Exact d/dt (|X|^2/2) along the m = 1 flow: -X . grad F_1(X), a constant.

    Equals (N-1) - chi * N(N-1) for ordered pairs and (N-1)(1 - chi N/2) for unordered.
    """
    return (n - 1) - chi * _pair_factor(pairs) * n * (n - 1) / 2.0


def deficit_H(y, p, tol=1e-10):
    """|grad F(Y)|^2 - ((m-1) F(Y))^2 at a unit-norm configuration Y (alpha must be 0)."""
    y = as_positions(y)
    if p.alpha != 0:
        raise DomainError("deficit_H is defined for alpha = 0")
    norm = float(np.linalg.norm(y))
    if abs(norm - 1.0) > tol:
        raise DomainError(f"deficit_H needs |Y| = 1, got {norm!r}")
    gr = gradient(y, p)
    f = energy(y, p)
    return float(np.dot(gr, gr)) - ((p.m - 1.0) * f) ** 2
