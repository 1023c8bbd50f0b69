"""Extremile weighting calculus.

The order-tau extremile weights quantile levels with the density ``J_tau`` of
the distribution function ``H_tau`` on [0, 1]:

    H_tau(t) = 1 - (1 - t)**s(tau)    for tau <= 1/2
    H_tau(t) = t**r(tau)              for tau >= 1/2

with r(tau) = log(1/2) / log(tau) and s(tau) = r(1 - tau).  Both branches give
the identity at tau = 1/2; the upper branch is used there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import DomainError, EvaluationError
from .quadrature import DEFAULT_NODES, IntegrationGrid, make_grid

_LOG_HALF = math.log(0.5)


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0, 1), got {tau!r}")
    return tau


def r_exponent(tau: float) -> float:
    """r(tau) = log(1/2)/log(tau); equals 1 at tau = 1/2."""
    tau = _check_tau(tau)
    return _LOG_HALF / math.log(tau)


def s_exponent(tau: float) -> float:
    """s(tau) = r(1 - tau)."""
    tau = _check_tau(tau)
    return _LOG_HALF / math.log1p(-tau)


@dataclass(frozen=True)
class WeightMeasure:
    """The pair (H_tau, J_tau) at a fixed level.

    Only the exponent of the active branch is meaningful: ``r`` when
    ``tau >= 1/2`` and ``s`` otherwise.  Both are >= 1 on their branch, so
    ``J_tau`` is bounded on [0, 1].
    """

    tau: float

    def __post_init__(self):
        object.__setattr__(self, "tau", _check_tau(self.tau))

    @property
    def upper(self) -> bool:
        return self.tau >= 0.5

    @property
    def r(self) -> float:
        return r_exponent(self.tau)

    @property
    def s(self) -> float:
        return s_exponent(self.tau)

    @property
    def exponent(self) -> float:
        return self.r if self.upper else self.s

    def H(self, t):
        t = _check_t(t)
        if self.upper:
            return np.power(t, self.r)
        with np.errstate(divide="ignore"):
            return -np.expm1(self.s * np.log1p(-t))

    def J(self, t):
        t = _check_t(t)
        e = self.exponent
        base = t if self.upper else 1.0 - t
        return e * np.power(base, e - 1.0)


def _check_t(t):
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("t must lie in [0, 1]")
    return arr if arr.ndim else float(arr)


def h_weight(t, tau: float):
    """Distribution function H_tau evaluated at ``t`` (scalar or array)."""
    return WeightMeasure(tau).H(t)


def j_weight(t, tau: float):
    """Weight density J_tau = dH_tau/dt evaluated at ``t``."""
    return WeightMeasure(tau).J(t)


def sample_extremile(ys, tau: float) -> float:
    """L-statistic estimate of the order-``tau`` extremile of a sample.

    Returns sum_i {H(i/n) - H((i-1)/n)} y_(i) over ascending order statistics.

    >>> sample_extremile([1.0, 2.0, 3.0], 0.5)
    2.0
    """
    y = np.asarray(ys, dtype=float).ravel()
    if y.size == 0:
        raise DomainError("sample_extremile needs at least one value")
    if not np.all(np.isfinite(y)):
        raise DomainError("sample contains non-finite values")
    return _extremile_sorted(np.sort(y), tau)


def _extremile_sorted(y_sorted: np.ndarray, tau: float) -> float:
    n = y_sorted.size
    h = h_weight(np.arange(n + 1) / n, tau)
    return float(np.diff(h) @ y_sorted)


@dataclass(frozen=True)
class MomentVector:
    """m(tau) = int_0^1 b(u) J_tau(u) du for a fixed basis."""

    tau: float
    values: np.ndarray
    grid_size: int

    def __len__(self):
        return self.values.size

    def btilde(self, p: int) -> np.ndarray:
        """The pq x p matrix m(tau) (x) I_p mapping vec(alpha) to beta."""
        return np.kron(self.values[:, None], np.eye(p))


def j_weighted_rule(tau: float, m: int = DEFAULT_NODES) -> IntegrationGrid:
    """Gauss-Jacobi rule whose weights already include J_tau.

    sum_k w_k f(u_k) approximates int_0^1 f(u) J_tau(u) du and is exact for
    polynomials f of degree < 2m.  J_tau carries a non-integer power of t (or
    1 - t), which limits plain Gauss-Legendre to about 1e-6 accuracy for
    levels near 1/2; this rule absorbs that factor into the weight function.
    """
    return _j_rule(_check_tau(tau), int(m))


@lru_cache(maxsize=256)
def _j_rule(tau: float, m: int) -> IntegrationGrid:
    if m < 1:
        raise DomainError(f"need at least one node, got {m}")
    e = WeightMeasure(tau).exponent
    if tau >= 0.5:
        x, w = roots_jacobi(m, 0.0, e - 1.0)
    else:
        x, w = roots_jacobi(m, e - 1.0, 0.0)
    nodes = 0.5 * (x + 1.0)
    weights = w / w.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return IntegrationGrid("gauss-jacobi", nodes, weights)


def _moment_rule(grid, tau: float) -> IntegrationGrid:
    """Resolve a moment rule: None or "gj[:m]" gives the J-weighted rule."""
    if grid is None:
        return j_weighted_rule(tau)
    if isinstance(grid, str):
        kind, _, size = grid.partition(":")
        if kind.strip().lower() in ("gj", "gauss-jacobi"):
            return j_weighted_rule(tau, int(size) if size else DEFAULT_NODES)
    return make_grid(grid)


def basis_moment(basis, tau: float, grid: IntegrationGrid | str | int | None = None) -> MomentVector:
    """Integrate ``basis`` against J_tau.

    The default rule is :func:`j_weighted_rule` with 99 nodes.  Any grid
    accepted by :func:`extremile.quadrature.make_grid` can be given instead;
    with ``grid="uniform:n"`` this is the Riemann approximation
    n^{-1} sum_i b(i/n) J_tau(i/n).
    """
    tau = _check_tau(tau)
    g = _moment_rule(grid, tau)
    B = basis.matrix(g.nodes)
    bad = ~np.isfinite(B)
    if bad.any():
        k = int(np.argwhere(bad)[0][0])
        raise EvaluationError(
            f"basis {basis.name!r} is not finite at node u={g.nodes[k]:.6g}; "
            "enable clipping or use another integration rule"
        )
    w = g.weights if g.kind == "gauss-jacobi" else g.weights * j_weight(g.nodes, tau)
    values = w @ B
    values.setflags(write=False)
    return MomentVector(tau, values, g.size)
