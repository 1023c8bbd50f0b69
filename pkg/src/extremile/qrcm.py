"""Quantile regression with coefficients modelled as functions of the level.

The conditional quantile is q(u | x) = x' alpha b(u) with a p x q coefficient
matrix ``alpha``.  ``alpha`` is estimated by minimizing the integrated check
loss

    sum_i w_i int_0^1 rho_u(Y_i - X_i' alpha b(u)) du

on a quadrature grid.  The discretized loss is piecewise linear, so the solver
minimizes a Huber-smoothed version (quadratic on |residual| <= kappa) with a
continuation kappa_0 -> kappa_min and damped semismooth Newton steps inside each
stage.

Vectorization follows the column-stacking convention: vec(alpha) stacks the
columns alpha_1, ..., alpha_q, so that x' alpha b(u) = (b(u) (x) x)' vec(alpha).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, make_basis
from .data import LabeledData
from .errors import ConvergenceError, DomainError, EvaluationError
from .quadrature import IntegrationGrid, make_grid


def vec(alpha: np.ndarray) -> np.ndarray:
    """Stack the columns of ``alpha``."""
    return np.asarray(alpha, dtype=float).ravel(order="F")


def unvec(v: np.ndarray, p: int, q: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(p, q, order="F")


@dataclass(frozen=True)
class FitOptions:
    """Solver settings.

    Smoothing half-widths are in response units.  When ``kappa0`` or
    ``kappa_min`` is None it is set to ``kappa0_scale`` (``kappa_min_scale``)
    times the residual scale of an ordinary least-squares fit.  ``grad_tol``
    bounds the infinity norm of the score divided by sum(|w_i|).
    ``moment_rule`` selects the rule for m(tau) (None: J-weighted
    Gauss-Jacobi; see :func:`extremile.weights.basis_moment`).
    """

    grid: IntegrationGrid | str | int | None = "gl:99"
    kappa0: float | None = None
    kappa_min: float | None = None
    kappa0_scale: float = 0.1
    kappa_min_scale: float = 1e-3
    continuation_factor: float = 10.0
    max_iter: int = 500
    grad_tol: float = 1e-6
    init: str | np.ndarray = "ols"
    floor_weights: bool = False
    moment_rule: IntegrationGrid | str | int | None = None

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise DomainError("grad_tol must be positive")
        if self.kappa0 is not None and self.kappa_min is not None and not self.kappa0 >= self.kappa_min > 0:
            raise DomainError("need kappa0 >= kappa_min > 0")
        if self.continuation_factor <= 1:
            raise DomainError("continuation_factor must exceed 1")
        if self.max_iter < 1:
            raise DomainError("max_iter must be at least 1")


@dataclass(frozen=True)
class MonotonicityReport:
    fraction: float
    n_points: int
    worst: tuple[tuple[int, float, float], ...] = ()

    @property
    def ok(self) -> bool:
        return self.fraction == 0.0


@dataclass(frozen=True)
class QRCMFit:
    """Fitted coefficient matrix plus solver diagnostics."""

    alpha: np.ndarray
    basis: BasisSpec
    grid: IntegrationGrid
    weights: np.ndarray
    kappa: float
    loss: float
    grad_norm: float
    iterations: int
    nonconvex: bool
    monotonicity: MonotonicityReport
    trace: tuple[dict, ...] = field(default=(), repr=False)

    @property
    def p(self) -> int:
        return self.alpha.shape[0]

    @property
    def q(self) -> int:
        return self.alpha.shape[1]

    def quantile(self, x, u):
        return eval_quantile(self.alpha, x, u, self.basis)


def eval_quantile(alpha, x, taubar, basis: BasisSpec | str | None = None):
    """x' alpha b(u); vectorized over rows of ``x`` and levels ``taubar``."""
    basis = make_basis(basis)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 2 or alpha.shape[1] != basis.q:
        raise DomainError(f"alpha must be p x {basis.q}, got shape {alpha.shape}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != alpha.shape[0]:
        raise DomainError(f"x has {x.shape[-1]} entries but alpha has {alpha.shape[0]} rows")
    B = basis.matrix(taubar)
    out = (x @ alpha) @ B.T
    if np.ndim(taubar) == 0:
        out = out[..., 0]
    return out


class _Objective:
    """Loss, score and generalized Hessian on a fixed grid and dataset."""

    def __init__(self, X, Y, weights, basis: BasisSpec, grid: IntegrationGrid):
        self.X = X
        self.Y = Y
        self.w = weights
        self.absw = np.abs(weights)
        self.basis = basis
        self.grid = grid
        self.u = grid.nodes
        self.qw = grid.weights
        self.B = basis.matrix(self.u)
        if not np.all(np.isfinite(self.B)):
            basis.check_finite(self.u)
        self.p = X.shape[1]
        self.q = basis.q
        self._BB = (self.B[:, :, None] * self.B[:, None, :]).reshape(self.u.size, -1)
        self._XX = (X[:, :, None] * X[:, None, :]).reshape(X.shape[0], -1)

    def residuals(self, A):
        return self.Y[:, None] - (self.X @ A) @ self.B.T

    def value(self, A, kappa, R=None):
        R = self.residuals(A) if R is None else R
        tilt = (self.u - 0.5)[None, :] * R
        if kappa > 0:
            a = np.abs(R)
            huber = np.where(a <= kappa, R * R / (2.0 * kappa) + 0.5 * kappa, a)
        else:
            huber = np.abs(R)
        per_obs = (tilt + 0.5 * huber) @ self.qw
        loss = float(self.w @ per_obs)
        if not np.isfinite(loss):
            raise EvaluationError("integrated loss is not finite")
        return loss

    def indicator(self, R, kappa):
        """I(Y < q), replaced by its piecewise-linear ramp when kappa > 0."""
        if kappa > 0:
            return np.clip(0.5 - R / (2.0 * kappa), 0.0, 1.0)
        return (R < 0).astype(float)

    def score_matrix(self, R, kappa, weights=None):
        """p x q gradient of the weighted loss with respect to alpha."""
        w = self.w if weights is None else weights
        M = (self.indicator(R, kappa) - self.u[None, :]) * self.qw[None, :]
        return self.X.T @ ((w[:, None] * M) @ self.B)

    def contributions(self, R, kappa):
        """n x pq matrix of per-observation integrated scores (unweighted)."""
        M = (self.indicator(R, kappa) - self.u[None, :]) * self.qw[None, :]
        S = M @ self.B
        n = self.X.shape[0]
        return (S[:, :, None] * self.X[:, None, :]).reshape(n, self.q * self.p)

    def hessian(self, R, kappa):
        band = (np.abs(R) <= kappa) * (self.absw[:, None] * (self.qw / (2.0 * kappa))[None, :])
        C = band @ self._BB
        M = self._XX.T @ C
        p, q = self.p, self.q
        return M.reshape(p, p, q, q).transpose(2, 0, 3, 1).reshape(p * q, p * q)

    def baseline_curvature(self, scale):
        """Scaled Gram matrix of b(u) (x) X, used to regularize Newton steps."""
        G = (self.absw @ self._XX).reshape(self.p, self.p)
        Bm = (self.B * self.qw[:, None]).T @ self.B
        return np.kron(Bm, G) / scale


def _check_inputs(data, basis, weights, grid):
    if not isinstance(data, LabeledData):
        data = LabeledData(*data)
    basis = make_basis(basis)
    grid = make_grid(grid)
    if weights is None:
        weights = np.ones(data.n)
    else:
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.size != data.n:
            raise DomainError(f"expected {data.n} weights, got {weights.size}")
        if not np.all(np.isfinite(weights)):
            raise DomainError("weights must be finite")
    return data, basis, weights, grid


def _alpha(alpha, p, q):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (p, q):
        raise DomainError(f"alpha must have shape {(p, q)}, got {alpha.shape}")
    return alpha


def integrated_loss(data, alpha, basis=None, weights=None, grid=None, kappa: float = 0.0) -> float:
    """Weighted integrated check loss (a sum over observations, not a mean)."""
    data, basis, weights, grid = _check_inputs(data, basis, weights, grid)
    obj = _Objective(data.X, data.Y, weights, basis, grid)
    return obj.value(_alpha(alpha, data.p, basis.q), float(kappa))


def score(data, alpha, basis=None, weights=None, grid=None, kappa: float = 0.0) -> np.ndarray:
    """Gradient of :func:`integrated_loss` with respect to vec(alpha).

    Equals sum_i w_i int b(u) (x) X_i [I(Y_i < X_i' alpha b(u)) - u] du, with
    the indicator smoothed when ``kappa > 0``.
    """
    data, basis, weights, grid = _check_inputs(data, basis, weights, grid)
    obj = _Objective(data.X, data.Y, weights, basis, grid)
    A = _alpha(alpha, data.p, basis.q)
    return vec(obj.score_matrix(obj.residuals(A), float(kappa)))


def residual_scale(data: LabeledData) -> float:
    """Spread used to set default smoothing: sd of OLS residuals.

    Floored at 1e-4 sd(Y) so that near-interpolating data do not push the
    smoothing width down to the rounding level of the residuals.
    """
    beta, *_ = np.linalg.lstsq(data.X, data.Y, rcond=None)
    s = float(np.std(data.Y - data.X @ beta))
    sy = float(np.std(data.Y))
    floor = 1e-4 * (sy if sy > 0 else max(1.0, float(np.max(np.abs(data.Y)))))
    return max(s, floor)


def _constant_column(basis: BasisSpec, grid: IntegrationGrid) -> int | None:
    B = basis.matrix(grid.nodes)
    for j in range(basis.q):
        if np.all(B[:, j] == 1.0):
            return j
    return None


def _initial_alpha(data: LabeledData, basis: BasisSpec, grid: IntegrationGrid, init) -> np.ndarray:
    p, q = data.p, basis.q
    if not isinstance(init, str):
        return _alpha(init, p, q).copy()
    if init not in ("ols", "zero"):
        raise DomainError(f"unknown init strategy {init!r}")
    A = np.zeros((p, q))
    if init == "zero":
        return A
    j0 = _constant_column(basis, grid)
    beta, *_ = np.linalg.lstsq(data.X, data.Y, rcond=None)
    if j0 is None:
        return A
    A[:, j0] = beta
    others = [j for j in range(q) if j != j0]
    if others:
        j1 = others[0]
        slope = float(np.mean(basis.deriv_matrix(grid.nodes)[:, j1]))
        A[0, j1] = np.std(data.Y - data.X @ beta) * (1.0 if slope >= 0 else -1.0)
    return A


def _kappa_schedule(k0: float, kmin: float, factor: float) -> list[float]:
    ks = [k0]
    while ks[-1] / factor > kmin * (1 + 1e-12):
        ks.append(ks[-1] / factor)
    if ks[-1] != kmin:
        ks.append(kmin)
    return ks


def _newton_stage(obj: _Objective, A, kappa, tol, budget, wsum, reg):
    """Damped semismooth Newton on the kappa-smoothed loss.

    Returns (alpha, loss, grad_norm, iterations, converged).
    """
    p, q = A.shape
    R = obj.residuals(A)
    f = obj.value(A, kappa, R)
    g = vec(obj.score_matrix(R, kappa))
    gnorm = np.max(np.abs(g)) / wsum
    it = 0
    while gnorm >= tol and it < budget:
        it += 1
        H = obj.hessian(R, kappa) + reg
        try:
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            d = -g / np.trace(reg) * reg.shape[0]
        slope = g @ d
        if not np.isfinite(slope) or slope >= 0:
            d = -g / np.trace(reg) * reg.shape[0]
            slope = g @ d
        t = 1.0
        accepted = False
        for _ in range(60):
            A_new = A + t * unvec(d, p, q)
            R_new = obj.residuals(A_new)
            f_new = obj.value(A_new, kappa, R_new)
            if f_new <= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        A, R, f = A_new, R_new, f_new
        g = vec(obj.score_matrix(R, kappa))
        gnorm = np.max(np.abs(g)) / wsum
    return A, f, gnorm, it, gnorm < tol


def fit_qrcm(data, basis=None, weights=None, opts: FitOptions | None = None) -> QRCMFit:
    """Minimize the (weighted) integrated check loss over alpha.

    Raises DesignError for rank-deficient designs and ConvergenceError (with
    the best iterate attached) when the iteration budget runs out.
    """
    opts = opts or FitOptions()
    data, basis, weights, grid = _check_inputs(data, basis, weights, opts.grid)
    data.check_rank()
    p, q = data.p, basis.q
    if data.n <= p * q:
        warnings.warn(f"n={data.n} does not exceed p*q={p * q}; alpha may be poorly determined",
                      stacklevel=2)
    nonconvex = bool(np.any(weights < 0))
    if nonconvex and opts.floor_weights:
        weights = np.maximum(weights, 0.0)
        nonconvex = False
    wsum = float(np.sum(np.abs(weights)))
    if wsum == 0.0:
        raise DomainError("all weights are zero")

    scale = residual_scale(data)
    k0 = opts.kappa0 if opts.kappa0 is not None else opts.kappa0_scale * scale
    kmin = opts.kappa_min if opts.kappa_min is not None else opts.kappa_min_scale * scale
    k0 = max(k0, kmin)

    if nonconvex and isinstance(opts.init, str):
        start = fit_qrcm(data, basis, None, opts)
        A = start.alpha.copy()
        trace = list(start.trace)
        used = start.iterations
    else:
        A = _initial_alpha(data, basis, grid, opts.init)
        trace = []
        used = 0

    obj = _Objective(data.X, data.Y, weights, basis, grid)
    schedule = _kappa_schedule(k0, kmin, opts.continuation_factor)
    reg = 1e-6 * obj.baseline_curvature(scale)
    f = gnorm = np.nan
    converged = False
    for stage, kappa in enumerate(schedule):
        final = stage == len(schedule) - 1
        tol = opts.grad_tol if final else max(opts.grad_tol, 1e-4)
        A, f, gnorm, it, converged = _newton_stage(obj, A, kappa, tol, opts.max_iter - used, wsum, reg)
        used += it
        trace.append({"kappa": kappa, "iterations": it, "grad_norm": float(gnorm), "loss": float(f)})
        if used >= opts.max_iter and not converged:
            break
    if not converged:
        raise ConvergenceError(
            f"no convergence after {used} Newton iterations (gradient norm {gnorm:.3g}, "
            f"tolerance {opts.grad_tol:.3g})",
            best=A,
            grad_norm=float(gnorm),
        )
    A.setflags(write=False)
    mono = check_monotonicity(A, basis, data.X, grid)
    return QRCMFit(
        alpha=A,
        basis=basis,
        grid=grid,
        weights=weights,
        kappa=float(schedule[-1]),
        loss=float(f),
        grad_norm=float(gnorm),
        iterations=used,
        nonconvex=nonconvex,
        monotonicity=mono,
        trace=tuple(trace),
    )


def check_monotonicity(alpha, basis=None, xs=None, grid=None, n_worst: int = 5) -> MonotonicityReport:
    """Share of (x, u) grid points where dq(u|x)/du = x' alpha b'(u) <= 0."""
    basis = make_basis(basis)
    grid = make_grid(grid)
    alpha = np.asarray(alpha, dtype=float)
    xs = np.atleast_2d(np.asarray(xs, dtype=float)) if xs is not None else np.eye(alpha.shape[0])[:1]
    slopes = (xs @ alpha) @ basis.deriv_matrix(grid.nodes).T
    bad = slopes <= 0
    worst = ()
    if bad.any():
        flat = np.argsort(slopes, axis=None)[:n_worst]
        rows, cols = np.unravel_index(flat, slopes.shape)
        worst = tuple(
            (int(i), float(grid.nodes[k]), float(slopes[i, k]))
            for i, k in zip(rows, cols) if slopes[i, k] <= 0
        )
    return MonotonicityReport(float(bad.mean()), int(bad.size), worst)
