"""Sandwich covariance estimates for the supervised and semi-supervised fits.

For the supervised estimator

    cov(beta_tau) ~= btilde' H^{-1} Sigma H^{-1} btilde / n,

where btilde = m(tau) (x) I_p, H is the density-weighted Gram matrix of
b(u) (x) X and Sigma the outer-product average of per-observation scores.  The
semi-supervised estimator replaces Sigma by Sigma_rho, which removes the part
of the score explained by Z and adds back a share proportional to n/(n+N).
All covariances returned here already include the 1/n factor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ._linalg import check_gram
from .basis import BasisSpec, make_basis
from .data import LabeledData, UnlabeledData, ZMap, make_zmap
from .errors import DomainError, SchemaError
from .estimators import ExtremileFit, _has_intercept
from .qrcm import _Objective
from .quadrature import IntegrationGrid, make_grid
from .weights import MomentVector, basis_moment


def _slopes(X, alpha, basis: BasisSpec, grid: IntegrationGrid) -> np.ndarray:
    return (X @ alpha) @ basis.deriv_matrix(grid.nodes).T


def _hessian(data: LabeledData, alpha, basis, grid, eps=None) -> tuple[np.ndarray, int]:
    alpha = np.asarray(alpha, dtype=float)
    if eps is None:
        sy = float(np.std(data.Y))
        eps = 1e-3 * sy if sy > 0 else 1e-3
    slopes = _slopes(data.X, alpha, basis, grid)
    floored = slopes < eps
    inv = grid.weights[None, :] / np.where(floored, eps, slopes)
    B = basis.matrix(grid.nodes)
    BB = (B[:, :, None] * B[:, None, :]).reshape(B.shape[0], -1)
    XX = (data.X[:, :, None] * data.X[:, None, :]).reshape(data.n, -1)
    p, q = data.p, basis.q
    M = XX.T @ (inv @ BB) / data.n
    H = M.reshape(p, p, q, q).transpose(2, 0, 3, 1).reshape(p * q, p * q)
    H = 0.5 * (H + H.T)
    check_gram(H, "Hessian estimate", "try a basis with fewer functions")
    return H, int(floored.sum())


def hessian_hat(data, alpha, basis=None, grid=None, eps: float | None = None) -> np.ndarray:
    """n^{-1} sum_i int (b (x) X_i)(b (x) X_i)' / (X_i' alpha b'(u)) du.

    Slopes below ``eps`` (default 1e-3 sd(Y)) are replaced by ``eps``; use
    :func:`sandwich_parts` to see how many grid points were floored.
    """
    data = data if isinstance(data, LabeledData) else LabeledData(*data)
    return _hessian(data, alpha, make_basis(basis), make_grid(grid), eps)[0]


def score_contributions(data, alpha, basis=None, grid=None, kappa: float = 0.0) -> np.ndarray:
    """Row i is int b(u) (x) X_i [I(Y_i < X_i' alpha b(u)) - u] du.

    ``kappa > 0`` uses the smoothed indicator of the fitting objective.
    """
    data = data if isinstance(data, LabeledData) else LabeledData(*data)
    basis = make_basis(basis)
    obj = _Objective(data.X, data.Y, np.ones(data.n), basis, make_grid(grid))
    A = np.asarray(alpha, dtype=float)
    return obj.contributions(obj.residuals(A), float(kappa))


def sigma_hat(scores) -> np.ndarray:
    """Average outer product of the score rows."""
    S = np.atleast_2d(np.asarray(scores, dtype=float))
    return S.T @ S / S.shape[0]


def a_hat(scores, labeled_z) -> np.ndarray:
    """Least-squares coefficients (d x pq) of the scores on Z."""
    S = np.atleast_2d(np.asarray(scores, dtype=float))
    Zl = np.atleast_2d(np.asarray(labeled_z, dtype=float))
    G = Zl.T @ Zl
    check_gram(G, "Z Gram matrix")
    return np.linalg.solve(G, Zl.T @ S)


def sigma_rho_hat(scores, labeled_z, unlabeled_z, scale_unlabeled: bool = True) -> np.ndarray:
    """Score covariance for the semi-supervised fit.

    W_i = S_i - c A'Z_i over labeled rows and V_i = c A'Z_i over unlabeled
    rows, c = N/(n+N).  The result is n^{-1} sum W W' + rho N^{-1} sum V V'
    with rho = n/N, which matches the limiting covariance of the weighted
    estimator.  ``scale_unlabeled=False`` drops rho (unit weight on the
    unlabeled block).
    """
    S = np.atleast_2d(np.asarray(scores, dtype=float))
    Zl = np.atleast_2d(np.asarray(labeled_z, dtype=float))
    Zu = np.asarray(unlabeled_z, dtype=float)
    n = S.shape[0]
    N = Zu.shape[0] if Zu.size else 0
    if Zl.shape[0] != n:
        raise DomainError(f"{n} score rows but {Zl.shape[0]} labeled Z rows")
    if N == 0:
        return sigma_hat(S)
    Zu = np.atleast_2d(Zu)
    if Zu.shape[1] != Zl.shape[1]:
        raise SchemaError(f"labeled Z has {Zl.shape[1]} columns, unlabeled Z has {Zu.shape[1]}")
    A = a_hat(S, Zl)
    c = N / (n + N)
    W = S - c * (Zl @ A)
    V = c * (Zu @ A)
    rho = n / N if scale_unlabeled else 1.0
    out = W.T @ W / n + rho * (V.T @ V) / N
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class SandwichParts:
    H_hat: np.ndarray
    Sigma_hat: np.ndarray
    scores: np.ndarray
    n: int
    Sigma_rho_hat: np.ndarray | None = None
    A_hat: np.ndarray | None = None
    N: int = 0
    n_floored: int = 0
    basis: BasisSpec | None = None
    grid: IntegrationGrid | None = None


@dataclass(frozen=True)
class BetaCovariance:
    tau: float
    cov: np.ndarray
    mode: str = "SL"

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def ci(self, beta, level: float = 0.95) -> np.ndarray:
        """Normal-theory intervals, one (lower, upper) row per coefficient."""
        z = norm.ppf(0.5 + level / 2.0)
        beta = np.asarray(beta, dtype=float)
        return np.column_stack([beta - z * self.se, beta + z * self.se])


def sandwich_parts(fit: ExtremileFit, data, unlabeled=None, zmap: ZMap | str | None = None,
                   scale_unlabeled: bool = True) -> SandwichParts:
    """Assemble H, Sigma and (with unlabeled data) Sigma_rho for a fit."""
    data = data if isinstance(data, LabeledData) else LabeledData(*data)
    q = fit.qrcm
    H, n_floored = _hessian(data, q.alpha, q.basis, q.grid)
    S = score_contributions(data, q.alpha, q.basis, q.grid, q.kappa)
    if n_floored:
        warnings.warn(f"{n_floored} slope values were floored in the Hessian estimate", stacklevel=2)
    Srho = A = None
    N = 0
    if unlabeled is not None:
        U = unlabeled if isinstance(unlabeled, UnlabeledData) else UnlabeledData(unlabeled)
        N = U.N
        zm = make_zmap(zmap, intercept=_has_intercept(data.X))
        Zl = zm(data.X)
        Zu = zm(U.X) if N else np.zeros((0, Zl.shape[1]))
        Srho = sigma_rho_hat(S, Zl, Zu, scale_unlabeled)
        A = a_hat(S, Zl)
    return SandwichParts(H, sigma_hat(S), S, data.n, Srho, A, N, n_floored, q.basis, q.grid)


def beta_covariance(parts: SandwichParts, tau, mode: str = "SL", n: int | None = None) -> BetaCovariance:
    """btilde' H^{-1} Sigma H^{-1} btilde / n for one level.

    ``tau`` may be a level (requires ``parts.basis``) or a MomentVector.
    """
    mode = mode.upper()
    if mode not in ("SL", "SSL"):
        raise DomainError("mode must be 'SL' or 'SSL'")
    if isinstance(tau, MomentVector):
        m = tau
    else:
        if parts.basis is None:
            raise DomainError("parts carry no basis; pass a MomentVector")
        m = basis_moment(parts.basis, tau)
    Sig = parts.Sigma_hat if mode == "SL" else parts.Sigma_rho_hat
    if Sig is None:
        raise DomainError("SSL covariance requested but no unlabeled data were supplied")
    n = parts.n if n is None else n
    pq = parts.H_hat.shape[0]
    p = pq // len(m)
    check_gram(parts.H_hat, "Hessian estimate", "try a basis with fewer functions")
    bt = m.btilde(p)
    G = np.linalg.solve(parts.H_hat, bt)
    cov = G.T @ Sig @ G / n
    return BetaCovariance(m.tau, 0.5 * (cov + cov.T), mode)


def standard_errors(fit: ExtremileFit, data, unlabeled=None, zmap=None,
                    scale_unlabeled: bool = True) -> dict[float, BetaCovariance]:
    """Covariances of beta at each level of ``fit``; SSL when ``unlabeled`` is given."""
    parts = sandwich_parts(fit, data, unlabeled, zmap, scale_unlabeled)
    mode = "SSL" if unlabeled is not None else "SL"
    return {t: beta_covariance(parts, m, mode) for t, m in fit.moments.items()}
