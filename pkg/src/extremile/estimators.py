"""Linear extremile regression estimators.

Three estimators of the coefficient vector beta_tau in xi_tau(x) = x' beta_tau:

* supervised (SL): fit alpha once by integrated quantile regression, then
  beta_tau = alpha m(tau) for any number of levels;
* semi-supervised (SSL): the same fit with observation weights that project
  information from unlabeled covariates;
* ordinary (OE): weighted least squares with weights J_tau(F(Y | X)), where F
  is a kernel estimate of the conditional distribution or a known CDF.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .basis import BasisSpec, make_basis
from .data import LabeledData, UnlabeledData, ZMap, make_zmap
from ._linalg import check_gram
from .errors import DomainError, EstimationError, SchemaError
from .qrcm import FitOptions, QRCMFit, fit_qrcm
from .weights import MomentVector, basis_moment, j_weight

DEFAULT_TAUS = (0.1, 0.3, 0.5, 0.7, 0.9)
KERNELS = ("gaussian", "epanechnikov")
_CHUNK = 1024


@dataclass(frozen=True)
class ExtremileFit:
    """beta_tau = alpha m(tau) for each requested level, from a single fit."""

    qrcm: QRCMFit
    moments: dict[float, MomentVector]
    mode: str
    diagnostics: dict = field(default_factory=dict)
    moment_rule: object = None

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.qrcm.alpha

    @property
    def weights_used(self) -> np.ndarray:
        return self.qrcm.weights

    @property
    def taus(self) -> tuple[float, ...]:
        return tuple(self.moments)

    @property
    def beta(self) -> dict[float, np.ndarray]:
        return {t: self.alpha_hat @ m.values for t, m in self.moments.items()}

    def beta_at(self, tau: float) -> np.ndarray:
        """beta for any level, including ones not requested at fit time."""
        m = self.moments.get(float(tau))
        if m is None:
            m = basis_moment(self.qrcm.basis, tau, self.moment_rule)
        return self.alpha_hat @ m.values

    def beta_matrix(self) -> np.ndarray:
        """len(taus) x p array of coefficient rows."""
        return np.array([self.beta[t] for t in self.taus])


def _levels(taus) -> tuple[float, ...]:
    taus = tuple(float(t) for t in np.atleast_1d(taus if taus is not None else DEFAULT_TAUS))
    if not taus:
        raise DomainError("need at least one level")
    for t in taus:
        if not 0.0 < t < 1.0:
            raise DomainError(f"levels must lie in (0, 1), got {t}")
    return taus


def _as_labeled(data) -> LabeledData:
    return data if isinstance(data, LabeledData) else LabeledData(*data)


def _extremile_fit(fit: QRCMFit, taus, mode: str, diagnostics: dict, opts) -> ExtremileFit:
    rule = (opts or FitOptions()).moment_rule
    moments = {t: basis_moment(fit.basis, t, rule) for t in _levels(taus)}
    diagnostics = {
        "iterations": fit.iterations,
        "grad_norm": fit.grad_norm,
        "kappa": fit.kappa,
        "monotonicity_violation": fit.monotonicity.fraction,
        "nonconvex": fit.nonconvex,
        **diagnostics,
    }
    return ExtremileFit(fit, moments, mode, diagnostics, rule)


def fit_supervised(data, basis: BasisSpec | str | None = None, taus: Sequence[float] | None = None,
                   opts: FitOptions | None = None) -> ExtremileFit:
    """Supervised estimator with unit observation weights."""
    data = _as_labeled(data)
    fit = fit_qrcm(data, make_basis(basis), None, opts)
    return _extremile_fit(fit, taus, "SL", {"n": data.n}, opts)


def ssl_weights(labeled_z, unlabeled_z) -> np.ndarray:
    """w_i = 1 + (N/n) zbar_N' S_Z^{-1} z_i with S_Z = n^{-1} sum_i z_i z_i'.

    Because z[0] == 1 the weights sum to n + N.
    """
    Zl = np.atleast_2d(np.asarray(labeled_z, dtype=float))
    Zu = np.asarray(unlabeled_z, dtype=float)
    n = Zl.shape[0]
    N = Zu.shape[0] if Zu.size else 0
    if N == 0:
        return np.ones(n)
    Zu = np.atleast_2d(Zu)
    if Zu.shape[1] != Zl.shape[1]:
        raise SchemaError(f"labeled Z has {Zl.shape[1]} columns, unlabeled Z has {Zu.shape[1]}")
    S = Zl.T @ Zl / n
    check_gram(S, "labeled Z second-moment matrix")
    coef = np.linalg.solve(S, Zu.mean(axis=0))
    return 1.0 + (N / n) * (Zl @ coef)


def _has_intercept(X: np.ndarray) -> bool:
    return X.shape[0] > 0 and bool(np.all(X[:, 0] == 1.0))


def fit_semisupervised(labeled, unlabeled, zmap: ZMap | str | None = None,
                       basis: BasisSpec | str | None = None, taus: Sequence[float] | None = None,
                       opts: FitOptions | None = None) -> ExtremileFit:
    """Weighted fit using the unlabeled covariates through ``ssl_weights``.

    With no unlabeled rows the weights are all 1 and the result coincides with
    :func:`fit_supervised`.
    """
    labeled = _as_labeled(labeled)
    if not isinstance(unlabeled, UnlabeledData):
        unlabeled = UnlabeledData(unlabeled)
    if unlabeled.N and unlabeled.X.shape[1] != labeled.p:
        raise SchemaError(f"labeled design has {labeled.p} columns, unlabeled has {unlabeled.X.shape[1]}")
    zmap = make_zmap(zmap, intercept=_has_intercept(labeled.X))
    if unlabeled.N:
        w = ssl_weights(zmap(labeled.X), zmap(unlabeled.X))
    else:
        w = np.ones(labeled.n)
    fit = fit_qrcm(labeled, make_basis(basis), None if unlabeled.N == 0 else w, opts)
    diag = {
        "n": labeled.n,
        "N": unlabeled.N,
        "zmap": zmap.name,
        "omega_min": float(w.min()),
        "omega_max": float(w.max()),
        "n_negative_weights": int(np.sum(w < 0)),
    }
    return _extremile_fit(fit, taus, "SSL", diag, opts)


def _check_kernel(kernel: str) -> str:
    kernel = kernel.lower()
    if kernel not in KERNELS:
        raise DomainError(f"unknown kernel {kernel!r}; choose from {KERNELS}")
    return kernel


def _covariate_block(X: np.ndarray) -> np.ndarray:
    return X[:, 1:] if _has_intercept(X) else X


def _bandwidths(h, dim: int) -> np.ndarray:
    h = np.broadcast_to(np.asarray(h, dtype=float), (dim,)).copy()
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise DomainError("bandwidths must be positive and finite")
    return h


def _kernel_matrix(C: np.ndarray, at: np.ndarray, h: np.ndarray, kernel: str) -> np.ndarray:
    """K[a, i] = prod_j k((at_aj - C_ij) / h_j), unnormalized."""
    if kernel == "gaussian":
        E = np.zeros((at.shape[0], C.shape[0]))
        for j in range(C.shape[1]):
            E += ((at[:, j, None] - C[None, :, j]) / h[j]) ** 2
        return np.exp(-0.5 * E)
    K = np.ones((at.shape[0], C.shape[0]))
    for j in range(C.shape[1]):
        K *= np.clip(1.0 - ((at[:, j, None] - C[None, :, j]) / h[j]) ** 2, 0.0, None)
    return K


def nw_cdf(data, x, y, h, kernel: str = "gaussian") -> float:
    """Kernel estimate of P(Y <= y | X = x).

    The kernel acts on the non-intercept covariates; ``h`` is a scalar or one
    bandwidth per covariate.
    """
    data = _as_labeled(data)
    kernel = _check_kernel(kernel)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != data.p:
        raise DomainError(f"x has {x.size} entries, design has {data.p} columns")
    inter = _has_intercept(data.X)
    C = data.X[:, 1:] if inter else data.X
    c = x[1:] if inter else x
    K = _kernel_matrix(C, c[None, :], _bandwidths(h, C.shape[1]), kernel)[0]
    den = K.sum()
    if den <= 0:
        raise EstimationError("no kernel mass at x; increase the bandwidth")
    return float(K @ (data.Y <= y) / den)


def nw_cdf_at_sample(data, h, kernel: str = "gaussian", leave_one_out: bool = False) -> np.ndarray:
    """F-hat(Y_i | X_i) for every labeled observation."""
    data = _as_labeled(data)
    kernel = _check_kernel(kernel)
    C = _covariate_block(data.X)
    h = _bandwidths(h, C.shape[1])
    F = np.empty(data.n)
    ess = np.empty(data.n)
    for start in range(0, data.n, _CHUNK):
        rows = slice(start, min(start + _CHUNK, data.n))
        K = _kernel_matrix(C, C[rows], h, kernel)
        if leave_one_out:
            K[np.arange(K.shape[0]), np.arange(rows.start, rows.stop)] = 0.0
        den = K.sum(axis=1)
        if np.any(den <= 0):
            bad = rows.start + int(np.flatnonzero(den <= 0)[0])
            raise EstimationError(f"no kernel mass around observation {bad}; increase the bandwidth")
        ess[rows] = den**2 / np.sum(K * K, axis=1)
        F[rows] = np.sum(K * (data.Y[None, :] <= data.Y[rows, None]), axis=1) / den
    if np.median(ess) < 5:
        warnings.warn(
            f"kernel CDF is sparse: median effective neighbour count {np.median(ess):.2f} (n={data.n})",
            stacklevel=2,
        )
    return F


def default_bandwidth(n: int, sd) -> np.ndarray:
    """Rule-of-thumb bandwidth 1.06 sd n^{-1/5}, one entry per covariate."""
    if n < 2:
        raise DomainError("bandwidth rule needs n >= 2")
    sd = np.atleast_1d(np.asarray(sd, dtype=float))
    if np.any(sd <= 0):
        cols = np.flatnonzero(sd <= 0).tolist()
        raise DomainError(f"covariates {cols} are constant; drop them before kernel smoothing")
    return 1.06 * sd * n ** (-0.2)


def bandwidth_for(data) -> np.ndarray:
    data = _as_labeled(data)
    C = _covariate_block(data.X)
    return default_bandwidth(data.n, C.std(axis=0, ddof=1) if data.n > 1 else np.zeros(C.shape[1]))


@dataclass(frozen=True)
class OrdinaryFit:
    beta: np.ndarray
    tau: float
    weights: np.ndarray
    cdf_values: np.ndarray
    bandwidth: np.ndarray | None
    kernel: str | None
    n_clipped: int


def fit_ordinary(data, tau: float, h=None, kernel: str = "gaussian",
                 cdf: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                 leave_one_out: bool = False) -> OrdinaryFit:
    """Weighted least squares with weights J_tau(F(Y_i | X_i)).

    ``cdf(y, X)`` returns the known conditional CDF at each row; when absent F
    is estimated by :func:`nw_cdf_at_sample`.  F is clipped to
    [1/(n+1), n/(n+1)] before weighting.
    """
    data = _as_labeled(data)
    n = data.n
    if cdf is not None:
        F = np.asarray(cdf(data.Y, data.X), dtype=float).ravel()
        if F.shape != (n,) or not np.all(np.isfinite(F)):
            raise EstimationError("cdf must return one finite value per observation")
        h_used, kern = None, None
    else:
        kern = _check_kernel(kernel)
        h_used = bandwidth_for(data) if h is None else _bandwidths(h, _covariate_block(data.X).shape[1])
        F = nw_cdf_at_sample(data, h_used, kern, leave_one_out)
    eps = 1.0 / (n + 1)
    Fc = np.clip(F, eps, 1.0 - eps)
    W = j_weight(Fc, tau)
    XtW = data.X.T * W
    A = XtW @ data.X
    check_gram(A, "weighted normal matrix X'WX")
    beta = np.linalg.solve(A, XtW @ data.Y)
    return OrdinaryFit(beta, float(tau), W, F, h_used, kern, int(np.sum(Fc != F)))
