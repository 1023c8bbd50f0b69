"""Containers for labeled/unlabeled samples and the SSL feature map."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable

import numpy as np
from scipy.linalg import qr

from .errors import DesignError, DomainError


def _as_matrix(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DomainError(f"{name} must be two-dimensional")
    if not np.all(np.isfinite(X)):
        raise DomainError(f"{name} contains non-finite entries")
    return X


@dataclass(frozen=True)
class LabeledData:
    """Design ``X`` (n x p, first column 1 by convention) and response ``Y``."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = _as_matrix(self.X, "X")
        Y = np.asarray(self.Y, dtype=float).ravel()
        if Y.size != X.shape[0]:
            raise DomainError(f"X has {X.shape[0]} rows but Y has {Y.size} entries")
        if Y.size < 1:
            raise DomainError("need at least one observation")
        if not np.all(np.isfinite(Y)):
            raise DomainError("Y contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def check_rank(self) -> None:
        """Raise DesignError naming dependent columns when rank(X) < p."""
        dependent = dependent_columns(self.X)
        if dependent:
            raise DesignError(
                f"design matrix is rank deficient; columns {list(dependent)} are "
                "linear combinations of the others",
                dependent,
            )


@dataclass(frozen=True)
class UnlabeledData:
    """Covariate rows without responses (N x p, same layout as LabeledData.X)."""

    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.size == 0:
            X = X.reshape(0, X.shape[1] if X.ndim == 2 else 0)
        else:
            X = _as_matrix(X, "unlabeled X")
        object.__setattr__(self, "X", X)

    @property
    def N(self) -> int:
        return self.X.shape[0]


def dependent_columns(X: np.ndarray, rtol: float = 1e-10) -> tuple[int, ...]:
    """Indices of columns that pivoted QR leaves outside the numerical rank."""
    X = np.asarray(X, dtype=float)
    _, R, piv = qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return tuple(range(X.shape[1]))
    rank = int(np.sum(d > rtol * d[0]))
    return tuple(sorted(int(c) for c in piv[rank:]))


@dataclass(frozen=True)
class ZMap:
    """Feature map x -> z used to build the SSL weights; z[0] must be 1."""

    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    name: str = "custom"

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Z = np.asarray(self.fn(X), dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.shape[0] != X.shape[0]:
            raise DomainError(f"Z map {self.name!r} returned {Z.shape[0]} rows for {X.shape[0]} inputs")
        if Z.size and not np.all(Z[:, 0] == 1.0):
            raise DomainError(f"first coordinate of Z map {self.name!r} must be exactly 1")
        if not np.all(np.isfinite(Z)):
            raise DomainError(f"Z map {self.name!r} produced non-finite features")
        return Z


def _covariates(X: np.ndarray, intercept: bool) -> np.ndarray:
    return X[:, 1:] if intercept else X


def constant_zmap() -> ZMap:
    return ZMap(lambda X: np.ones((X.shape[0], 1)), "constant")


def linear_zmap(intercept: bool = True) -> ZMap:
    def fn(X):
        C = _covariates(X, intercept)
        return np.column_stack([np.ones(X.shape[0]), C])

    return ZMap(fn, "linear")


def quadratic_zmap(intercept: bool = True) -> ZMap:
    """z = (1, x_2..x_p, x_j x_k for j <= k) over the non-intercept columns."""

    def fn(X):
        C = _covariates(X, intercept)
        cols = [np.ones(X.shape[0])] + [C[:, j] for j in range(C.shape[1])]
        cols += [C[:, j] * C[:, k] for j, k in combinations_with_replacement(range(C.shape[1]), 2)]
        return np.column_stack(cols)

    return ZMap(fn, "quadratic")


_ZMAPS = {"constant": constant_zmap, "linear": linear_zmap, "quadratic": quadratic_zmap}


def make_zmap(spec: str | ZMap | None, intercept: bool = True) -> ZMap:
    if spec is None:
        return quadratic_zmap(intercept)
    if isinstance(spec, ZMap):
        return spec
    key = str(spec).strip().lower()
    if key not in _ZMAPS:
        raise DomainError(f"unknown Z map {spec!r}; choose from {sorted(_ZMAPS)}")
    if key == "constant":
        return constant_zmap()
    return _ZMAPS[key](intercept)
