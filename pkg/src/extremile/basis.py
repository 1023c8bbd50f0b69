"""Known function families b(u) that parameterize the quantile process.

A conditional quantile is modelled as q(u | x) = x' alpha b(u), so a basis is
just a vector-valued function of the quantile level together with its
derivative.  Families that blow up at u -> 0 or u -> 1 are evaluated at levels
clipped into [delta, 1 - delta].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri
from scipy.stats import norm

from .errors import DomainError, EvaluationError

DEFAULT_CLIP = 1e-4

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BasisSpec:
    """A q-vector of functions of the quantile level.

    ``fn`` and ``deriv`` map a 1-d array of levels (length m) to an (m, q)
    array.  ``clip`` is the half-width kept away from the endpoints when the
    family is unbounded there; 0 disables clipping.
    """

    name: str
    q: int
    fn: ArrayFn = field(repr=False)
    deriv: ArrayFn = field(repr=False)
    clip: float = 0.0
    labels: tuple[str, ...] = ()

    def _levels(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any(u < 0.0) or np.any(u > 1.0):
            raise DomainError("quantile levels must lie in [0, 1]")
        if self.clip > 0.0:
            u = np.clip(u, self.clip, 1.0 - self.clip)
        return u

    def matrix(self, u) -> np.ndarray:
        """Evaluate b at each level; rows are levels."""
        return self._shaped(self.fn(self._levels(u)), u)

    def deriv_matrix(self, u) -> np.ndarray:
        """Evaluate db/du at each level."""
        return self._shaped(self.deriv(self._levels(u)), u)

    def __call__(self, u) -> np.ndarray:
        out = self.matrix(u)
        return out[0] if np.ndim(u) == 0 else out

    def _shaped(self, B, u) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        m = np.atleast_1d(u).size
        if B.shape != (m, self.q):
            raise EvaluationError(
                f"basis {self.name!r} returned shape {B.shape}, expected {(m, self.q)}"
            )
        return B

    def check_finite(self, u) -> None:
        for what, B in (("value", self.matrix(u)), ("derivative", self.deriv_matrix(u))):
            bad = ~np.isfinite(B)
            if bad.any():
                k = int(np.argwhere(bad)[0][0])
                raise EvaluationError(
                    f"basis {self.name!r} {what} is not finite at u={np.atleast_1d(u)[k]:.6g}"
                )


def polynomial(degree: int = 3) -> BasisSpec:
    """b(u) = (1, u, ..., u**degree)."""
    if degree < 0:
        raise DomainError("degree must be non-negative")
    powers = np.arange(degree + 1)

    def fn(u):
        return u[:, None] ** powers

    def deriv(u):
        out = np.zeros((u.size, degree + 1))
        if degree:
            out[:, 1:] = powers[1:] * u[:, None] ** (powers[1:] - 1)
        return out

    labels = tuple("1" if k == 0 else ("u" if k == 1 else f"u^{k}") for k in powers)
    return BasisSpec(f"polynomial({degree})", degree + 1, fn, deriv, 0.0, labels)


def asymmetric_logistic(clip: float = DEFAULT_CLIP) -> BasisSpec:
    """b(u) = (1, log u, -log(1 - u))."""

    def fn(u):
        return np.column_stack([np.ones_like(u), np.log(u), -np.log1p(-u)])

    def deriv(u):
        return np.column_stack([np.zeros_like(u), 1.0 / u, 1.0 / (1.0 - u)])

    return BasisSpec("asymmetric-logistic", 3, fn, deriv, clip, ("1", "log(u)", "-log(1-u)"))


def normal_rayleigh(clip: float = DEFAULT_CLIP) -> BasisSpec:
    """b(u) = (1, Phi^{-1}(u), sqrt(-2 log(1 - u)))."""

    def fn(u):
        return np.column_stack([np.ones_like(u), ndtri(u), np.sqrt(-2.0 * np.log1p(-u))])

    def deriv(u):
        z = ndtri(u)
        ray = np.sqrt(-2.0 * np.log1p(-u))
        return np.column_stack([np.zeros_like(u), 1.0 / norm.pdf(z), 1.0 / ((1.0 - u) * ray)])

    return BasisSpec("normal-rayleigh", 3, fn, deriv, clip, ("1", "qnorm(u)", "qrayleigh(u)"))


def user_defined(name: str, fn: ArrayFn, deriv: ArrayFn, q: int, clip: float = 0.0,
                 labels: tuple[str, ...] = ()) -> BasisSpec:
    return BasisSpec(name, int(q), fn, deriv, float(clip), tuple(labels))


_FAMILIES = {
    "polynomial": polynomial,
    "poly": polynomial,
    "asymmetric-logistic": asymmetric_logistic,
    "logistic": asymmetric_logistic,
    "normal-rayleigh": normal_rayleigh,
}


def make_basis(spec: str | BasisSpec | None) -> BasisSpec:
    """Build a basis from a short name such as ``"polynomial:3"``."""
    if spec is None:
        return polynomial(3)
    if isinstance(spec, BasisSpec):
        return spec
    name, _, arg = str(spec).partition(":")
    name = name.strip().lower()
    if name not in _FAMILIES:
        raise DomainError(f"unknown basis family {spec!r}; choose from {sorted(set(_FAMILIES))}")
    factory = _FAMILIES[name]
    if factory is polynomial:
        return polynomial(int(arg) if arg else 3)
    return factory(float(arg)) if arg else factory()
