"""Integration rules on the unit interval."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from .errors import DomainError

DEFAULT_NODES = 99


@dataclass(frozen=True)
class IntegrationGrid:
    """Nodes and weights of a quadrature rule on (0, 1).

    ``kind`` is ``"gauss-legendre"``, ``"uniform"`` or ``"gauss-jacobi"``
    (the J-weighted rule built in :mod:`extremile.weights`).  The uniform rule puts
    mass 1/m on the right endpoints i/m, i = 1..m, i.e. the plain Riemann sum
    m^{-1} sum_i f(i/m).
    """

    kind: str
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate samples taken at ``nodes`` along the last axis."""
        return np.asarray(values) @ self.weights


@lru_cache(maxsize=32)
def _gl(m: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(m)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(m: int = DEFAULT_NODES) -> IntegrationGrid:
    if m < 1:
        raise DomainError(f"need at least one node, got {m}")
    nodes, weights = _gl(int(m))
    return IntegrationGrid("gauss-legendre", nodes, weights)


def uniform(m: int) -> IntegrationGrid:
    if m < 1:
        raise DomainError(f"need at least one node, got {m}")
    nodes = np.arange(1, m + 1) / m
    weights = np.full(m, 1.0 / m)
    return IntegrationGrid("uniform", nodes, weights)


def make_grid(spec: str | int | IntegrationGrid | None) -> IntegrationGrid:
    """Coerce ``"gl:99"``, ``"uniform:500"``, an int or a grid into a grid."""
    if spec is None:
        return gauss_legendre()
    if isinstance(spec, IntegrationGrid):
        return spec
    if isinstance(spec, (int, np.integer)):
        return gauss_legendre(int(spec))
    kind, _, size = str(spec).partition(":")
    kind = kind.strip().lower()
    m = int(size) if size else DEFAULT_NODES
    if kind in ("gl", "gauss", "gauss-legendre"):
        return gauss_legendre(m)
    if kind in ("uniform", "grid"):
        return uniform(m)
    raise DomainError(f"unknown integration rule {spec!r}")
