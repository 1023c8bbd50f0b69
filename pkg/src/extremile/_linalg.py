"""Small linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np

from .errors import SingularMatrixError


def check_gram(S: np.ndarray, what: str, hint: str = "", rtol: float = 1e-12) -> None:
    """Raise SingularMatrixError if the symmetric matrix ``S`` is singular.

    The message lists the eigenvectors spanning the deficient directions.
    """
    evals, evecs = np.linalg.eigh(0.5 * (S + S.T))
    top = max(abs(evals[-1]), np.finfo(float).tiny)
    weak = evals <= rtol * top
    if weak.any():
        dirs = [np.round(evecs[:, k], 4).tolist() for k in np.flatnonzero(weak)]
        msg = f"{what} is singular; deficient directions (eigenvectors): {dirs}"
        raise SingularMatrixError(msg + (f"; {hint}" if hint else ""))
