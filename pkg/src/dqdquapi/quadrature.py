"""Composite Gauss-Legendre quadrature for oscillatory frequency integrals.

The integrands met here are smooth on a finite interval ``[0, omega_max]``
(the spectral densities carry a Gaussian cutoff) but oscillate with phases
up to a few thousand radians.  Panels are therefore sized from the largest
time appearing in the phase, and the panel count is doubled until two
successive estimates agree to the requested absolute tolerance.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

GL_ORDER = 8
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(GL_ORDER)


class ConvergenceError(RuntimeError):
    """Raised when a quadrature does not reach its tolerance.

    The ``residual`` attribute carries the last error estimate.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class QuadraturePolicy:
    """How frequency integrals are evaluated.

    Parameters
    ----------
    omega_max : float or None
        Upper integration limit in ps^-1.  ``None`` lets the bath pick
        ``max(omega_c, 8 omega_l)``.
    abs_tol : float
        Absolute tolerance on each integral.
    max_subdivisions : int
        Maximum number of panel doublings before giving up.
    """

    omega_max: float | None = None
    abs_tol: float = 1e-10
    max_subdivisions: int = 8

    def __post_init__(self):
        if self.abs_tol <= 0:
            raise ValueError("abs_tol must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if self.omega_max is not None and self.omega_max <= 0:
            raise ValueError("omega_max must be positive")


def _nodes(segments, scale: int):
    xs, ws = [], []
    for a, b, width in segments:
        n = max(1, int(np.ceil((b - a) / width))) * scale
        edges = np.linspace(a, b, n + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        xs.append((mid[:, None] + half[:, None] * _NODES[None, :]).ravel())
        ws.append((half[:, None] * _WEIGHTS[None, :]).ravel())
    return np.concatenate(xs), np.concatenate(ws)


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    segments,
    abs_tol: float,
    max_subdivisions: int = 8,
    max_nodes: int = 1 << 20,
) -> np.ndarray:
    """Integrate ``f`` over consecutive ``segments`` of ``(a, b, max_width)``.

    ``f`` maps a 1-D array of abscissae to an array whose leading axis runs
    over those abscissae; trailing axes are integrated independently and the
    tolerance applies to each component.  The panel count of every segment
    is doubled until two estimates agree to ``abs_tol``.
    """
    x, w = _nodes(segments, 1)
    coarse = np.tensordot(w, f(x), axes=(0, 0))
    residual = np.inf
    scale = 1
    for _ in range(max_subdivisions):
        scale *= 2
        x, w = _nodes(segments, scale)
        if x.size > max_nodes:
            break
        fine = np.tensordot(w, f(x), axes=(0, 0))
        residual = float(np.max(np.abs(fine - coarse)))
        if residual <= abs_tol:
            return fine
        coarse = fine
    raise ConvergenceError("frequency quadrature did not converge", residual)
