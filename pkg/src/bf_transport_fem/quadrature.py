"""Quadrature on the reference triangle and on the unit interval."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Barycentric points and weights on the reference triangle (weights sum to 1/2)."""

    points: np.ndarray  # (Q, 3)
    weights: np.ndarray  # (Q,)
    degree: int

    def map(self, corners: np.ndarray) -> np.ndarray:
        """Physical points for triangles with ``corners`` of shape (M, 3, 2) -> (M, Q, 2)."""
        return np.einsum("qk,mkd->mqd", self.points, corners)

    def scaled_weights(self, areas: np.ndarray) -> np.ndarray:
        """Weights for physical triangles, (M, Q)."""
        return 2.0 * areas[:, None] * self.weights[None, :]


@dataclass(frozen=True, eq=False)
class EdgeQuadratureRule:
    """Points and weights on [0, 1] (weights sum to 1)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _bary(a: float, b: float, c: float) -> list[tuple[float, float, float]]:
    return sorted({(a, b, c), (b, c, a), (c, a, b), (a, c, b), (b, a, c), (c, b, a)})


def _symmetric_rule(orbits, degree: int) -> QuadratureRule:
    pts, wts = [], []
    for (a, b, c), w in orbits:
        for p in _bary(a, b, c):
            pts.append(p)
            wts.append(w)
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), degree)


def _collapsed_gauss(degree: int) -> QuadratureRule:
    # Duffy map of a tensor Gauss-Legendre rule; exact for total degree `degree`
    m = max(1, (degree + 3) // 2)
    x, w = np.polynomial.legendre.leggauss(m)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    U, V = np.meshgrid(x, x, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    xi = U.ravel()
    eta = (V * (1.0 - U)).ravel()
    weights = (WU * WV * (1.0 - U)).ravel()
    points = np.column_stack([1.0 - xi - eta, xi, eta])
    return QuadratureRule(points, weights, degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """A rule exact for polynomials of total degree ``degree``.

    Degrees 1, 2 and 4 use the classic symmetric 1-, 3- and 6-point rules; anything else
    falls back to a collapsed Gauss product rule.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if degree <= 1:
        return _symmetric_rule([((1 / 3, 1 / 3, 1 / 3), 1.0)], 1)
    if degree == 2:
        return _symmetric_rule([((2 / 3, 1 / 6, 1 / 6), 1 / 3)], 2)
    if degree in (3, 4):
        return _symmetric_rule(
            [
                ((1 - 2 * 0.44594849091596488632, 0.44594849091596488632, 0.44594849091596488632),
                 0.22338158967801146570),
                ((1 - 2 * 0.09157621350977074346, 0.09157621350977074346, 0.09157621350977074346),
                 0.10995174365532186764),
            ],
            4,
        )
    return _collapsed_gauss(degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> EdgeQuadratureRule:
    """Gauss-Legendre on [0, 1] with the fewest points exact to ``degree``."""
    m = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(m)
    return EdgeQuadratureRule(0.5 * (x + 1.0), 0.5 * w, 2 * m - 1)
