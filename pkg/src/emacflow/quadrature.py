"""Quadrature rules on the reference triangle (0,0)-(1,0)-(0,1).

Rules are built from a Duffy (collapsed-coordinate) transform with
Gauss-Legendre points in the first direction and Gauss-Jacobi points
(weight 1-t) in the second, so any requested exactness degree is met
without tabulated coefficients. Weights sum to the reference area 1/2.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 12


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature points in barycentric coordinates plus weights."""

    points: np.ndarray       # (nq, 3) barycentric coordinates
    weights: np.ndarray      # (nq,), sum to 1/2
    exactness_degree: int

    @property
    def xy(self):
        """Points as (nq, 2) reference coordinates (x, y)."""
        return self.points[:, 1:]

    def __len__(self):
        return self.points.shape[0]


@lru_cache(maxsize=None)
def triangle_rule(exactness_degree: int) -> QuadratureRule:
    """Rule integrating all polynomials up to ``exactness_degree`` exactly.

    Raises ValueError for degrees outside [0, 12].
    """
    if not 0 <= exactness_degree <= MAX_DEGREE:
        raise ValueError(
            f"quadrature degree {exactness_degree} unsupported; "
            f"supported range is 0..{MAX_DEGREE}"
        )
    n = exactness_degree // 2 + 1
    # Gauss-Legendre on [0, 1]
    xg, wg = roots_legendre(n)
    xg = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    # Gauss-Jacobi with weight (1 - t) on [0, 1]:
    # int_0^1 f(t)(1-t) dt = 1/4 sum w_i f((x_i+1)/2)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xj = 0.5 * (xj + 1.0)
    wj = 0.25 * wj

    # Duffy map: (xi, eta) in [0,1]^2 -> (xi (1-eta), eta), Jacobian (1-eta)
    xi, eta = np.meshgrid(xg, xj, indexing="ij")
    x = (xi * (1.0 - eta)).ravel()
    y = eta.ravel()
    w = np.outer(wg, wj).ravel()

    points = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(points=points, weights=w, exactness_degree=exactness_degree)


@lru_cache(maxsize=None)
def edge_rule(npoints: int):
    """Gauss-Legendre rule on [0, 1] for boundary-edge integrals."""
    x, w = roots_legendre(npoints)
    return 0.5 * (x + 1.0), 0.5 * w
