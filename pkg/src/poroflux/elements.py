"""Tensor-product Lagrange elements and Gauss quadrature on the unit cell.

All cells in a stacked-box grid are translates of one axis-aligned brick, so
every element is tabulated once on the reference cell [0,1]^d and reused.
Local nodes and quadrature points are ordered lexicographically with the
last axis fastest (C order); axis d-1 is the vertical direction.
"""

from __future__ import annotations

import itertools

import numpy as np

#: Gauss points per direction.  Three points integrate degree 5 exactly,
#: which covers every bilinear form assembled in this package on affine cells.
NGAUSS = 3


def gauss01(n: int = NGAUSS) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def lagrange_nodes(degree: int) -> np.ndarray:
    """Equispaced 1D Lagrange nodes on [0, 1]."""
    if degree not in (1, 2):
        raise ValueError(f"unsupported polynomial degree {degree}")
    return np.linspace(0.0, 1.0, degree + 1)


def lagrange_eval(degree: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values, first and second derivatives of the 1D basis at points t.

    Returns three arrays of shape (len(t), degree+1).
    """
    t = np.asarray(t, dtype=float)
    if degree == 1:
        vals = np.stack([1.0 - t, t], axis=-1)
        ders = np.stack([-np.ones_like(t), np.ones_like(t)], axis=-1)
        der2 = np.zeros_like(vals)
    elif degree == 2:
        vals = np.stack(
            [2.0 * t * t - 3.0 * t + 1.0, 4.0 * t - 4.0 * t * t, 2.0 * t * t - t],
            axis=-1,
        )
        ders = np.stack([4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0], axis=-1)
        der2 = np.stack(
            [4.0 * np.ones_like(t), -8.0 * np.ones_like(t), 4.0 * np.ones_like(t)],
            axis=-1,
        )
    else:
        raise ValueError(f"unsupported polynomial degree {degree}")
    return vals, ders, der2


class CellBasis:
    """Scalar tensor-product basis of one degree on the reference cell.

    Attributes:
        degree: polynomial degree per direction (1 or 2)
        dim: spatial dimension
        n_local: (degree+1)**dim local nodes
        local_nodes: (n_local, dim) reference coordinates, C-ordered
    """

    def __init__(self, degree: int, dim: int):
        self.degree = degree
        self.dim = dim
        self.n_local = (degree + 1) ** dim
        axes = [lagrange_nodes(degree)] * dim
        self.local_nodes = np.array(list(itertools.product(*axes)), dtype=float)

    def tabulate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values (m, n_local) and reference gradients (m, n_local, dim) at points (m, dim)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m = points.shape[0]
        per_axis = [lagrange_eval(self.degree, points[:, a]) for a in range(self.dim)]
        vals = np.ones((m, self.n_local))
        grads = np.ones((m, self.n_local, self.dim))
        for loc, multi in enumerate(itertools.product(range(self.degree + 1), repeat=self.dim)):
            v = np.ones(m)
            for a, ia in enumerate(multi):
                v = v * per_axis[a][0][:, ia]
            vals[:, loc] = v
            for g in range(self.dim):
                dv = np.ones(m)
                for a, ia in enumerate(multi):
                    dv = dv * (per_axis[a][1][:, ia] if a == g else per_axis[a][0][:, ia])
                grads[:, loc, g] = dv
        return vals, grads

    def tabulate_second_diag(self, points: np.ndarray) -> np.ndarray:
        """Pure second derivatives d^2/dx_a^2, shape (m, n_local, dim)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m = points.shape[0]
        per_axis = [lagrange_eval(self.degree, points[:, a]) for a in range(self.dim)]
        out = np.ones((m, self.n_local, self.dim))
        for loc, multi in enumerate(itertools.product(range(self.degree + 1), repeat=self.dim)):
            for g in range(self.dim):
                dv = np.ones(m)
                for a, ia in enumerate(multi):
                    dv = dv * (per_axis[a][2][:, ia] if a == g else per_axis[a][0][:, ia])
                out[:, loc, g] = dv
        return out


def cell_quadrature(dim: int, n: int = NGAUSS) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on [0,1]^dim: points (n**dim, dim), weights (n**dim,)."""
    pts1, w1 = gauss01(n)
    pts = np.array(list(itertools.product(pts1, repeat=dim)))
    w = np.ones(n**dim)
    for a in range(dim):
        w = w * np.array([c[a] for c in itertools.product(w1, repeat=dim)])
    return pts, w


def facet_quadrature(dim: int, vertical_coord: float, n: int = NGAUSS) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on a horizontal facet of the reference cell.

    The rule lives on the lateral axes; the vertical reference coordinate is
    pinned to 0 (bottom face) or 1 (top face).  Returns full dim-dimensional
    reference points (m, dim) and lateral weights (m,).
    """
    if dim == 1:
        raise ValueError("facets need dim >= 2")
    lat_pts, lat_w = cell_quadrature(dim - 1, n)
    pts = np.concatenate(
        [lat_pts, np.full((lat_pts.shape[0], 1), float(vertical_coord))], axis=1
    )
    return pts, lat_w
