"""Finite-element spaces with periodic and Dirichlet constraints eliminated.

Unknowns and their spaces on the stacked grid:

* ``u``, ``w`` -- elastic displacement and velocity, vector Q2 on the biot
  box, zero on its top face, laterally periodic (one shared dof map);
* ``p`` -- Biot pressure, scalar Q1 or Q2 on the biot box, zero on the top
  face, laterally periodic;
* ``v`` -- fluid velocity, vector Q2 on the fluid box, zero on its bottom
  face, laterally periodic;
* ``pi`` -- fluid pressure multiplier, scalar Q1 on the fluid box, periodic,
  no Dirichlet data (an L^2 Lagrange multiplier).

Constraints are applied by elimination: every lateral follower node is
substituted by its leader (max index -> 0 along each lateral axis, chained
at corners) and Dirichlet nodes are removed from the dof set.  Free nodes
are numbered in C order; vector dofs interleave components.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .elements import CellBasis, cell_quadrature, facet_quadrature
from .grid import BIOT, FLUID, StackedGrid, SubdomainMesh


@dataclass(frozen=True)
class ElementFamily:
    """Continuous tensor-product Lagrange family of degree 1 or 2."""

    label: str

    def __post_init__(self):
        if self.label not in ("Q1", "Q2"):
            raise ValueError(f"unknown element family {self.label!r}")

    @property
    def degree(self) -> int:
        return int(self.label[1])


Q1 = ElementFamily("Q1")
Q2 = ElementFamily("Q2")


class FieldSpace:
    """Dof map of one unknown on one subdomain.

    dirichlet selects the clamped horizontal face: "top" for biot-box fields
    (x_d = 1), "bottom" for the fluid velocity (x_d = -1), None for the
    multiplier.
    """

    def __init__(self, mesh: SubdomainMesh, degree: int, n_components: int,
                 dirichlet: str | None):
        self.mesh = mesh
        self.degree = degree
        self.n_components = n_components
        self.dirichlet = dirichlet
        d = mesh.dim
        self.node_sizes = tuple(degree * n + 1 for n in mesh.cell_counts)
        self.n_nodes = int(np.prod(self.node_sizes))

        axes = [np.linspace(0.0, 1.0, s) for s in self.node_sizes[:-1]]
        axes.append(np.linspace(mesh.z_lo, mesh.z_hi, self.node_sizes[-1]))
        self.node_axes = axes
        grids = np.meshgrid(*axes, indexing="ij")
        self.node_coords = np.stack([g.ravel(order="C") for g in grids], axis=1)

        idx = np.unravel_index(np.arange(self.n_nodes), self.node_sizes)
        leader_idx = [a.copy() for a in idx]
        follower = np.zeros(self.n_nodes, dtype=bool)
        for a in range(d - 1):
            on_max = idx[a] == self.node_sizes[a] - 1
            leader_idx[a][on_max] = 0
            follower |= on_max
        self.leader = np.ravel_multi_index(tuple(leader_idx), self.node_sizes)
        self.is_follower = follower
        if dirichlet == "top":
            self.is_dirichlet = idx[d - 1] == self.node_sizes[-1] - 1
        elif dirichlet == "bottom":
            self.is_dirichlet = idx[d - 1] == 0
        elif dirichlet is None:
            self.is_dirichlet = np.zeros(self.n_nodes, dtype=bool)
        else:
            raise ValueError(f"unknown dirichlet tag {dirichlet!r}")

        free_mask = ~self.is_follower & ~self.is_dirichlet
        self.n_free_nodes = int(free_mask.sum())
        free_number = -np.ones(self.n_nodes, dtype=int)
        free_number[free_mask] = np.arange(self.n_free_nodes)
        # target: free index of the node's leader, -1 on the Dirichlet set
        self.target = np.where(self.is_dirichlet, -1, free_number[self.leader])
        self.n_dofs = self.n_free_nodes * n_components

        self.basis = CellBasis(degree, d)
        self.cell_nodes = self._build_cell_nodes()
        self._tables: dict = {}

    # -- connectivity -------------------------------------------------

    def _build_cell_nodes(self) -> np.ndarray:
        d = self.mesh.dim
        deg = self.degree
        locs = np.array(list(itertools.product(range(deg + 1), repeat=d)))
        out = np.empty((self.mesh.cells.shape[0], len(locs)), dtype=int)
        for flat, cidx in enumerate(itertools.product(*[range(n) for n in self.mesh.cell_counts])):
            node_multi = deg * np.asarray(cidx) + locs
            out[flat] = np.ravel_multi_index(node_multi.T, self.node_sizes)
        return out

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def spacings(self) -> np.ndarray:
        return self.mesh.spacings

    def cell_targets(self, cells: np.ndarray | None = None) -> np.ndarray:
        nodes = self.cell_nodes if cells is None else self.cell_nodes[cells]
        return self.target[nodes]

    def tables(self, key: str):
        """Cached reference tables at the standard quadrature rules."""
        if key not in self._tables:
            d = self.dim
            if key == "cell":
                pts, w = cell_quadrature(d)
                vals, grads = self.basis.tabulate(pts)
                self._tables[key] = (pts, w, vals, grads)
            elif key in ("facet_bottom", "facet_top"):
                vert = 0.0 if key.endswith("bottom") else 1.0
                pts, w = facet_quadrature(d, vert)
                vals, grads = self.basis.tabulate(pts)
                self._tables[key] = (pts, w, vals, grads)
            else:
                raise KeyError(key)
        return self._tables[key]

    # -- evaluation ---------------------------------------------------

    def gather(self, coeffs: np.ndarray, cells: np.ndarray | None = None) -> np.ndarray:
        """Per-cell nodal values (n_cells, n_local, n_components).

        Followers read their leader's coefficient; Dirichlet nodes carry 0.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_dofs,):
            raise ValueError(f"expected {self.n_dofs} coefficients, got {coeffs.shape}")
        per_node = np.zeros((self.n_free_nodes + 1, self.n_components))
        per_node[:-1] = coeffs.reshape(self.n_free_nodes, self.n_components)
        tgt = self.cell_targets(cells)
        return per_node[tgt]

    def evaluate(self, coeffs: np.ndarray, cells: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
        """Field values at reference points of the given cells: (n_cells, m, nc)."""
        vals, _ = self.basis.tabulate(ref_points)
        nodal = self.gather(coeffs, cells)
        return np.einsum("mj,cjk->cmk", vals, nodal)

    def locate(self, x: np.ndarray) -> tuple[int, np.ndarray]:
        """Cell index and reference coordinates containing physical point x."""
        x = np.asarray(x, dtype=float)
        lo = np.array([0.0] * (self.dim - 1) + [self.mesh.z_lo])
        h = self.spacings
        cidx = np.clip(((x - lo) / h).astype(int), 0, np.asarray(self.mesh.cell_counts) - 1)
        ref = (x - lo - cidx * h) / h
        flat = int(np.ravel_multi_index(tuple(cidx), self.mesh.cell_counts))
        return flat, ref

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolation of an admissible field onto the free dofs.

        Rejects fields that are not laterally periodic (follower vs leader
        mismatch above 1e-10) or nonzero on the Dirichlet set (above 1e-12).
        """
        nc = self.n_components
        fx = np.empty((self.n_nodes, nc))
        for i, x in enumerate(self.node_coords):
            fx[i] = np.atleast_1d(np.asarray(f(x), dtype=float))
        mismatch = np.abs(fx[self.is_follower] - fx[self.leader[self.is_follower]])
        if mismatch.size and mismatch.max() > 1e-10:
            raise ValueError(
                f"field is not laterally periodic (max follower/leader "
                f"mismatch {mismatch.max():.3e})"
            )
        on_dir = np.abs(fx[self.is_dirichlet])
        if on_dir.size and on_dir.max() > 1e-12:
            raise ValueError(
                f"field is nonzero on the Dirichlet boundary "
                f"(max |f| = {on_dir.max():.3e})"
            )
        free_mask = ~self.is_follower & ~self.is_dirichlet
        return fx[free_mask].reshape(-1)


FIELD_ALIASES = {"u": "u", "w": "w", "p": "p", "p_b": "p", "v": "v", "pi": "pi"}


class SpaceSet:
    """The five constrained unknown spaces on one stacked grid."""

    def __init__(self, grid: StackedGrid, U: FieldSpace, P: FieldSpace,
                 V: FieldSpace, PI: FieldSpace, p_family: ElementFamily):
        self.grid = grid
        self.U = U          # shared by u and w
        self.P = P
        self.V = V
        self.PI = PI
        self.p_family = p_family
        self._gram_cache: dict = {}

    def space(self, which: str) -> FieldSpace:
        key = FIELD_ALIASES.get(which)
        if key is None:
            raise KeyError(f"unknown field {which!r}")
        return {"u": self.U, "w": self.U, "p": self.P, "v": self.V, "pi": self.PI}[key]

    @property
    def n_u(self) -> int:
        return self.U.n_dofs

    @property
    def n_p(self) -> int:
        return self.P.n_dofs

    @property
    def n_v(self) -> int:
        return self.V.n_dofs

    @property
    def n_pi(self) -> int:
        return self.PI.n_dofs

    def state_offsets(self) -> tuple[int, int, int, int]:
        """Offsets of (u, w, p, v) in the concatenated semigroup state."""
        return 0, self.n_u, 2 * self.n_u, 2 * self.n_u + self.n_p

    @property
    def n_state(self) -> int:
        return 2 * self.n_u + self.n_p + self.n_v


@dataclass
class StateVector:
    """Coefficients of the semigroup state plus the Stokes multiplier."""

    u: np.ndarray
    w: np.ndarray
    p: np.ndarray
    v: np.ndarray
    pi: np.ndarray
    time: float = 0.0

    def validate(self, spaces: SpaceSet) -> "StateVector":
        sizes = (spaces.n_u, spaces.n_u, spaces.n_p, spaces.n_v, spaces.n_pi)
        for name, vec, n in zip("uwpv" + "π", (self.u, self.w, self.p, self.v, self.pi), sizes):
            if vec.shape != (n,):
                raise ValueError(f"state component {name} has shape {vec.shape}, expected ({n},)")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"state component {name} contains non-finite entries")
        return self

    def concat(self) -> np.ndarray:
        """The [u, w, p, v] block vector used with the X-inner-product Gram."""
        return np.concatenate([self.u, self.w, self.p, self.v])

    @staticmethod
    def zeros(spaces: SpaceSet, time: float = 0.0) -> "StateVector":
        return StateVector(
            u=np.zeros(spaces.n_u), w=np.zeros(spaces.n_u), p=np.zeros(spaces.n_p),
            v=np.zeros(spaces.n_v), pi=np.zeros(spaces.n_pi), time=time,
        )

    def copy(self) -> "StateVector":
        return StateVector(self.u.copy(), self.w.copy(), self.p.copy(),
                           self.v.copy(), self.pi.copy(), self.time)


def build_spaces(grid: StackedGrid, p_b_family: ElementFamily = Q1,
                 v_family: ElementFamily = Q2, pi_family: ElementFamily = Q1) -> SpaceSet:
    """Construct the constrained spaces; only the Taylor-Hood fluid pair is supported.

    Q2 velocities with Q1 multiplier are the classical inf-sup stable pairing;
    any other (v, pi) combination is rejected.
    """
    if (v_family, pi_family) != (Q2, Q1):
        raise ValueError(
            f"unsupported fluid pairing {v_family.label}/{pi_family.label}: "
            "only the Taylor-Hood pair Q2/Q1 is stable"
        )
    if p_b_family not in (Q1, Q2):
        raise ValueError(f"biot pressure family must be Q1 or Q2, got {p_b_family}")
    d = grid.spec.dimension
    U = FieldSpace(grid.biot, 2, d, dirichlet="top")
    P = FieldSpace(grid.biot, p_b_family.degree, 1, dirichlet="top")
    V = FieldSpace(grid.fluid, 2, d, dirichlet="bottom")
    PI = FieldSpace(grid.fluid, 1, 1, dirichlet=None)
    return SpaceSet(grid, U, P, V, PI, p_b_family)


def interpolate_field(spaces: SpaceSet, which: str, f) -> np.ndarray:
    """Nodal interpolant of f on the free dofs of one unknown."""
    return spaces.space(which).interpolate(f)


def norm(spaces: SpaceSet, which: str, kind: str, coeffs: np.ndarray,
         params=None) -> float:
    """Gram norm sqrt(c^T G c) of a coefficient vector.

    kind is "L2", "H1semi" or "energy"; the energy kind is the elastic form
    a_E and needs material parameters and a biot-box vector field.
    """
    from . import forms  # deferred: forms depends on spaces

    space = spaces.space(which)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.n_dofs,):
        raise ValueError(f"expected {space.n_dofs} coefficients for {which!r}, got {coeffs.shape}")
    key = (FIELD_ALIASES[which], kind, None if params is None else (params.lam, params.mu))
    G = spaces._gram_cache.get(key)
    if G is None:
        if kind == "L2":
            G = forms.assemble_mass(space)
        elif kind == "H1semi":
            G = forms.assemble_gradient_gram(space)
        elif kind == "energy":
            if FIELD_ALIASES[which] not in ("u", "w"):
                raise ValueError("energy norm is defined for the elastic fields u, w")
            if params is None:
                raise ValueError("energy norm needs material parameters")
            G = forms.assemble_elastic(space, params.lam, params.mu)
        else:
            raise ValueError(f"unknown norm kind {kind!r}")
        spaces._gram_cache[key] = G
    return float(np.sqrt(max(coeffs @ (G @ coeffs), 0.0)))
