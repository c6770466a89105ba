"""Stacked-box geometry: a poroelastic box on top of a fluid box.

The upper subdomain occupies (0,1)^d and the lower one (0,1)^(d-1) x (-1,0).
Both are structured tensor-product quad/hex meshes sharing one lateral
resolution, so the flat interface at x_d = 0 matches cell-for-cell and the
lateral faces pair up exactly for periodic identification.  Coordinates are
dimensionless (unit-box scale) throughout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

BIOT = "biot"
FLUID = "fluid"


@dataclass(frozen=True)
class GridSpec:
    """Resolution of the stacked grid.

    n_lat cells per lateral direction are shared by both boxes; n_b and n_f
    are the vertical cell counts of the upper (poroelastic) and lower (fluid)
    box.
    """

    dimension: int
    n_lat: int
    n_b: int
    n_f: int

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dimension}")
        for name, n in (("n_lat", self.n_lat), ("n_b", self.n_b), ("n_f", self.n_f)):
            if int(n) != n or n < 2:
                raise ValueError(f"{name} must be an integer >= 2, got {n}")

    @property
    def n_cells(self) -> int:
        return self.n_lat ** (self.dimension - 1) * (self.n_b + self.n_f)


@dataclass
class SubdomainMesh:
    """One structured box: vertices, cells and its named boundary facets."""

    name: str
    cell_counts: tuple[int, ...]          # cells per axis, vertical last
    z_lo: float                           # vertical extent [z_lo, z_hi]
    z_hi: float
    verts: np.ndarray = field(init=False)     # (n_verts, d)
    cells: np.ndarray = field(init=False)     # (n_cells, 2**d) vertex ids, C-ordered corners

    def __post_init__(self):
        d = len(self.cell_counts)
        axes = [np.linspace(0.0, 1.0, n + 1) for n in self.cell_counts[:-1]]
        axes.append(np.linspace(self.z_lo, self.z_hi, self.cell_counts[-1] + 1))
        grids = np.meshgrid(*axes, indexing="ij")
        self.verts = np.stack([g.ravel(order="C") for g in grids], axis=1)
        sizes = tuple(n + 1 for n in self.cell_counts)
        corner_offsets = list(itertools.product((0, 1), repeat=d))
        cell_list = []
        for cidx in itertools.product(*[range(n) for n in self.cell_counts]):
            ids = [
                np.ravel_multi_index(tuple(c + o for c, o in zip(cidx, off)), sizes)
                for off in corner_offsets
            ]
            cell_list.append(ids)
        self.cells = np.array(cell_list, dtype=int)

    @property
    def dim(self) -> int:
        return len(self.cell_counts)

    @property
    def vert_sizes(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.cell_counts)

    @property
    def spacings(self) -> np.ndarray:
        h = [1.0 / n for n in self.cell_counts[:-1]]
        h.append((self.z_hi - self.z_lo) / self.cell_counts[-1])
        return np.array(h)

    def horizontal_facets(self, level: str) -> tuple[np.ndarray, np.ndarray]:
        """Facets on the bottom or top vertical plane.

        Returns (facet_verts, parent_cells) where facet_verts is
        (n_facets, 2**(d-1)) vertex ids and parent_cells the adjacent cell ids,
        both ordered by lateral cell index.
        """
        d = self.dim
        nv = self.cell_counts[-1]
        layer = 0 if level == "bottom" else nv - 1
        vlevel = 0 if level == "bottom" else nv
        sizes = self.vert_sizes
        facets, parents = [], []
        lat_ranges = [range(n) for n in self.cell_counts[:-1]]
        for lat in itertools.product(*lat_ranges):
            cell_flat = np.ravel_multi_index(lat + (layer,), self.cell_counts)
            ids = [
                np.ravel_multi_index(tuple(c + o for c, o in zip(lat, off)) + (vlevel,), sizes)
                for off in itertools.product((0, 1), repeat=d - 1)
            ]
            facets.append(ids)
            parents.append(cell_flat)
        return np.array(facets, dtype=int), np.array(parents, dtype=int)

    def lateral_vertex_pairs(self) -> dict[int, int]:
        """Symmetric map between diametrically opposed lateral boundary vertices.

        Each pair differs by a translation of one period in exactly one
        lateral coordinate.  Corner vertices sit on several lateral faces; the
        map flips the smallest-index extremal axis, which keeps it an
        involution.
        """
        sizes = self.vert_sizes
        pairs: dict[int, int] = {}
        for multi in itertools.product(*[range(s) for s in sizes]):
            flip = None
            for a in range(self.dim - 1):
                if multi[a] in (0, sizes[a] - 1):
                    flip = a
                    break
            if flip is None:
                continue
            partner = list(multi)
            partner[flip] = sizes[flip] - 1 if multi[flip] == 0 else 0
            v = np.ravel_multi_index(multi, sizes)
            w = np.ravel_multi_index(tuple(partner), sizes)
            pairs[v] = w
        return pairs


@dataclass
class StackedGrid:
    """The two matched boxes plus interface and boundary facet sets."""

    spec: GridSpec
    biot: SubdomainMesh
    fluid: SubdomainMesh
    gamma_b: tuple[np.ndarray, np.ndarray]     # top of the biot box, x_d = 1
    gamma_f: tuple[np.ndarray, np.ndarray]     # bottom of the fluid box, x_d = -1
    gamma_i_biot: tuple[np.ndarray, np.ndarray]   # interface seen from the biot side
    gamma_i_fluid: tuple[np.ndarray, np.ndarray]  # interface seen from the fluid side
    lateral_pairs_biot: dict[int, int]
    lateral_pairs_fluid: dict[int, int]

    @property
    def n_cells(self) -> int:
        return self.biot.cells.shape[0] + self.fluid.cells.shape[0]

    def subdomain(self, name: str) -> SubdomainMesh:
        return self.biot if name == BIOT else self.fluid


@dataclass
class InterfaceMap:
    """Bijection between the two facet views of the interface.

    Row i pairs biot-side facet biot_facets[i] with fluid-side facet
    fluid_facets[i]; paired facets share their vertex coordinate sets.  The
    interface normal is +e_d out of the fluid box and -e_d out of the biot box.
    """

    biot_facets: np.ndarray        # indices into grid.gamma_i_biot
    fluid_facets: np.ndarray       # indices into grid.gamma_i_fluid
    centroids: np.ndarray          # (n_pairs, d)
    normal_fluid: np.ndarray       # +e_d
    normal_biot: np.ndarray        # -e_d

    def __len__(self) -> int:
        return len(self.biot_facets)


def build_grid(spec: GridSpec) -> StackedGrid:
    """Build the stacked-box grid for a validated spec."""
    d = spec.dimension
    lat = (spec.n_lat,) * (d - 1)
    biot = SubdomainMesh(BIOT, lat + (spec.n_b,), 0.0, 1.0)
    fluid = SubdomainMesh(FLUID, lat + (spec.n_f,), -1.0, 0.0)
    return StackedGrid(
        spec=spec,
        biot=biot,
        fluid=fluid,
        gamma_b=biot.horizontal_facets("top"),
        gamma_f=fluid.horizontal_facets("bottom"),
        gamma_i_biot=biot.horizontal_facets("bottom"),
        gamma_i_fluid=fluid.horizontal_facets("top"),
        lateral_pairs_biot=biot.lateral_vertex_pairs(),
        lateral_pairs_fluid=fluid.lateral_vertex_pairs(),
    )


def interface_map(grid: StackedGrid) -> InterfaceMap:
    """Match biot-side and fluid-side interface facets by geometry.

    Fails loudly on a corrupt grid: mismatched facet counts, or any facet
    whose partner's vertex coordinates do not coincide within 1e-12.
    """
    d = grid.spec.dimension
    bf, _ = grid.gamma_i_biot
    ff, _ = grid.gamma_i_fluid
    if bf.shape[0] != ff.shape[0]:
        raise ValueError(
            f"interface facet counts differ: {bf.shape[0]} biot-side vs "
            f"{ff.shape[0]} fluid-side (corrupt grid)"
        )
    b_cent = grid.biot.verts[bf].mean(axis=1)
    f_cent = grid.fluid.verts[ff].mean(axis=1)
    order_b = np.lexsort(np.round(b_cent.T[::-1], 12))
    order_f = np.lexsort(np.round(f_cent.T[::-1], 12))
    dist = np.linalg.norm(b_cent[order_b] - f_cent[order_f], axis=1)
    if dist.size and dist.max() > 1e-12:
        raise ValueError(
            f"interface facets do not match geometrically "
            f"(max centroid distance {dist.max():.3e})"
        )
    for i_b, i_f in zip(order_b, order_f):
        cb = np.array(sorted(map(tuple, np.round(grid.biot.verts[bf[i_b]], 12))))
        cf = np.array(sorted(map(tuple, np.round(grid.fluid.verts[ff[i_f]], 12))))
        if not np.array_equal(cb, cf):
            raise ValueError("paired interface facets have different vertex sets")
    normal = np.zeros(d)
    normal[d - 1] = 1.0
    return InterfaceMap(
        biot_facets=order_b,
        fluid_facets=order_f,
        centroids=b_cent[order_b],
        normal_fluid=normal,
        normal_biot=-normal,
    )
