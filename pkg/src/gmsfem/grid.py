"""Two-level structured grids, coarse neighborhoods and their four-coloring.

Node and cell numbering is row-major with x running fastest, on both levels.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class GridHierarchy:
    """Coarse grid of ``nx * ny`` rectangles, each split into ``n_fine**2`` fine cells."""

    nx: int
    ny: int
    n_fine: int
    domain: tuple = (0.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        for name in ("nx", "ny", "n_fine"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate domain {self.domain!r}")

    # coarse level
    @property
    def Hx(self):
        return (self.domain[1] - self.domain[0]) / self.nx

    @property
    def Hy(self):
        return (self.domain[3] - self.domain[2]) / self.ny

    @property
    def H(self):
        return max(self.Hx, self.Hy)

    @property
    def n_coarse_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_coarse_cells(self):
        return self.nx * self.ny

    # fine level
    @property
    def fnx(self):
        return self.nx * self.n_fine

    @property
    def fny(self):
        return self.ny * self.n_fine

    @property
    def hx(self):
        return self.Hx / self.n_fine

    @property
    def hy(self):
        return self.Hy / self.n_fine

    @property
    def h(self):
        return max(self.hx, self.hy)

    @property
    def n_nodes(self):
        return (self.fnx + 1) * (self.fny + 1)

    @property
    def n_cells(self):
        return self.fnx * self.fny

    @property
    def cell_shape(self):
        """Shape ``(rows, cols)`` of a per-fine-cell array."""
        return (self.fny, self.fnx)

    def node_id(self, i, j):
        return np.asarray(j) * (self.fnx + 1) + np.asarray(i)

    def node_ij(self, node):
        node = np.asarray(node)
        return node % (self.fnx + 1), node // (self.fnx + 1)

    def cell_id(self, i, j):
        return np.asarray(j) * self.fnx + np.asarray(i)

    def coarse_node_id(self, I, J):
        return np.asarray(J) * (self.nx + 1) + np.asarray(I)

    def coarse_node_ij(self, node):
        node = np.asarray(node)
        return node % (self.nx + 1), node // (self.nx + 1)

    @cached_property
    def node_coords(self):
        """``(n_nodes, 2)`` array of fine node coordinates."""
        x = np.linspace(self.domain[0], self.domain[1], self.fnx + 1)
        y = np.linspace(self.domain[2], self.domain[3], self.fny + 1)
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cell_centers(self):
        x = self.domain[0] + (np.arange(self.fnx) + 0.5) * self.hx
        y = self.domain[2] + (np.arange(self.fny) + 0.5) * self.hy
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cell_nodes(self):
        """``(n_cells, 4)`` node ids per fine cell, counter-clockwise from lower left."""
        i, j = np.meshgrid(np.arange(self.fnx), np.arange(self.fny))
        i, j = i.ravel(), j.ravel()
        return np.column_stack([
            self.node_id(i, j), self.node_id(i + 1, j),
            self.node_id(i + 1, j + 1), self.node_id(i, j + 1),
        ])

    @cached_property
    def boundary_nodes(self):
        """Fine nodes on the domain boundary, sorted."""
        i, j = self.node_ij(np.arange(self.n_nodes))
        on = (i == 0) | (i == self.fnx) | (j == 0) | (j == self.fny)
        return np.flatnonzero(on)

    @cached_property
    def free_nodes(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def coarse_node_is_interior(self):
        I, J = self.coarse_node_ij(np.arange(self.n_coarse_nodes))
        return (I > 0) & (I < self.nx) & (J > 0) & (J < self.ny)

    def coarse_node_fine_id(self, node):
        I, J = self.coarse_node_ij(node)
        return self.node_id(I * self.n_fine, J * self.n_fine)

    def neighborhood(self, node):
        return neighborhood_of(self, node)


def build_grids(domain=(0.0, 1.0, 0.0, 1.0), nx=1, ny=1, n_fine=1):
    """Build the coarse/fine hierarchy on an axis-aligned rectangle."""
    return GridHierarchy(nx=nx, ny=ny, n_fine=n_fine, domain=tuple(float(v) for v in domain))


@dataclass(frozen=True)
class CoarseNeighborhood:
    """Union of the coarse elements touching one coarse node.

    The neighborhood is always a rectangle of fine cells, so the local node
    numbering is again row-major over that rectangle.
    """

    grids: GridHierarchy = field(repr=False)
    center: int
    elements: tuple
    # inclusive fine-node index ranges of the closed rectangle
    i0: int
    i1: int
    j0: int
    j1: int

    @property
    def shape_cells(self):
        return (self.j1 - self.j0, self.i1 - self.i0)

    @property
    def n_local_nodes(self):
        return (self.i1 - self.i0 + 1) * (self.j1 - self.j0 + 1)

    @cached_property
    def nodes(self):
        """Global ids of all fine nodes of the closed neighborhood, local order."""
        i, j = np.meshgrid(np.arange(self.i0, self.i1 + 1), np.arange(self.j0, self.j1 + 1))
        return self.grids.node_id(i.ravel(), j.ravel())

    @cached_property
    def _local_ij(self):
        nlx = self.i1 - self.i0 + 1
        k = np.arange(self.n_local_nodes)
        return k % nlx, k // nlx

    @cached_property
    def local_interior(self):
        """Local indices of fine nodes strictly inside the neighborhood."""
        li, lj = self._local_ij
        inside = (li > 0) & (li < self.i1 - self.i0) & (lj > 0) & (lj < self.j1 - self.j0)
        return np.flatnonzero(inside)

    @cached_property
    def local_boundary(self):
        """Local indices of the fine nodes on the neighborhood boundary."""
        li, lj = self._local_ij
        inside = (li > 0) & (li < self.i1 - self.i0) & (lj > 0) & (lj < self.j1 - self.j0)
        return np.flatnonzero(~inside)

    @property
    def interior_nodes(self):
        return self.nodes[self.local_interior]

    @property
    def boundary_nodes(self):
        return self.nodes[self.local_boundary]

    @cached_property
    def cells(self):
        """Global ids of the fine cells of the neighborhood, local order."""
        i, j = np.meshgrid(np.arange(self.i0, self.i1), np.arange(self.j0, self.j1))
        return self.grids.cell_id(i.ravel(), j.ravel())

    def cell_slice(self):
        """Slice pair selecting this neighborhood from a ``cell_shape`` array."""
        return slice(self.j0, self.j1), slice(self.i0, self.i1)

    @cached_property
    def local_on_domain_boundary(self):
        """Local indices of the closed-neighborhood nodes that lie on the domain boundary."""
        g = self.grids
        li, lj = self._local_ij
        gi, gj = li + self.i0, lj + self.j0
        return np.flatnonzero((gi == 0) | (gi == g.fnx) | (gj == 0) | (gj == g.fny))

    def extend(self, local_values):
        """Zero-extend a vector over the local nodes to the whole fine grid."""
        out = np.zeros(self.grids.n_nodes)
        out[self.nodes] = local_values
        return out


def neighborhood_of(grids, node_id):
    """Coarse neighborhood of coarse node ``node_id``."""
    node_id = int(node_id)
    if not 0 <= node_id < grids.n_coarse_nodes:
        raise IndexError(f"coarse node {node_id} out of range [0, {grids.n_coarse_nodes})")
    I, J = (int(v) for v in grids.coarse_node_ij(node_id))
    ex = [e for e in (I - 1, I) if 0 <= e < grids.nx]
    ey = [e for e in (J - 1, J) if 0 <= e < grids.ny]
    elements = tuple(ej * grids.nx + ei for ej in ey for ei in ex)
    n = grids.n_fine
    return CoarseNeighborhood(
        grids=grids, center=node_id, elements=elements,
        i0=min(ex) * n, i1=(max(ex) + 1) * n,
        j0=min(ey) * n, j1=(max(ey) + 1) * n,
    )


def enrichable_nodes(grids, convention="all"):
    """Coarse nodes that carry basis functions.

    ``"all"`` uses every coarse node, ``"interior"`` only those off the domain
    boundary.
    """
    if convention == "all":
        return np.arange(grids.n_coarse_nodes)
    if convention == "interior":
        return np.flatnonzero(grids.coarse_node_is_interior)
    raise ValueError(f"unknown DOF convention {convention!r}")


# (x parity, y parity) with 1 = odd, in sweep order
COLOR_ORDER = ((1, 1), (1, 0), (0, 1), (0, 0))


@dataclass(frozen=True)
class Coloring:
    """Four disjoint sets of coarse nodes whose neighborhoods do not overlap."""

    colors: tuple

    def __iter__(self):
        return iter(self.colors)

    def __len__(self):
        return len(self.colors)

    def __getitem__(self, k):
        return self.colors[k]

    @property
    def all_nodes(self):
        return np.sort(np.concatenate(self.colors))


def four_coloring(grids, nodes=None):
    """Split ``nodes`` (default: all coarse nodes) by lattice-coordinate parity."""
    if nodes is None:
        nodes = np.arange(grids.n_coarse_nodes)
    nodes = np.asarray(nodes, dtype=int)
    I, J = grids.coarse_node_ij(nodes)
    colors = tuple(
        nodes[((I % 2) == px) & ((J % 2) == py)] for px, py in COLOR_ORDER
    )
    return Coloring(colors=colors)
