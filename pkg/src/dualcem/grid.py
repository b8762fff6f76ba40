"""Nested structured coarse/fine grids, oversampled patches and the bilinear
partition of unity on the coarse grid.

Nodes and cells are numbered lexicographically (x fastest). Coarse element
``j`` sits at coarse index ``(j % n_coarse_x, j // n_coarse_x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class InvalidConfiguration(ValueError):
    """Raised for inconsistent grid or problem sizes."""


@dataclass(frozen=True, eq=False)
class GridHierarchy:
    domain: tuple[float, float, float, float]
    n_coarse: tuple[int, int]
    refinement: int

    def __post_init__(self):
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise InvalidConfiguration(f"degenerate domain {self.domain}")
        if min(self.n_coarse) < 1 or self.refinement < 1:
            raise InvalidConfiguration(
                f"non-positive grid sizes n_coarse={self.n_coarse}, refinement={self.refinement}")

    # sizes ------------------------------------------------------------------
    @property
    def n_fine(self) -> tuple[int, int]:
        return (self.n_coarse[0] * self.refinement, self.n_coarse[1] * self.refinement)

    @property
    def h(self) -> tuple[float, float]:
        x0, x1, y0, y1 = self.domain
        return ((x1 - x0) / self.n_fine[0], (y1 - y0) / self.n_fine[1])

    @property
    def H(self) -> tuple[float, float]:
        x0, x1, y0, y1 = self.domain
        return ((x1 - x0) / self.n_coarse[0], (y1 - y0) / self.n_coarse[1])

    @property
    def n_nodes(self) -> int:
        return (self.n_fine[0] + 1) * (self.n_fine[1] + 1)

    @property
    def n_cells(self) -> int:
        return self.n_fine[0] * self.n_fine[1]

    @property
    def n_dofs(self) -> int:
        """Two-continuum block layout: [continuum 1 nodes | continuum 2 nodes]."""
        return 2 * self.n_nodes

    @property
    def n_elements(self) -> int:
        return self.n_coarse[0] * self.n_coarse[1]

    @property
    def n_coarse_nodes(self) -> int:
        return (self.n_coarse[0] + 1) * (self.n_coarse[1] + 1)

    # index maps -------------------------------------------------------------
    def node_index(self, ix, iy):
        return np.asarray(iy) * (self.n_fine[0] + 1) + np.asarray(ix)

    def cell_index(self, cx, cy):
        return np.asarray(cy) * self.n_fine[0] + np.asarray(cx)

    def element_index(self, jx, jy) -> int:
        return int(jy) * self.n_coarse[0] + int(jx)

    def element_coords(self, j: int) -> tuple[int, int]:
        if not 0 <= j < self.n_elements:
            raise IndexError(f"coarse element {j} out of range [0, {self.n_elements})")
        return j % self.n_coarse[0], j // self.n_coarse[0]

    @cached_property
    def node_coordinates(self) -> np.ndarray:
        x0, _, y0, _ = self.domain
        hx, hy = self.h
        ix, iy = np.meshgrid(np.arange(self.n_fine[0] + 1), np.arange(self.n_fine[1] + 1))
        return np.column_stack([x0 + hx * ix.ravel(), y0 + hy * iy.ravel()])

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """(n_cells, 4) node ids in local order (0,0), (1,0), (0,1), (1,1)."""
        nx, ny = self.n_fine
        cx, cy = np.meshgrid(np.arange(nx), np.arange(ny))
        cx, cy = cx.ravel(), cy.ravel()
        n00 = self.node_index(cx, cy)
        return np.column_stack([n00, n00 + 1, n00 + nx + 1, n00 + nx + 2])

    @cached_property
    def cell_element(self) -> np.ndarray:
        """Coarse element owning each fine cell."""
        nx, ny = self.n_fine
        cx, cy = np.meshgrid(np.arange(nx), np.arange(ny))
        r = self.refinement
        return ((cy // r) * self.n_coarse[0] + cx // r).ravel()

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        nx, ny = self.n_fine
        ix, iy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
        mask = (ix == 0) | (ix == nx) | (iy == 0) | (iy == ny)
        return np.flatnonzero(mask.ravel())

    @cached_property
    def boundary_dofs(self) -> np.ndarray:
        b = self.boundary_nodes
        return np.concatenate([b, b + self.n_nodes])

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.boundary_dofs] = False
        return np.flatnonzero(mask)

    def element_cells(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.cell_element == j)

    def element_nodes(self, j: int) -> np.ndarray:
        """Fine nodes of the closed coarse element, lexicographic."""
        jx, jy = self.element_coords(j)
        r = self.refinement
        ix, iy = np.meshgrid(np.arange(jx * r, (jx + 1) * r + 1), np.arange(jy * r, (jy + 1) * r + 1))
        return self.node_index(ix.ravel(), iy.ravel())

    def __repr__(self):
        return (f"GridHierarchy(domain={self.domain}, n_coarse={self.n_coarse}, "
                f"n_fine={self.n_fine})")


def build_hierarchy(domain=(0.0, 1.0, 0.0, 1.0), n_coarse=4, refinement_factor=4) -> GridHierarchy:
    """Coarse grid with ``n_coarse`` elements per axis, each refined
    ``refinement_factor`` times per axis."""
    if np.ndim(n_coarse) == 0:
        n_coarse = (n_coarse, n_coarse)
    n_coarse = tuple(int(n) for n in n_coarse)
    if min(n_coarse) <= 0 or refinement_factor <= 0:
        raise InvalidConfiguration(
            f"grid sizes must be positive (n_coarse={n_coarse}, refinement={refinement_factor})")
    return GridHierarchy(tuple(float(v) for v in domain), n_coarse, int(refinement_factor))


@dataclass(frozen=True, eq=False)
class Patch:
    """Oversampled region K_{j,m}: the block of coarse elements within
    Chebyshev distance ``m`` of element ``j``, clipped to the domain."""

    hier: GridHierarchy
    j: int
    m: int
    element_range: tuple[int, int, int, int]  # jx0, jx1, jy0, jy1 (inclusive)
    nodes: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)  # mask over ``nodes``: not on patch boundary
    cells: np.ndarray = field(repr=False)

    @property
    def elements(self) -> np.ndarray:
        jx0, jx1, jy0, jy1 = self.element_range
        jx, jy = np.meshgrid(np.arange(jx0, jx1 + 1), np.arange(jy0, jy1 + 1))
        return (jy * self.hier.n_coarse[0] + jx).ravel()

    @property
    def shape(self) -> tuple[int, int]:
        jx0, jx1, jy0, jy1 = self.element_range
        return (jx1 - jx0 + 1, jy1 - jy0 + 1)

    @property
    def dofs(self) -> np.ndarray:
        """Global dofs of all patch nodes, block layout."""
        return np.concatenate([self.nodes, self.nodes + self.hier.n_nodes])

    @property
    def interior_dofs(self) -> np.ndarray:
        """Global dofs of V_0(K_{j,m}) (zero trace on the patch boundary)."""
        inner = self.nodes[self.interior]
        return np.concatenate([inner, inner + self.hier.n_nodes])

    def covers_domain(self) -> bool:
        return self.shape == self.hier.n_coarse

    def global_to_local(self) -> dict[int, int]:
        return {int(g): i for i, g in enumerate(self.dofs)}


def oversample(hier: GridHierarchy, j: int, m: int) -> Patch:
    if m < 0:
        raise InvalidConfiguration(f"oversampling layers must be >= 0, got {m}")
    jx, jy = hier.element_coords(j)
    ncx, ncy = hier.n_coarse
    jx0, jx1 = max(jx - m, 0), min(jx + m, ncx - 1)
    jy0, jy1 = max(jy - m, 0), min(jy + m, ncy - 1)
    r = hier.refinement
    ix0, ix1, iy0, iy1 = jx0 * r, (jx1 + 1) * r, jy0 * r, (jy1 + 1) * r
    ix, iy = np.meshgrid(np.arange(ix0, ix1 + 1), np.arange(iy0, iy1 + 1))
    ix, iy = ix.ravel(), iy.ravel()
    nodes = hier.node_index(ix, iy)
    interior = (ix > ix0) & (ix < ix1) & (iy > iy0) & (iy < iy1)
    cx, cy = np.meshgrid(np.arange(ix0, ix1), np.arange(iy0, iy1))
    cells = hier.cell_index(cx.ravel(), cy.ravel())
    return Patch(hier, j, m, (jx0, jx1, jy0, jy1), nodes, interior, cells)


def element_patch(hier: GridHierarchy, j: int) -> Patch:
    return oversample(hier, j, 0)


def region(hier: GridHierarchy, elements) -> np.ndarray:
    """Fine cells of a union of coarse elements."""
    return np.flatnonzero(np.isin(hier.cell_element, np.asarray(elements)))


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Bilinear hats chi_k on the coarse grid.

    ``chi`` is a sparse (n_coarse_nodes, n_fine_nodes) matrix of nodal values.
    ``grad_sq`` holds the cell average of sum_k |grad chi_k|^2 per fine cell.
    ``edge_grad_sq_x`` / ``edge_grad_sq_y`` give sum_k (d chi_k / ds)^2 on
    horizontal / vertical fine edges (constant along each edge).
    """

    hier: GridHierarchy
    chi: sp.csr_matrix
    grad_sq: np.ndarray

    def edge_grad_sq(self, iy_or_ix: np.ndarray, horizontal: bool) -> np.ndarray:
        """Tangential sum_k (d chi_k/ds)^2 on fine edges at fine row ``iy``
        (horizontal edges) or fine column ``ix`` (vertical edges)."""
        r = self.hier.refinement
        t = (np.asarray(iy_or_ix) % r) / r
        Hx, Hy = self.hier.H
        width = Hx if horizontal else Hy
        return 2.0 * ((1.0 - t) ** 2 + t ** 2) / width ** 2


def _hat_1d(n_coarse: int, r: int) -> sp.csr_matrix:
    """(n_coarse+1, n_coarse*r+1) nodal values of 1-D coarse hats."""
    nf = n_coarse * r
    i = np.arange(nf + 1)
    left = i // r
    t = (i % r) / r
    rows = np.concatenate([left, left + 1])
    cols = np.concatenate([i, i])
    vals = np.concatenate([1.0 - t, t])
    keep = (rows <= n_coarse) & (vals != 0.0)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n_coarse + 1, nf + 1))


def partition_of_unity(hier: GridHierarchy) -> PartitionOfUnity:
    r = hier.refinement
    hx_hat = _hat_1d(hier.n_coarse[0], r)
    hy_hat = _hat_1d(hier.n_coarse[1], r)
    # lexicographic coarse node k = ky*(ncx+1)+kx, fine node = iy*(nfx+1)+ix
    chi = sp.kron(hy_hat, hx_hat, format="csr")

    # Inside a coarse element with local coordinates (xi, eta) in [0,1]^2:
    # sum_k |grad chi_k|^2 = 2((1-eta)^2+eta^2)/Hx^2 + 2((1-xi)^2+xi^2)/Hy^2.
    # Cell averages of (1-t)^2 + t^2 over [a, a+d] are exact in closed form.
    Hx, Hy = hier.H
    d = 1.0 / r
    a = np.arange(r) * d

    def avg(a0):
        b0 = a0 + d
        prim = lambda t: -(1.0 - t) ** 3 / 3.0 + t ** 3 / 3.0
        return (prim(b0) - prim(a0)) / d

    gx = avg(a)  # per local column: average of (1-xi)^2+xi^2
    nfx, nfy = hier.n_fine
    cx, cy = np.meshgrid(np.arange(nfx), np.arange(nfy))
    grad_sq = 2.0 * avg(a)[cy % r] / Hx ** 2 + 2.0 * gx[cx % r] / Hy ** 2
    return PartitionOfUnity(hier, chi, grad_sq.ravel())
