"""Sparse Q1 assembly of the bilinear forms a, q, a_Q, s, c and load vectors.

All two-continuum operators use the block layout
``[continuum 1 nodes | continuum 2 nodes]``. Cell coefficients are piecewise
constant and element integrals use 2x2 Gauss quadrature, which is exact for
the bilinear products involved.

Every ``assemble_*`` function takes an optional ``cells`` restriction (fine
cell ids, e.g. from a patch or a union of coarse elements); the result is
then the form integrated over those cells only, still in global numbering.
``patch_operator`` converts such a matrix to patch-local numbering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .grid import GridHierarchy, Patch, PartitionOfUnity
from .media import MediaField

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@lru_cache(maxsize=32)
def q1_reference(hx: float, hy: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Element stiffness, mass and hat integrals on an ``hx`` x ``hy`` cell.

    Local node order (0,0), (1,0), (0,1), (1,1). Built with 2x2 Gauss.
    """
    K = np.zeros((4, 4))
    M = np.zeros((4, 4))
    b = np.zeros(4)
    for gx in _GAUSS:
        for gy in _GAUSS:
            x, y = 0.5 * (gx + 1.0), 0.5 * (gy + 1.0)
            w = 0.25 * hx * hy
            N = np.array([(1 - x) * (1 - y), x * (1 - y), (1 - x) * y, x * y])
            dNx = np.array([-(1 - y), (1 - y), -y, y]) / hx
            dNy = np.array([-(1 - x), -x, (1 - x), x]) / hy
            K += w * (np.outer(dNx, dNx) + np.outer(dNy, dNy))
            M += w * np.outer(N, N)
            b += w * N
    return K, M, b


def _scatter(hier: GridHierarchy, local: np.ndarray, coef: np.ndarray, cells) -> sp.csr_matrix:
    nodes = hier.cell_nodes
    if cells is not None:
        nodes = nodes[cells]
        coef = coef[cells]
    rows = np.repeat(nodes, 4, axis=1).ravel()
    cols = np.tile(nodes, (1, 4)).ravel()
    data = (coef[:, None] * local.ravel()[None, :]).ravel()
    n = hier.n_nodes
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def _fracture_edges(hier: GridHierarchy, media: MediaField):
    """Fine edges of all fractures as (node_a, node_b, owner_cell, horizontal,
    iy_or_ix, fracture index). Each edge is owned by one adjacent cell so that
    element-wise sums reproduce the global line integrals."""
    nx, ny = hier.n_fine
    out = []
    for fi, f in enumerate(media.fractures):
        for (ax, ay), (bx, by) in f.edges():
            horizontal = ay == by
            if horizontal:
                cx, cy = min(ax, bx), min(ay, ny - 1)
                line = ay
            else:
                cx, cy = min(ax, nx - 1), min(ay, by)
                line = ax
            out.append((int(hier.node_index(ax, ay)), int(hier.node_index(bx, by)),
                        int(hier.cell_index(cx, cy)), horizontal, line, fi))
    return out


def _fracture_matrix(hier, media, cells, weight) -> sp.csr_matrix:
    """1-D edge contributions; ``weight(edge, fracture) -> (kind, value)`` where
    kind is 'stiff' or 'mass'."""
    n = hier.n_nodes
    if not media.fractures:
        return sp.csr_matrix((n, n))
    keep = None if cells is None else set(np.asarray(cells).tolist())
    rows, cols, vals = [], [], []
    hx, hy = hier.h
    for a, b, owner, horizontal, line, fi in _fracture_edges(hier, media):
        if keep is not None and owner not in keep:
            continue
        length = hx if horizontal else hy
        kind, value = weight(horizontal, line, media.fractures[fi])
        if kind == "stiff":
            loc = value / length * np.array([[1.0, -1.0], [-1.0, 1.0]])
        else:
            loc = value * length / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        for p, ip in enumerate((a, b)):
            for q, iq in enumerate((a, b)):
                rows.append(ip)
                cols.append(iq)
                vals.append(loc[p, q])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _block_diag(A1, A2) -> sp.csr_matrix:
    return sp.block_diag([A1, A2], format="csr")


def assemble_stiffness(hier: GridHierarchy, media: MediaField, i: int, cells=None) -> sp.csr_matrix:
    """a_i: int kappa_i grad u . grad v plus fracture line stiffness
    d_l kappa_{l,i} u_s v_s."""
    media.check_grid(hier)
    K, _, _ = q1_reference(*hier.h)
    A = _scatter(hier, K, media.kappa[i], cells)
    A = A + _fracture_matrix(hier, media, cells,
                             lambda hz, line, f: ("stiff", f.aperture * f.kappa[i]))
    return A.tocsr()


def assemble_mass(hier: GridHierarchy, coef=None, cells=None) -> sp.csr_matrix:
    """Scalar Q1 mass matrix with optional per-cell weight."""
    _, M, _ = q1_reference(*hier.h)
    if coef is None:
        coef = np.ones(hier.n_cells)
    return _scatter(hier, M, np.asarray(coef, dtype=float), cells)


def assemble_exchange(hier: GridHierarchy, media: MediaField, cells=None) -> sp.csr_matrix:
    """q = rho*sigma*[M, -M; -M, M]."""
    media.check_grid(hier)
    M = media.rho * media.sigma * assemble_mass(hier, cells=cells)
    return sp.bmat([[M, -M], [-M, M]], format="csr")


def assemble_weighted_mass_s(hier: GridHierarchy, media: MediaField, pou: PartitionOfUnity,
                             cells=None) -> sp.csr_matrix:
    """s: mass weighted by kappa_i * sum_k |grad chi_k|^2 (cell averaged)."""
    media.check_grid(hier)
    blocks = []
    for i in range(2):
        S = assemble_mass(hier, media.kappa[i] * pou.grad_sq, cells)
        S = S + _fracture_matrix(
            hier, media, cells,
            lambda hz, line, f: ("mass", f.aperture * f.kappa[i]
                                 * float(pou.edge_grad_sq(line, hz))))
        blocks.append(S)
    return _block_diag(*blocks)


def assemble_capacity(hier: GridHierarchy, media: MediaField, cells=None) -> sp.csr_matrix:
    media.check_grid(hier)
    blocks = []
    for i in range(2):
        C = assemble_mass(hier, media.capacity[i], cells)
        C = C + _fracture_matrix(hier, media, cells,
                                 lambda hz, line, f: ("mass", f.aperture * f.capacity[i]))
        blocks.append(C)
    return _block_diag(*blocks)


def assemble_aq(hier: GridHierarchy, media: MediaField, cells=None) -> sp.csr_matrix:
    A = _block_diag(assemble_stiffness(hier, media, 0, cells), assemble_stiffness(hier, media, 1, cells))
    return (A + assemble_exchange(hier, media, cells)).tocsr()


def _gauss_points(hier: GridHierarchy):
    """Physical Gauss points (n_cells, 4, 2) and shape values (4 points, 4 nodes)."""
    x0, _, y0, _ = hier.domain
    hx, hy = hier.h
    nx, ny = hier.n_fine
    cx, cy = np.meshgrid(np.arange(nx), np.arange(ny))
    cx, cy = cx.ravel(), cy.ravel()
    pts, shapes = [], []
    for gy in _GAUSS:
        for gx in _GAUSS:
            x, y = 0.5 * (gx + 1.0), 0.5 * (gy + 1.0)
            pts.append(np.column_stack([x0 + (cx + x) * hx, y0 + (cy + y) * hy]))
            shapes.append([(1 - x) * (1 - y), x * (1 - y), (1 - x) * y, x * y])
    return np.stack(pts, axis=1), np.array(shapes)


def assemble_load(hier: GridHierarchy, f, rho: float = 1.0) -> np.ndarray:
    """Block load vector rho*(f_i, v_i).

    ``f`` is a pair of per-continuum sources; each is a scalar, a callable
    ``f(x, y)`` evaluated at Gauss points, or an array of per-cell values.
    """
    _, _, bref = q1_reference(*hier.h)
    hx, hy = hier.h
    pts, shapes = _gauss_points(hier)
    out = np.zeros(hier.n_dofs)
    nodes = hier.cell_nodes
    for i, fi in enumerate(f):
        if callable(fi):
            vals = np.asarray(fi(pts[..., 0], pts[..., 1]), dtype=float)
            vals = np.broadcast_to(vals, pts.shape[:2])
            w = 0.25 * hx * hy
            local = w * vals @ shapes  # (n_cells, 4)
        else:
            vals = np.broadcast_to(np.asarray(fi, dtype=float), (hier.n_cells,))
            local = vals[:, None] * bref[None, :]
        b = np.zeros(hier.n_nodes)
        np.add.at(b, nodes, local)
        out[i * hier.n_nodes:(i + 1) * hier.n_nodes] = rho * b
    return out


def apply_dirichlet(obj, boundary_dofs):
    """Symmetric elimination of ``boundary_dofs``: zero rows and columns with a
    unit diagonal for matrices, zero entries for vectors. Idempotent."""
    boundary_dofs = np.asarray(boundary_dofs)
    if sp.issparse(obj):
        n = obj.shape[0]
        keep = np.ones(n)
        keep[boundary_dofs] = 0.0
        D = sp.diags(keep)
        fix = np.zeros(n)
        fix[boundary_dofs] = 1.0
        return (D @ obj @ D + sp.diags(fix)).tocsr()
    out = np.array(obj, dtype=float, copy=True)
    out[..., boundary_dofs] = 0.0
    return out


def patch_operator(A: sp.spmatrix, patch: Patch, interior_only: bool = False) -> sp.csr_matrix:
    """Restrict a global-numbered operator to patch-local numbering."""
    dofs = patch.interior_dofs if interior_only else patch.dofs
    return A.tocsr()[dofs][:, dofs].tocsr()


@dataclass(frozen=True, eq=False)
class Operators:
    """Assembled global operators for one (hierarchy, media) pair."""

    hier: GridHierarchy
    media: MediaField
    pou: PartitionOfUnity
    A: sp.csr_matrix  # block stiffness a
    Q: sp.csr_matrix  # exchange q
    AQ: sp.csr_matrix
    S: sp.csr_matrix
    C: sp.csr_matrix
    M: sp.csr_matrix  # unweighted block mass (L2)


def assemble_operators(hier: GridHierarchy, media: MediaField, pou: PartitionOfUnity,
                       cells=None) -> Operators:
    A = _block_diag(assemble_stiffness(hier, media, 0, cells), assemble_stiffness(hier, media, 1, cells))
    Q = assemble_exchange(hier, media, cells)
    M1 = assemble_mass(hier, cells=cells)
    return Operators(hier, media, pou, A, Q, (A + Q).tocsr(),
                     assemble_weighted_mass_s(hier, media, pou, cells),
                     assemble_capacity(hier, media, cells), _block_diag(M1, M1))


def export_coo(A: sp.spmatrix, path):
    """Write ``row col value`` lines (0-based) for debugging."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(Path(path), "w") as fh:
        fh.write(f"# {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for r, c, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
