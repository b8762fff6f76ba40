"""Constraint energy minimizing basis functions.

For every auxiliary function phi_k^(j) the basis function minimizes a_Q
energy over fields vanishing on the boundary of the oversampled patch
K_{j,m}, subject to s(psi, phi_k'^(j')) = delta_jj' delta_kk' for every
auxiliary function of the elements inside the patch. The constrained
minimization is solved as the saddle-point system

    [A  B^T] [psi]   [0]
    [B   0 ] [mu ] = [e]

with one sparse LU factorization per patch shared by all k (and by every
element whose clipped patch is the same).
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Operators, assemble_aq
from .grid import GridHierarchy, Patch, oversample, region
from .spectral import AuxiliarySpace

log = logging.getLogger(__name__)

CONSTRAINTS_ALL = "all"  # every auxiliary function of elements inside the patch
CONSTRAINTS_OWN = "own"  # only the auxiliary functions of element j


class SaddlePointError(RuntimeError):
    pass


def oversampling_layers(H: float) -> int:
    """m(H) = floor(9 log(1/H) / log 64)."""
    return int(math.floor(9.0 * math.log(1.0 / H) / math.log(64.0) + 1e-9))


@dataclass(eq=False)
class PatchSolution:
    j: int
    m: int
    patch: Patch = field(repr=False)
    dofs: np.ndarray = field(repr=False)  # global dofs of psi entries (patch interior)
    psi: np.ndarray = field(repr=False)  # (L_j, len(dofs))
    mu: np.ndarray = field(repr=False)  # (L_j, n_constraints)
    constraint_rows: np.ndarray = field(repr=False)  # aux indices constrained
    residual: tuple[float, float] = (0.0, 0.0)  # (energy eq, constraint eq), worst over k


def _constraint_rows(aux: AuxiliarySpace, patch: Patch, mode: str) -> np.ndarray:
    if mode == CONSTRAINTS_ALL:
        return aux.element_rows(patch.elements)
    if mode == CONSTRAINTS_OWN:
        return aux.element_rows([patch.j])
    raise ValueError(f"unknown constraint mode {mode!r}")


def solve_patch(ops: Operators, aux: AuxiliarySpace, j: int, m: int,
                constraints: str = CONSTRAINTS_ALL, ks=None) -> PatchSolution:
    """All basis functions of element ``j`` on K_{j,m} (or those in ``ks``)."""
    ks = range(aux.L[j]) if ks is None else ks
    return _solve_shared(ops, aux, oversample(ops.hier, j, m), m, constraints, {j: list(ks)})[0]


def _kkt_solve(K: sp.csc_matrix, rhs: np.ndarray, tol: float = 1e-12):
    """LU solve of the saddle-point system with one refinement step.

    Symmetric-mode SuperLU (diagonal pivots, minimum degree on K^T + K) has a
    fraction of the fill of the unsymmetric ordering; if it breaks down on the
    zero block or leaves a large backward error, fall back to partial pivoting.
    """
    anorm = abs(K).sum(axis=1).max()
    for kw in (dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True)),
               dict(permc_spec="MMD_ATA")):
        try:
            lu = spla.splu(K, **kw)
        except RuntimeError:
            continue
        sol = lu.solve(rhs)
        sol += lu.solve(rhs - K @ sol)
        if not np.all(np.isfinite(sol)):
            continue
        r = np.abs(rhs - K @ sol).max() / (anorm * np.abs(sol).max() + np.abs(rhs).max())
        if r <= tol:
            return sol
        log.debug("saddle-point backward error %.2e with %s; retrying", r, kw["permc_spec"])
    return None


def _solve_shared(ops: Operators, aux: AuxiliarySpace, patch: Patch, m: int, constraints: str,
                  wanted: dict) -> list[PatchSolution]:
    """Basis functions of several elements whose saddle-point systems coincide
    (same patch and constraint set): one factorization, many right-hand sides.
    ``wanted`` maps element -> list of k."""
    dofs = patch.interior_dofs
    rows = _constraint_rows(aux, patch, constraints)
    A = ops.AQ[dofs][:, dofs]
    B = aux.B[rows][:, dofs]
    n, c = dofs.size, rows.size
    K = sp.bmat([[A, B.T], [B, None]], format="csc")
    local_index = {int(r): i for i, r in enumerate(rows)}
    targets = [(j, k) for j, ks in wanted.items() for k in ks]
    rhs = np.zeros((n + c, len(targets)))
    for col, (j, k) in enumerate(targets):
        rhs[n + local_index[aux.index(j, k)], col] = 1.0
    sol = _kkt_solve(K, rhs)
    if sol is None or not np.all(np.isfinite(sol)):
        raise SaddlePointError(f"saddle-point solve failed for elements {list(wanted)}, m={m}")
    out, col = [], 0
    for j, ks in wanted.items():
        part = sol[:, col:col + len(ks)]
        col += len(ks)
        psi, mu = part[:n].T, part[n:].T
        r_energy = A @ psi.T + B.T @ mu.T
        scale = np.maximum(np.linalg.norm(A @ psi.T, axis=0), np.linalg.norm(B.T @ mu.T, axis=0))
        res1 = float(np.max(np.linalg.norm(r_energy, axis=0) / np.maximum(scale, 1e-300)))
        e = np.zeros((c, len(ks)))
        for i, k in enumerate(ks):
            e[local_index[aux.index(j, k)], i] = 1.0
        res2 = float(np.max(np.abs(B @ psi.T - e)))
        out.append(PatchSolution(j, m, patch, dofs, psi, mu, rows, (res1, res2)))
    return out


def build_local_basis(ops: Operators, aux: AuxiliarySpace, j: int, k: int, m: int,
                      constraints: str = CONSTRAINTS_ALL):
    """psi_{k,ms}^(j) as a global dof vector, and its multiplier."""
    if m < 1:
        raise ValueError("oversampling requires m >= 1")
    ps = solve_patch(ops, aux, j, m, constraints, ks=[k])
    psi = np.zeros(ops.hier.n_dofs)
    psi[ps.dofs] = ps.psi[0]
    return psi, ps.mu[0]


def build_global_basis(ops: Operators, aux: AuxiliarySpace, j: int, k: int,
                       constraints: str = CONSTRAINTS_ALL):
    """psi_k^(j) over the whole domain (patch = Omega)."""
    m = max(ops.hier.n_coarse)
    ps = solve_patch(ops, aux, j, m, constraints, ks=[k])
    psi = np.zeros(ops.hier.n_dofs)
    psi[ps.dofs] = ps.psi[0]
    return psi, ps.mu[0]


def global_basis_matrix(ops: Operators, aux: AuxiliarySpace,
                        constraints: str = CONSTRAINTS_ALL) -> sp.csc_matrix:
    """All global basis functions from one factorization (small meshes only)."""
    hier = ops.hier
    dofs = hier.free_dofs
    rows = np.arange(aux.dim) if constraints == CONSTRAINTS_ALL else None
    if rows is None:
        cols = [build_global_basis(ops, aux, j, k, constraints)[0]
                for j in range(hier.n_elements) for k in range(aux.L[j])]
        return sp.csc_matrix(np.column_stack(cols))
    A = ops.AQ[dofs][:, dofs]
    B = aux.B[:, dofs]
    n = dofs.size
    K = sp.bmat([[A, B.T], [B, None]], format="csc")
    rhs = np.zeros((n + aux.dim, aux.dim))
    rhs[n:] = np.eye(aux.dim)
    sol = _kkt_solve(K, rhs)
    if sol is None:
        raise SaddlePointError("global saddle-point solve failed")
    Psi = np.zeros((hier.n_dofs, aux.dim))
    Psi[dofs] = sol[:n]
    return sp.csc_matrix(Psi)


@dataclass(eq=False)
class MultiscaleBasis:
    hier: GridHierarchy
    aux: AuxiliarySpace = field(repr=False)
    m: np.ndarray  # layers per element
    constraints: str
    Psi: sp.csc_matrix = field(repr=False)  # (n_dofs, dim V_ms), column (j,k) at aux.index(j,k)
    patches: list = field(repr=False)
    mu: list = field(repr=False)  # per element (L_j, n_constraints)
    residuals: np.ndarray = field(repr=False)  # (n_elements, 2)

    @property
    def dim(self) -> int:
        return self.Psi.shape[1]

    def column(self, j: int, k: int) -> np.ndarray:
        return self.Psi[:, self.aux.index(j, k)].toarray().ravel()


def assemble_coarse_space(columns, n_dofs: int) -> sp.csc_matrix:
    """Stack ``(dofs, values)`` pairs, one per basis function, into Psi."""
    indptr = [0]
    indices, data = [], []
    for dofs, vals in columns:
        dofs = np.asarray(dofs)
        vals = np.asarray(vals, dtype=float)
        if dofs.shape != vals.shape:
            raise ValueError("dimension mismatch between basis dofs and values")
        order = np.argsort(dofs)
        indices.append(dofs[order])
        data.append(vals[order])
        indptr.append(indptr[-1] + dofs.size)
    if not indices:
        return sp.csc_matrix((n_dofs, 0))
    return sp.csc_matrix((np.concatenate(data), np.concatenate(indices), np.array(indptr)),
                         shape=(n_dofs, len(indptr) - 1))


def build_multiscale_basis(ops: Operators, aux: AuxiliarySpace, m=None,
                           constraints: str = CONSTRAINTS_ALL, workers: int = 1,
                           keep_patches: bool = False) -> MultiscaleBasis:
    """Localized basis for every (j, k). ``m`` defaults to
    :func:`oversampling_layers` of the coarse size."""
    hier = ops.hier
    if m is None:
        m = oversampling_layers(max(hier.H))
    m = np.broadcast_to(np.asarray(m, dtype=int), (hier.n_elements,)).copy()
    if np.any(m < 1):
        raise ValueError("oversampling requires m >= 1")

    # elements whose clipped patches coincide share one factorization
    # (only possible when every aux function of the patch is constrained)
    groups = {}
    for j in range(hier.n_elements):
        patch = oversample(hier, j, int(m[j]))
        key = (patch.element_range, int(m[j])) if constraints == CONSTRAINTS_ALL else (j,)
        groups.setdefault(key, (patch, []))[1].append(j)

    def work(item):
        patch, js = item
        return _solve_shared(ops, aux, patch, int(m[js[0]]), constraints,
                             {j: list(range(aux.L[j])) for j in js})

    items = list(groups.values())
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]
    sols = sorted((ps for r in results for ps in r), key=lambda ps: ps.j)

    columns = []
    for ps in sols:
        for k in range(aux.L[ps.j]):
            columns.append((ps.dofs, ps.psi[k]))
    Psi = assemble_coarse_space(columns, hier.n_dofs)
    residuals = np.array([ps.residual for ps in sols])
    worst = residuals.max(axis=0)
    log.info("multiscale basis: dim=%d, worst residuals energy=%.2e constraint=%.2e",
             Psi.shape[1], *worst)
    if worst[0] > 1e-9 or worst[1] > 1e-8:
        log.warning("saddle-point residuals above tolerance: %.2e / %.2e", *worst)
    return MultiscaleBasis(hier, aux, m, constraints, Psi,
                           [ps.patch for ps in sols] if keep_patches else [],
                           [ps.mu for ps in sols], residuals)


def energy(ops: Operators, v: np.ndarray, cells=None) -> float:
    if cells is None:
        return float(v @ (ops.AQ @ v))
    return float(v @ (assemble_aq(ops.hier, ops.media, cells) @ v))


def measure_decay(ops: Operators, aux: AuxiliarySpace, j: int, k: int, m_list,
                  constraints: str = CONSTRAINTS_ALL) -> list[dict]:
    """Difference between global and localized basis functions per layer count.

    Each row holds ``m``, ``diff_energy`` = ||psi - psi_ms||^2_aQ,
    ``outside_energy`` = ||psi||^2_aQ on Omega minus K_{j,m}, and
    ``local_energy`` = ||psi_ms||^2_aQ.
    """
    m_list = list(m_list)
    if m_list != sorted(m_list):
        raise ValueError("m_list must be ascending")
    hier = ops.hier
    psi_glo, _ = build_global_basis(ops, aux, j, k, constraints)
    rows = []
    for m in m_list:
        psi_ms, _ = build_local_basis(ops, aux, j, k, m, constraints)
        d = psi_glo - psi_ms
        patch = oversample(hier, j, m)
        outside = np.setdiff1d(np.arange(hier.n_elements), patch.elements)
        out_e = energy(ops, psi_glo, region(hier, outside)) if outside.size else 0.0
        rows.append({"m": m, "diff_energy": energy(ops, d), "outside_energy": out_e,
                     "local_energy": energy(ops, psi_ms)})
    return rows


def decay_slope(rows) -> float:
    """Least-squares slope of log(diff_energy) against m over positive entries."""
    ms = np.array([r["m"] for r in rows], dtype=float)
    d = np.array([r["diff_energy"] for r in rows])
    keep = d > 0
    if keep.sum() < 2:
        return float("-inf")
    return float(np.polyfit(ms[keep], np.log(d[keep]), 1)[0])


def write_decay_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "diff_energy", "outside_energy", "local_energy"])
        for r in rows:
            w.writerow([r["m"], repr(r["diff_energy"]), repr(r["outside_energy"]),
                        repr(r["local_energy"])])
