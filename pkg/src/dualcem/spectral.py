"""Local spectral problems a_Q^(j) phi = lambda s^(j) phi and the auxiliary
space they span.

On each coarse element the eigenfunctions live on the element's own nodes:
no condition on interior coarse edges, zero on the domain boundary. They are
returned s-orthonormal with a fixed sign (first significant entry positive).
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .assembly import assemble_aq, assemble_weighted_mass_s
from .grid import GridHierarchy, PartitionOfUnity
from .media import MediaField

log = logging.getLogger(__name__)


class SpectralBreakdown(RuntimeError):
    def __init__(self, j, msg):
        super().__init__(f"coarse element {j}: {msg}")
        self.element = j


@dataclass(frozen=True, eq=False)
class LocalEigenpairs:
    j: int
    dofs: np.ndarray  # global dofs of the element nodes, block layout
    eigenvalues: np.ndarray  # ascending, length L_j + 1 (or fewer if the space is small)
    vectors: np.ndarray  # (n_pairs, len(dofs)), s^(j)-orthonormal
    A: sp.csr_matrix = field(repr=False)  # a_Q^(j) in element-local numbering
    S: sp.csr_matrix = field(repr=False)  # s^(j) in element-local numbering


def element_dofs(hier: GridHierarchy, j: int) -> np.ndarray:
    nodes = hier.element_nodes(j)
    return np.concatenate([nodes, nodes + hier.n_nodes])


def _fix_sign(v: np.ndarray) -> np.ndarray:
    amax = np.max(np.abs(v))
    if amax == 0:
        return v
    first = np.flatnonzero(np.abs(v) > 1e-6 * amax)[0]
    return -v if v[first] < 0 else v


def local_operators(hier: GridHierarchy, media: MediaField, pou: PartitionOfUnity, j: int):
    cells = hier.element_cells(j)
    dofs = element_dofs(hier, j)
    A = assemble_aq(hier, media, cells)[dofs][:, dofs].tocsr()
    S = assemble_weighted_mass_s(hier, media, pou, cells)[dofs][:, dofs].tocsr()
    return dofs, A, S


def local_eigensolve(hier: GridHierarchy, media: MediaField, pou: PartitionOfUnity, j: int,
                     count: int) -> LocalEigenpairs:
    """Smallest ``count`` eigenpairs of the pencil (A_Q^(j), S^(j))."""
    dofs, A, S = local_operators(hier, media, pou, j)
    on_boundary = np.isin(dofs, hier.boundary_dofs)
    free = np.flatnonzero(~on_boundary)
    if count < 1:
        raise ValueError("count must be >= 1")
    count = min(count, free.size)
    Af = A[free][:, free].toarray()
    Sf = S[free][:, free].toarray()
    try:
        lam, vec = la.eigh(Af, Sf, subset_by_index=[0, count - 1])
    except la.LinAlgError as exc:
        raise SpectralBreakdown(j, f"generalized eigensolve failed ({exc}); "
                                   "s^(j) not positive definite?") from exc
    # A_Q^(j) is positive semidefinite; clip round-off negatives
    scale = max(1.0, float(np.max(np.abs(lam))))
    if np.any(lam < -1e-8 * scale):
        raise SpectralBreakdown(j, f"negative eigenvalue {lam.min():.3e}")
    lam = np.maximum(lam, 0.0)
    vectors = np.zeros((count, dofs.size))
    for k in range(count):
        vectors[k, free] = _fix_sign(vec[:, k])
    return LocalEigenpairs(j, dofs, lam, vectors, A, S)


@dataclass(frozen=True, eq=False)
class AuxiliarySpace:
    hier: GridHierarchy
    L: np.ndarray  # per element
    local: tuple[LocalEigenpairs, ...] = field(repr=False)
    offsets: np.ndarray = field(repr=False)  # start of element j in aux numbering
    B: sp.csr_matrix = field(repr=False)  # row (j,k) is s(., phi_k^(j)) on global dofs

    @property
    def dim(self) -> int:
        return int(self.L.sum())

    @property
    def Lambda(self) -> float:
        """min_j lambda_{L_j+1}^(j); inf when some element has no discarded mode."""
        vals = [p.eigenvalues[L] for p, L in zip(self.local, self.L) if p.eigenvalues.size > L]
        return float(min(vals)) if len(vals) == len(self.local) else float("inf")

    @property
    def lambda_max(self) -> float:
        return float(max(p.eigenvalues[:L].max() for p, L in zip(self.local, self.L)))

    def eigenvalues(self, j: int) -> np.ndarray:
        return self.local[j].eigenvalues

    def phi(self, j: int, k: int) -> np.ndarray:
        """phi_k^(j) (0-based k) in element-local dofs."""
        if not 0 <= k < self.L[j]:
            raise IndexError(f"element {j} has {self.L[j]} auxiliary functions")
        return self.local[j].vectors[k]

    def index(self, j: int, k: int) -> int:
        return int(self.offsets[j] + k)

    def element_rows(self, elements) -> np.ndarray:
        return np.concatenate([np.arange(self.offsets[j], self.offsets[j] + self.L[j])
                               for j in np.atleast_1d(elements)])

    # broken (element-wise) fields -----------------------------------------
    def to_broken(self, v: np.ndarray) -> list[np.ndarray]:
        """Restrict a global field to each element's local dofs."""
        return [v[p.dofs] for p in self.local]

    def broken_from_coefficients(self, coeffs: np.ndarray) -> list[np.ndarray]:
        out = []
        for j, p in enumerate(self.local):
            c = coeffs[self.offsets[j]:self.offsets[j] + self.L[j]]
            out.append(c @ p.vectors[:self.L[j]])
        return out

    def broken_s_norm2(self, w: list[np.ndarray]) -> float:
        return float(sum(wj @ (p.S @ wj) for wj, p in zip(w, self.local)))


def build_auxiliary_space(hier: GridHierarchy, media: MediaField, pou: PartitionOfUnity,
                          L=6, workers: int = 1) -> AuxiliarySpace:
    """Eigenpairs on every coarse element; ``L`` uniform or per element.

    One extra eigenpair beyond L_j is kept for the Lambda diagnostic.
    """
    L = np.broadcast_to(np.asarray(L, dtype=int), (hier.n_elements,)).copy()
    if np.any(L < 1):
        raise ValueError("L must be >= 1 on every element")

    def solve(j):
        try:
            return local_eigensolve(hier, media, pou, j, int(L[j]) + 1)
        except SpectralBreakdown:
            raise
        except Exception as exc:  # pragma: no cover - context for unexpected failures
            raise SpectralBreakdown(j, str(exc)) from exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            local = list(pool.map(solve, range(hier.n_elements)))
    else:
        local = [solve(j) for j in range(hier.n_elements)]
    for j, p in enumerate(local):
        if p.vectors.shape[0] < L[j]:
            raise SpectralBreakdown(j, f"only {p.vectors.shape[0]} local modes, L_j={L[j]}")

    offsets = np.concatenate([[0], np.cumsum(L)[:-1]])
    rows, cols, vals = [], [], []
    for j, p in enumerate(local):
        SV = (p.S @ p.vectors[:L[j]].T).T  # (L_j, n_local)
        for k in range(L[j]):
            nz = np.flatnonzero(SV[k])
            rows.append(np.full(nz.size, offsets[j] + k))
            cols.append(p.dofs[nz])
            vals.append(SV[k, nz])
    B = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(int(L.sum()), hier.n_dofs))
    aux = AuxiliarySpace(hier, L, tuple(local), offsets, B)
    log.info("auxiliary space: dim=%d Lambda=%.4g lambda_max=%.4g", aux.dim, aux.Lambda, aux.lambda_max)
    return aux


def project_pi(aux: AuxiliarySpace, field) -> np.ndarray:
    """Coefficients of pi(v) = sum_j sum_k s^(j)(v, phi_k^(j)) phi_k^(j).

    ``field`` is a global dof vector or a broken field (list of element-local
    vectors, see :meth:`AuxiliarySpace.to_broken`).
    """
    if isinstance(field, (list, tuple)):
        out = np.zeros(aux.dim)
        for j, (wj, p) in enumerate(zip(field, aux.local)):
            Lj = aux.L[j]
            out[aux.offsets[j]:aux.offsets[j] + Lj] = p.vectors[:Lj] @ (p.S @ wj)
        return out
    return aux.B @ np.asarray(field)


def spectrum_rows(aux: AuxiliarySpace, count: int | None = None):
    for j, p in enumerate(aux.local):
        n = p.eigenvalues.size if count is None else min(count, p.eigenvalues.size)
        for k in range(n):
            yield j, k + 1, float(p.eigenvalues[k])


def write_spectrum_csv(aux: AuxiliarySpace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "k", "lambda"])
        for j, k, lam in spectrum_rows(aux):
            w.writerow([j, k, repr(lam)])
        w.writerow([])
        w.writerow(["Lambda", repr(aux.Lambda)])
        w.writerow(["lambda_max", repr(aux.lambda_max)])
