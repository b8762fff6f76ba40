"""Fine-grid reference solves and coarse multiscale Galerkin solves, steady and
transient (backward Euler)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Operators, apply_dirichlet, assemble_load

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(eq=False)
class SteadyProblem:
    ops: Operators
    f: tuple  # per-continuum sources, see assemble_load

    @property
    def hier(self):
        return self.ops.hier

    def load(self) -> np.ndarray:
        b = assemble_load(self.hier, self.f, self.ops.media.rho)
        if not np.all(np.isfinite(b)):
            raise SolverError("non-finite load vector")
        return b


@dataclass(eq=False)
class TransientProblem(SteadyProblem):
    p0: np.ndarray | None = None  # None means zero initial state
    T: float = 1.0
    dt: float = 0.1
    output_times: np.ndarray | None = None  # None: every time step

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        if not 0 < self.dt <= self.T:
            raise ValueError(f"time step must satisfy 0 < dt <= T, got dt={self.dt}, T={self.T}")

    def time_grid(self) -> np.ndarray:
        """Step times; if dt does not divide T the last step is shortened."""
        n = int(np.floor(self.T / self.dt + 1e-9))
        t = self.dt * np.arange(n + 1)
        if self.T - t[-1] > 1e-9 * self.T:
            t = np.append(t, self.T)
        t[-1] = self.T
        return t

    def initial_state(self) -> np.ndarray:
        if self.p0 is None:
            return np.zeros(self.hier.n_dofs)
        return apply_dirichlet(np.asarray(self.p0, dtype=float), self.hier.boundary_dofs)


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), n_dofs)
    coarse: np.ndarray | None = field(default=None, repr=False)

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[i], t):
            raise KeyError(f"time {t} not stored")
        return self.states[i]


def _factor_spd(A: sp.spmatrix):
    try:
        return spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc


def backward_error(A: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    """Normwise relative residual ||b - Ax|| / (||A|| ||x|| + ||b||), infinity norms."""
    r = np.abs(b - A @ x).max()
    anorm = abs(A).sum(axis=1).max()
    return float(r / (anorm * np.abs(x).max() + np.abs(b).max()))


def solve_fine_steady(prob: SteadyProblem, method: str = "direct", tol: float = 1e-10) -> np.ndarray:
    """Solve a_Q(p, v) = (f, v) on the fine grid with zero Dirichlet data."""
    hier = prob.hier
    bnd = hier.boundary_dofs
    A = apply_dirichlet(prob.ops.AQ, bnd)
    b = apply_dirichlet(prob.load(), bnd)
    if not np.any(b):
        return np.zeros_like(b)
    if method == "direct":
        p = _factor_spd(A).solve(b)
    elif method == "cg":
        history = []
        d = A.diagonal()
        M = spla.LinearOperator(A.shape, matvec=lambda x: x / d)
        p, info = spla.cg(A, b, rtol=tol, atol=0.0, M=M, maxiter=20 * A.shape[0],
                          callback=lambda xk: history.append(np.linalg.norm(b - A @ xk)))
        if info != 0:
            raise SolverError(f"CG did not converge (info={info}); residual history tail "
                              f"{history[-5:]}")
    else:
        raise ValueError(f"unknown solver method {method!r}")
    res = backward_error(A, p, b)
    if res > tol and method == "direct":
        lu = _factor_spd(A)
        for _ in range(3):
            p = p + lu.solve(b - A @ p)
            res = backward_error(A, p, b)
            if res <= tol:
                break
    if res > tol:
        raise SolverError(f"fine steady solve residual {res:.3e} exceeds {tol:.1e}")
    return p


def _galerkin(A: sp.spmatrix, Psi: sp.csc_matrix, block: int = 256) -> np.ndarray:
    # Psi^T A Psi is dense; sparse-sparse products are slow here, so multiply
    # against dense column panels instead
    n, dim = Psi.shape
    if Psi.nnz > 0.05 * n * dim and n * dim <= 2 ** 25:
        # wide supports (large m): dense BLAS beats sparse products
        P = Psi.toarray()
        return P.T @ (A @ P)
    PsiT = Psi.T.tocsr()
    out = np.empty((dim, dim))
    for b in range(0, dim, block):
        panel = A @ Psi[:, b:b + block].toarray()
        out[:, b:b + block] = PsiT @ panel
    return out


def coarse_matrices(ops: Operators, Psi: sp.spmatrix):
    """Dense Galerkin matrices Psi^T A_Q Psi and Psi^T C Psi."""
    Psi = sp.csc_matrix(Psi)
    Ac = _galerkin(ops.AQ, Psi)
    Cc = _galerkin(ops.C, Psi)
    return 0.5 * (Ac + Ac.T), 0.5 * (Cc + Cc.T)


def _cho(Ac: np.ndarray):
    try:
        return la.cho_factor(Ac)
    except la.LinAlgError as exc:
        cond = np.linalg.cond(Ac)
        raise SolverError(f"coarse Galerkin matrix not SPD (condition estimate {cond:.3e})") from exc


def solve_ms_steady(prob: SteadyProblem, Psi: sp.spmatrix, Ac: np.ndarray | None = None):
    """Galerkin solve in V_ms = range(Psi). Returns (coefficients, fine field)."""
    Psi = sp.csc_matrix(Psi)
    if Ac is None:
        Ac = coarse_matrices(prob.ops, Psi)[0]
    b = prob.load()
    bc = Psi.T @ b
    if not np.any(bc):
        return np.zeros(Psi.shape[1]), np.zeros(prob.hier.n_dofs)
    c = la.cho_solve(_cho(Ac), bc)
    return c, Psi @ c


def elliptic_projection(ops: Operators, Psi: sp.spmatrix, u: np.ndarray, Ac=None) -> np.ndarray:
    """Coefficients of R_ms u: a_Q(R_ms u, v) = a_Q(u, v) for v in V_ms."""
    Psi = sp.csc_matrix(Psi)
    if Ac is None:
        Ac = coarse_matrices(ops, Psi)[0]
    return la.cho_solve(_cho(Ac), Psi.T @ (ops.AQ @ u))


def _output_mask(times: np.ndarray, wanted) -> np.ndarray:
    if wanted is None:
        return np.ones(times.size, dtype=bool)
    mask = np.zeros(times.size, dtype=bool)
    for t in np.atleast_1d(wanted):
        i = int(np.argmin(np.abs(times - t)))
        if not np.isclose(times[i], t, rtol=1e-9, atol=1e-12):
            raise ValueError(f"output time {t} is not on the time grid")
        mask[i] = True
    mask[-1] = True
    return mask


def solve_fine_transient(prob: TransientProblem) -> Trajectory:
    """Backward Euler: (C/dt + A_Q) p^{n+1} = C p^n / dt + b."""
    hier = prob.hier
    bnd = hier.boundary_dofs
    C, AQ = prob.ops.C, prob.ops.AQ
    b = apply_dirichlet(prob.load(), bnd)
    times = prob.time_grid()
    keep = _output_mask(times, prob.output_times)
    p = prob.initial_state()
    states = [p.copy()] if keep[0] else []
    factors = {}
    for n in range(1, times.size):
        dt = times[n] - times[n - 1]
        key = round(dt, 12)
        if key not in factors:
            factors[key] = _factor_spd(apply_dirichlet(C / dt + AQ, bnd))
        rhs = apply_dirichlet(C @ p / dt + b, bnd)
        p = factors[key].solve(rhs)
        if keep[n]:
            states.append(p.copy())
    return Trajectory(times[keep], np.array(states))


def solve_ms_transient(prob: TransientProblem, Psi: sp.spmatrix, mats=None) -> Trajectory:
    """Backward Euler in V_ms. A nonzero initial state enters through its
    elliptic projection R_ms p0."""
    Psi = sp.csc_matrix(Psi)
    Ac, Cc = coarse_matrices(prob.ops, Psi) if mats is None else mats
    bc = Psi.T @ prob.load()
    times = prob.time_grid()
    keep = _output_mask(times, prob.output_times)
    p0 = prob.initial_state()
    c = np.zeros(Psi.shape[1]) if not np.any(p0) else elliptic_projection(prob.ops, Psi, p0, Ac)
    coeffs = [c.copy()] if keep[0] else []
    factors = {}
    for n in range(1, times.size):
        dt = times[n] - times[n - 1]
        key = round(dt, 12)
        if key not in factors:
            factors[key] = _cho(Cc / dt + Ac)
        c = la.cho_solve(factors[key], Cc @ c / dt + bc)
        if keep[n]:
            coeffs.append(c.copy())
    coeffs = np.array(coeffs)
    return Trajectory(times[keep], np.asarray((Psi @ coeffs.T).T), coeffs)


def discrete_energy_terms(ops: Operators, traj: Trajectory):
    """(sum dt ||(p^{n+1}-p^n)/dt||_c^2, ||p(T)||_aQ^2) for a full trajectory."""
    kinetic = 0.0
    for n in range(1, traj.times.size):
        dt = traj.times[n] - traj.times[n - 1]
        d = (traj.states[n] - traj.states[n - 1]) / dt
        kinetic += dt * float(d @ (ops.C @ d))
    pT = traj.states[-1]
    return kinetic, float(pT @ (ops.AQ @ pT))
