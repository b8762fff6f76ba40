"""Norms, relative errors, convergence orders and the convergence-study harness."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import Operators, assemble_operators
from .grid import build_hierarchy, partition_of_unity, region

log = logging.getLogger(__name__)

NORMS = ("c", "a", "q", "aQ", "s", "L2")
CSV_COLUMNS = ["H", "m", "L", "dt", "aQ_err_pct", "aQ_order", "L2_err_pct", "L2_order",
               "contrast", "wall_time_s"]


class UndefinedError(ZeroDivisionError):
    """Relative error requested against a zero reference."""


def _operator(ops: Operators, which: str, subdomain=None):
    if which not in NORMS:
        raise ValueError(f"unknown norm {which!r}; expected one of {NORMS}")
    if subdomain is not None:
        ops = assemble_operators(ops.hier, ops.media, ops.pou, region(ops.hier, subdomain))
    return {"c": ops.C, "a": ops.A, "q": ops.Q, "aQ": ops.AQ, "s": ops.S, "L2": ops.M}[which]


def norm2(ops: Operators, v: np.ndarray, which: str = "aQ", subdomain=None) -> float:
    """Squared (semi)norm; ``subdomain`` is a list of coarse elements."""
    A = _operator(ops, which, subdomain)
    return max(float(v @ (A @ v)), 0.0)


def norm(ops: Operators, v: np.ndarray, which: str = "aQ", subdomain=None) -> float:
    return math.sqrt(norm2(ops, v, which, subdomain))


def relative_errors(ops: Operators, p_fine: np.ndarray, p_ms: np.ndarray) -> tuple[float, float]:
    """(a_Q error %, L2 error %) of ``p_ms`` against ``p_fine``."""
    out = []
    for which in ("aQ", "L2"):
        ref = norm(ops, p_fine, which)
        if ref == 0.0:
            raise UndefinedError(f"reference solution has zero {which} norm")
        out.append(100.0 * norm(ops, p_fine - p_ms, which) / ref)
    return tuple(out)


def convergence_order(e_coarse: float, e_fine: float, H_coarse: float, H_fine: float) -> float:
    return math.log(e_coarse / e_fine) / math.log(H_coarse / H_fine)


def transient_error_metric(ops: Operators, fine, ms) -> float:
    """||p(T) - p_ms(T)||_c^2 + trapezoid integral of ||p - p_ms||_aQ^2."""
    if fine.times.shape != ms.times.shape or not np.allclose(fine.times, ms.times):
        raise ValueError("trajectories must share the same time grid")
    e = fine.states - ms.states
    eT = e[-1]
    energies = np.einsum("ti,ti->t", e, (ops.AQ @ e.T).T)
    return float(eT @ (ops.C @ eT)) + float(np.trapezoid(energies, fine.times))


@dataclass
class ErrorReport:
    H: float
    m: int
    L: int
    contrast: tuple
    dt: float | None = None
    aQ_err_pct: float = math.nan
    L2_err_pct: float = math.nan
    aQ_order: float | None = None
    L2_order: float | None = None
    transient_metric: float | None = None
    Lambda: float = math.nan
    wall_time_s: float = 0.0
    reason: str | None = None  # set when the row failed

    def contrast_label(self) -> str:
        c = tuple(self.contrast)
        return f"{c[0]:g}" if c[0] == c[1] else f"{c[0]:g}/{c[1]:g}"

    def csv_row(self) -> list:
        fmt = lambda v: "" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v))
        return [f"1/{round(1 / self.H)}", self.m, self.L, fmt(self.dt), fmt(self.aQ_err_pct),
                fmt(self.aQ_order), fmt(self.L2_err_pct), fmt(self.L2_order),
                self.contrast_label(), f"{self.wall_time_s:.3f}"]


def fill_orders(rows: list[ErrorReport]):
    """Orders between consecutive successful rows that share everything but H."""
    prev = None
    for r in rows:
        if r.reason is not None:
            prev = None
            continue
        if prev is not None and prev.contrast == r.contrast and prev.L == r.L and prev.H != r.H:
            r.aQ_order = convergence_order(prev.aQ_err_pct, r.aQ_err_pct, prev.H, r.H)
            r.L2_order = convergence_order(prev.L2_err_pct, r.L2_err_pct, prev.H, r.H)
        prev = r
    return rows


def write_error_csv(rows: list[ErrorReport], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())


def write_metric_csv(rows: list[ErrorReport], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["H", "m", "L", "dt", "contrast", "transient_metric", "Lambda"])
        for r in rows:
            w.writerow([f"1/{round(1 / r.H)}", r.m, r.L, "" if r.dt is None else f"{r.dt:g}",
                        r.contrast_label(),
                        "" if r.transient_metric is None else f"{r.transient_metric:.6g}",
                        f"{r.Lambda:.6g}"])


def write_norms_csv(ops: Operators, fine, ms, path):
    """Time series of fine/multiscale norms and of the error, one row per step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "fine_aQ", "ms_aQ", "err_aQ", "err_c", "err_L2"])
        for t, pf, pm in zip(fine.times, fine.states, ms.states):
            e = pf - pm
            w.writerow([f"{t:.10g}"] + [f"{v:.10g}" for v in (
                norm(ops, pf), norm(ops, pm), norm(ops, e), norm(ops, e, "c"),
                norm(ops, e, "L2"))])


@dataclass
class StudyRun:
    """One (H, m, L, dt, contrast) point of a study."""

    n_coarse: int
    m: int
    L: int
    contrast: tuple
    dt: float | None = None


def study_runs(cfg) -> list[StudyRun]:
    """Expand a study config into rows: contrasts outermost, then L, then H
    (or m when a single H is swept over several layer counts)."""
    runs = []
    nc_list = list(cfg.grid.n_coarse)
    m_spec = cfg.basis.m
    for contrast in cfg.media.contrast:
        for L in cfg.aux.L_list:
            if m_spec == "formula":
                from .basis import oversampling_layers
                pairs = [(nc, oversampling_layers(1.0 / nc)) for nc in nc_list]
            elif len(nc_list) == 1:
                pairs = [(nc_list[0], int(m)) for m in m_spec]
            elif len(m_spec) == len(nc_list):
                pairs = list(zip(nc_list, (int(m) for m in m_spec)))
            else:
                raise ValueError("basis.m must be 'formula', one value per n_coarse entry, "
                                 "or a list swept at a single n_coarse")
            for i, (nc, m) in enumerate(pairs):
                dt = cfg.transient.dt[i] if cfg.transient.enabled else None
                runs.append(StudyRun(nc, m, L, tuple(contrast), dt))
    return runs


def run_convergence_study(cfg, workers: int = 1) -> list[ErrorReport]:
    """Run every study row; a failing row records its reason and the study
    continues."""
    from . import basis as basis_mod
    from . import solver, spectral
    from .config import build_media, build_sources, build_initial_state

    reference_cache = {}
    rows = []
    for run in study_runs(cfg):
        H = 1.0 / run.n_coarse
        report = ErrorReport(H, run.m, run.L, run.contrast, run.dt)
        t0 = time.perf_counter()
        try:
            hier = build_hierarchy(cfg.grid.domain, run.n_coarse, cfg.grid.n_fine // run.n_coarse)
            media = build_media(cfg, hier, run.contrast)
            pou = partition_of_unity(hier)
            ops = assemble_operators(hier, media, pou)
            f = build_sources(cfg)
            L = cfg.aux.per_element(hier, run.L)
            aux = spectral.build_auxiliary_space(hier, media, pou, L, workers=workers)
            ms = basis_mod.build_multiscale_basis(ops, aux, run.m, cfg.basis.constraints,
                                                  workers=workers)
            report.Lambda = aux.Lambda
            key = (run.contrast, run.dt)
            if cfg.transient.enabled:
                prob = solver.TransientProblem(ops, f, build_initial_state(cfg, hier),
                                               cfg.transient.T, run.dt, None)
                if key not in reference_cache:
                    reference_cache[key] = solver.solve_fine_transient(prob)
                fine = reference_cache[key]
                coarse = solver.solve_ms_transient(prob, ms.Psi)
                report.aQ_err_pct, report.L2_err_pct = relative_errors(
                    ops, fine.states[-1], coarse.states[-1])
                report.transient_metric = transient_error_metric(ops, fine, coarse)
            else:
                prob = solver.SteadyProblem(ops, f)
                if key not in reference_cache:
                    reference_cache[key] = solver.solve_fine_steady(prob, cfg.solver.method,
                                                                    cfg.solver.tol)
                _, p_ms = solver.solve_ms_steady(prob, ms.Psi)
                report.aQ_err_pct, report.L2_err_pct = relative_errors(
                    ops, reference_cache[key], p_ms)
        except Exception as exc:  # noqa: BLE001 - a failed row must not end the study
            log.error("study row H=1/%d m=%d L=%d failed: %s", run.n_coarse, run.m, run.L, exc)
            report.reason = f"{type(exc).__name__}: {exc}"
        report.wall_time_s = time.perf_counter() - t0
        log.info("H=1/%d m=%d L=%d contrast=%s: aQ %.4f%% L2 %.4f%% (%.1fs)", run.n_coarse, run.m,
                 run.L, report.contrast_label(), report.aQ_err_pct, report.L2_err_pct,
                 report.wall_time_s)
        rows.append(report)
    return fill_orders(rows)
