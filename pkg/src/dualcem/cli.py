"""Command-line entry point.

    dualcem <subcommand> --config PATH [--output DIR] [--threads N] [--strict] [--seedless]

Subcommands: solve-steady, solve-transient, study, spectrum, basis, decay,
validate. Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import random
import sys
import time
from contextlib import contextmanager, nullcontext
from pathlib import Path

import numpy as np

from . import analysis, basis, solver, spectral
from .assembly import assemble_operators
from .config import (ConfigError, StudyConfig, build_initial_state, build_media, build_sources,
                     validate_config)
from .grid import InvalidConfiguration, build_hierarchy, partition_of_unity
from .io import write_manifest, write_vtk
from .media import MediaError

log = logging.getLogger("dualcem")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4

NUMERICAL_ERRORS = (solver.SolverError, spectral.SpectralBreakdown, basis.SaddlePointError,
                    analysis.UndefinedError, np.linalg.LinAlgError, FloatingPointError)


class Timer:
    def __init__(self):
        self.stages = {}

    @contextmanager
    def __call__(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t0
            log.info("stage %s: %.2fs", name, self.stages[name])


def _setup(cfg: StudyConfig, n_coarse: int, contrast, timer: Timer):
    with timer("assembly"):
        hier = build_hierarchy(cfg.grid.domain, n_coarse, cfg.grid.n_fine // n_coarse)
        media = build_media(cfg, hier, contrast)
        pou = partition_of_unity(hier)
        ops = assemble_operators(hier, media, pou)
    return hier, media, pou, ops


def _single_run(cfg: StudyConfig):
    """The first study row: what solve-*, spectrum and basis operate on."""
    return analysis.study_runs(cfg)[0]


def _write_errors(path, report):
    analysis.write_error_csv([report], path)


def cmd_solve_steady(cfg, out: Path, args, timer):
    run = _single_run(cfg)
    hier, media, pou, ops = _setup(cfg, run.n_coarse, run.contrast, timer)
    prob = solver.SteadyProblem(ops, build_sources(cfg))
    with timer("fine_solve"):
        p = solver.solve_fine_steady(prob, cfg.solver.method, cfg.solver.tol)
    with timer("aux_space"):
        aux = spectral.build_auxiliary_space(hier, media, pou, cfg.aux.per_element(hier, run.L),
                                             workers=args.threads)
    with timer("basis"):
        ms = basis.build_multiscale_basis(ops, aux, run.m, cfg.basis.constraints,
                                          workers=args.threads)
    with timer("ms_solve"):
        _, p_ms = solver.solve_ms_steady(prob, ms.Psi)
    report = analysis.ErrorReport(1.0 / run.n_coarse, run.m, run.L, run.contrast)
    report.aQ_err_pct, report.L2_err_pct = analysis.relative_errors(ops, p, p_ms)
    report.Lambda = aux.Lambda
    report.wall_time_s = sum(timer.stages.values())
    _write_errors(out / "errors.csv", report)
    if cfg.outputs.vtk:
        write_vtk(hier, {"p_fine": p, "p_ms": p_ms, "error": p - p_ms}, out / "fields.vtk")
    print(f"aQ error {report.aQ_err_pct:.4f}%  L2 error {report.L2_err_pct:.4f}%")


def cmd_solve_transient(cfg, out: Path, args, timer):
    if not cfg.transient.enabled:
        raise ConfigError("solve-transient needs [transient] enabled = true")
    run = _single_run(cfg)
    hier, media, pou, ops = _setup(cfg, run.n_coarse, run.contrast, timer)
    t = cfg.transient
    prob = solver.TransientProblem(ops, build_sources(cfg), build_initial_state(cfg, hier),
                                   t.T, run.dt, t.output_times)
    with timer("aux_space"):
        aux = spectral.build_auxiliary_space(hier, media, pou, cfg.aux.per_element(hier, run.L),
                                             workers=args.threads)
    with timer("basis"):
        ms = basis.build_multiscale_basis(ops, aux, run.m, cfg.basis.constraints,
                                          workers=args.threads)
    # the metric integrates over every step, so keep them all
    full = solver.TransientProblem(ops, prob.f, prob.p0, t.T, run.dt, None)
    with timer("fine_solve"):
        fine = solver.solve_fine_transient(full)
    with timer("ms_solve"):
        coarse = solver.solve_ms_transient(full, ms.Psi)
    report = analysis.ErrorReport(1.0 / run.n_coarse, run.m, run.L, run.contrast, run.dt)
    report.aQ_err_pct, report.L2_err_pct = analysis.relative_errors(
        ops, fine.states[-1], coarse.states[-1])
    report.transient_metric = analysis.transient_error_metric(ops, fine, coarse)
    report.Lambda = aux.Lambda
    report.wall_time_s = sum(timer.stages.values())
    _write_errors(out / "errors.csv", report)
    analysis.write_metric_csv([report], out / "metric.csv")
    analysis.write_norms_csv(ops, fine, coarse, out / "norms.csv")
    if cfg.outputs.vtk:
        keep = prob.time_grid() if t.output_times is None else t.output_times
        for i, tt in enumerate(np.atleast_1d(keep)):
            try:
                pf, pm = fine.at(tt), coarse.at(tt)
            except KeyError:
                continue
            write_vtk(hier, {"p_fine": pf, "p_ms": pm}, out / f"fields_{i:04d}.vtk",
                      title=f"t={tt:.6g}")
    print(f"T={t.T:g}: aQ error {report.aQ_err_pct:.4f}%  L2 error {report.L2_err_pct:.4f}%  "
          f"metric {report.transient_metric:.6g}")


def cmd_study(cfg, out: Path, args, timer):
    with timer("study"):
        rows = analysis.run_convergence_study(cfg, workers=args.threads)
    analysis.write_error_csv(rows, out / "errors.csv")
    if cfg.transient.enabled:
        analysis.write_metric_csv(rows, out / "metric.csv")
    failed = [r for r in rows if r.reason]
    for r in rows:
        status = f"FAILED ({r.reason})" if r.reason else \
            f"aQ {r.aQ_err_pct:.4f}%  L2 {r.L2_err_pct:.4f}%"
        print(f"H=1/{round(1 / r.H)} m={r.m} L={r.L} contrast={r.contrast_label()}: {status}")
    if failed and len(failed) == len(rows):
        raise solver.SolverError("every study row failed")


def cmd_spectrum(cfg, out: Path, args, timer):
    run = _single_run(cfg)
    hier, media, pou, _ = _setup(cfg, run.n_coarse, run.contrast, timer)
    with timer("aux_space"):
        aux = spectral.build_auxiliary_space(hier, media, pou, cfg.aux.per_element(hier, run.L),
                                             workers=args.threads)
    spectral.write_spectrum_csv(aux, out / "spectrum.csv")
    print(f"Lambda {aux.Lambda:.6g}  lambda_max {aux.lambda_max:.6g}")


def cmd_basis(cfg, out: Path, args, timer):
    run = _single_run(cfg)
    hier, media, pou, ops = _setup(cfg, run.n_coarse, run.contrast, timer)
    picks = cfg.export.basis or [(hier.n_elements // 2, 1)]
    with timer("aux_space"):
        aux = spectral.build_auxiliary_space(hier, media, pou, cfg.aux.per_element(hier, run.L),
                                             workers=args.threads)
    with timer("basis"):
        for j, k in picks:
            if not 0 <= j < hier.n_elements or not 1 <= k <= aux.L[j]:
                raise ConfigError(f"[export] basis {j}:{k} out of range")
            psi, _ = basis.build_local_basis(ops, aux, j, k - 1, run.m, cfg.basis.constraints)
            write_vtk(hier, {"psi": psi}, out / f"basis_j{j}_k{k}.vtk",
                      title=f"basis j={j} k={k} m={run.m}")
    print(f"wrote {len(picks)} basis function(s)")


def cmd_decay(cfg, out: Path, args, timer):
    run = _single_run(cfg)
    hier, media, pou, ops = _setup(cfg, run.n_coarse, run.contrast, timer)
    d = cfg.decay
    j = d.element
    if j is None:  # centre element
        j = hier.element_index(hier.n_coarse[0] // 2, hier.n_coarse[1] // 2)
    with timer("aux_space"):
        aux = spectral.build_auxiliary_space(hier, media, pou, cfg.aux.per_element(hier, run.L),
                                             workers=args.threads)
    if not 1 <= d.k <= aux.L[j]:
        raise ConfigError(f"[decay] k={d.k} outside 1..{aux.L[j]}")
    with timer("decay"):
        rows = basis.measure_decay(ops, aux, j, d.k - 1, d.m_list, cfg.basis.constraints)
    basis.write_decay_csv(rows, out / "decay.csv")
    for r in rows:
        print(f"m={r['m']}: ||psi - psi_ms||^2 = {r['diff_energy']:.6e}")


def cmd_validate(cfg, out, args, timer):
    print(cfg.describe())


COMMANDS = {
    "solve-steady": cmd_solve_steady,
    "solve-transient": cmd_solve_transient,
    "study": cmd_study,
    "spectrum": cmd_spectrum,
    "basis": cmd_basis,
    "decay": cmd_decay,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualcem",
                                description="CEM-GMsFEM for dual-continuum flow")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="-v for info, -vv for debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--output", type=Path, default=None,
                       help="output directory (default: [outputs] directory)")
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--strict", action="store_true", help="reject unknown config keys")
        s.add_argument("--seedless", action="store_true",
                       help="fail if any random number generator is touched")
    return p


@contextmanager
def _no_randomness():
    """Patch the global RNG entry points so any use raises."""
    def boom(*a, **k):
        raise RuntimeError("randomness used in a --seedless run")

    saved = (np.random.default_rng, np.random.seed, np.random.rand, random.random)
    np.random.default_rng = np.random.seed = np.random.rand = random.random = boom
    try:
        yield
    finally:
        np.random.default_rng, np.random.seed, np.random.rand, random.random = saved


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = validate_config(args.config, strict=args.strict)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = args.output if args.output is not None else cfg.base_dir / cfg.outputs.directory
    timer = Timer()
    code = EXIT_OK
    try:
        out.mkdir(parents=True, exist_ok=True)
        guard = _no_randomness() if args.seedless else nullcontext()
        with guard:
            COMMANDS[args.command](cfg, out, args, timer)
    except (ConfigError, InvalidConfiguration, MediaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_OTHER
    try:
        write_manifest(out, " ".join(["dualcem", args.command, "--config", str(args.config)]),
                       cfg.describe(), timer.stages, {"exit_code": code, "threads": args.threads})
    except OSError as exc:
        print(f"I/O error writing manifest: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
