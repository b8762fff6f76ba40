"""Output writers: VTK legacy structured grids and the run manifest."""

from __future__ import annotations

import platform
import sys
from pathlib import Path

import numpy as np

from .grid import GridHierarchy


def write_vtk(hier: GridHierarchy, fields: dict, path, title: str = "dualcem field"):
    """ASCII legacy VTK STRUCTURED_GRID with one point-data scalar per entry.

    Each value of ``fields`` is either a dual-continuum dof vector (written as
    ``<name>_p1`` and ``<name>_p2``) or a single nodal vector.
    """
    nx, ny = hier.n_fine
    xy = hier.node_coordinates
    n = hier.n_nodes
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET STRUCTURED_GRID", f"DIMENSIONS {nx + 1} {ny + 1} 1",
             f"POINTS {n} double"]
    lines += [f"{float(x)!r} {float(y)!r} 0.0" for x, y in xy]
    lines.append(f"POINT_DATA {n}")
    for name, v in fields.items():
        v = np.asarray(v, dtype=float)
        if v.size == 2 * n:
            parts = {f"{name}_p1": v[:n], f"{name}_p2": v[n:]}
        elif v.size == n:
            parts = {name: v}
        else:
            raise ValueError(f"field {name!r} has {v.size} entries; expected {n} or {2 * n}")
        for pname, pv in parts.items():
            lines += [f"SCALARS {pname} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(x)) for x in pv]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_scalars(path) -> dict:
    """Point-data scalars of a file written by :func:`write_vtk`."""
    out, name, values = {}, None, None
    lines = Path(path).read_text().splitlines()
    n = None
    for i, line in enumerate(lines):
        if line.startswith("POINT_DATA"):
            n = int(line.split()[1])
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            values = np.array([float(x) for x in lines[i + 2:i + 2 + n]])
            out[name] = values
    return out


def versions() -> dict:
    import scipy

    from . import __version__
    return {"dualcem": __version__, "python": sys.version.split()[0], "numpy": np.__version__,
            "scipy": scipy.__version__, "platform": platform.platform()}


def write_manifest(directory, command: str, config_text: str, timings: dict,
                   extra: dict | None = None):
    """manifest.txt: command, versions, per-stage wall times and the resolved config."""
    lines = [f"command: {command}"]
    for k, v in versions().items():
        lines.append(f"version.{k}: {v}")
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    for stage, seconds in timings.items():
        lines.append(f"time.{stage}: {seconds:.3f} s")
    lines += ["", "# resolved configuration", config_text]
    path = Path(directory) / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path
