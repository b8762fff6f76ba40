"""Study configuration: INI-style key tree with strict key checking.

Sections and keys (defaults in brackets)::

    [grid]      domain [0 1 0 1], n_coarse [4 8 16], n_fine [128]
    [media]     preset [experiment1] | file, contrast [1e4/1e6]
    [physics]   rho, sigma (override the preset)
    [source]    f1 [sine], f2 [one]
    [aux]       L [6] (list allowed), overrides ("j:L, j:L")
    [basis]     m [formula] (list allowed), constraints [all]
    [solver]    method [direct], tol [1e-10]
    [transient] enabled [false], T [5], dt, p0 [zero], output_times
    [outputs]   directory [output], vtk [false]
    [decay]     element, k [1], m_list [1 2 3 4]
    [export]    basis ("j:k, j:k")

Lists are whitespace or comma separated; a contrast entry ``a/b`` sets the
two continua separately.
"""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

import numpy as np

from .grid import GridHierarchy
from .media import (EXPERIMENT1_CONTRAST, EXPERIMENT2_CONTRAST, ChannelSpec, experiment1_spec,
                    experiment2_spec, generate_channelized, load_media, constant_media)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    domain: tuple = (0.0, 1.0, 0.0, 1.0)
    n_coarse: list = field(default_factory=lambda: [4, 8, 16])
    n_fine: int = 128


@dataclass
class MediaConfig:
    preset: str | None = "experiment1"
    file: str | None = None
    contrast: list = field(default_factory=lambda: [EXPERIMENT1_CONTRAST])


@dataclass
class PhysicsConfig:
    rho: float | None = None
    sigma: float | None = None


@dataclass
class SourceConfig:
    f1: str = "sine"
    f2: str = "one"


@dataclass
class AuxConfig:
    L: list = field(default_factory=lambda: [6])
    overrides: dict = field(default_factory=dict)

    @property
    def L_list(self):
        return list(self.L)

    def per_element(self, hier: GridHierarchy, L: int):
        out = np.full(hier.n_elements, int(L))
        for j, v in self.overrides.items():
            if not 0 <= j < hier.n_elements:
                raise ConfigError(f"aux.overrides: element {j} out of range")
            out[j] = v
        return out


@dataclass
class BasisConfig:
    m: object = "formula"  # "formula" or list of ints
    constraints: str = "all"


@dataclass
class SolverConfig:
    method: str = "direct"
    tol: float = 1e-10


@dataclass
class TransientConfig:
    enabled: bool = False
    T: float = 5.0
    dt: list = field(default_factory=list)
    p0: str = "zero"
    output_times: list | None = None


@dataclass
class OutputConfig:
    directory: str = "output"
    vtk: bool = False


@dataclass
class DecayConfig:
    element: int | None = None
    k: int = 1
    m_list: list = field(default_factory=lambda: [1, 2, 3, 4])


@dataclass
class ExportConfig:
    basis: list = field(default_factory=list)  # (j, k) pairs, k 1-based


@dataclass
class StudyConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    media: MediaConfig = field(default_factory=MediaConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    aux: AuxConfig = field(default_factory=AuxConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    transient: TransientConfig = field(default_factory=TransientConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    decay: DecayConfig = field(default_factory=DecayConfig)
    export: ExportConfig = field(default_factory=ExportConfig)
    base_dir: Path = field(default_factory=Path.cwd, repr=False)
    warnings: list = field(default_factory=list, repr=False)

    def describe(self) -> str:
        """Resolved configuration as INI text (what the manifest records)."""
        lines = []
        for f in fields(self):
            if f.name in ("base_dir", "warnings"):
                continue
            lines.append(f"[{f.name}]")
            for key, val in asdict(getattr(self, f.name)).items():
                lines.append(f"{key} = {_format(val)}")
            lines.append("")
        return "\n".join(lines)


def _format(val) -> str:
    if val is None:
        return "none"
    if isinstance(val, dict):
        return ", ".join(f"{k}:{v}" for k, v in val.items())
    if isinstance(val, (list, tuple)):
        if val and all(isinstance(v, (list, tuple)) for v in val):
            sep = "/" if isinstance(val[0][0], float) else ":"
            return ", ".join(f"{a:g}{sep}{b:g}" if sep == "/" else f"{a}:{b}" for a, b in val)
        return " ".join(str(v) for v in val)
    return str(val)


# ---------------------------------------------------------------------------
# parsing

def _split(text: str) -> list[str]:
    return [t for t in text.replace(",", " ").split() if t]


def _floats(text):
    return [float(t) for t in _split(text)]


def _ints(text):
    return [int(t) for t in _split(text)]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _contrast_list(text):
    out = []
    for tok in [t.strip() for t in text.split(",") if t.strip()]:
        parts = tok.split("/")
        if len(parts) == 1:
            v = float(parts[0])
            out.append((v, v))
        elif len(parts) == 2:
            out.append((float(parts[0]), float(parts[1])))
        else:
            raise ValueError(f"bad contrast entry {tok!r}")
    return out


def _pairs(text, conv=int):
    out = []
    for tok in _split(text):
        a, b = tok.split(":")
        out.append((conv(a), conv(b)))
    return out


def _m(text):
    t = text.strip().lower()
    return "formula" if t in ("formula", "9log(1/h)/log64") else _ints(text)


def _none_or(conv):
    return lambda text: None if text.strip().lower() in ("", "none") else conv(text)


_SCHEMA = {
    "grid": {"domain": lambda t: tuple(_floats(t)), "n_coarse": _ints, "n_fine": int},
    "media": {"preset": _none_or(str.strip), "file": _none_or(str.strip),
              "contrast": _contrast_list},
    "physics": {"rho": _none_or(float), "sigma": _none_or(float)},
    "source": {"f1": str.strip, "f2": str.strip},
    "aux": {"L": _ints, "overrides": lambda t: dict(_pairs(t))},
    "basis": {"m": _m, "constraints": str.strip},
    "solver": {"method": str.strip, "tol": float},
    "transient": {"enabled": _bool, "T": float, "dt": _floats, "p0": str.strip,
                  "output_times": _none_or(_floats)},
    "outputs": {"directory": str.strip, "vtk": _bool},
    "decay": {"element": _none_or(int), "k": int, "m_list": _ints},
    "export": {"basis": _pairs},
}


def parse_config(text: str, base_dir=None, strict: bool = True) -> StudyConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (e.g. "T", "L")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    cfg = StudyConfig()
    if base_dir is not None:
        cfg.base_dir = Path(base_dir)
    for section in parser.sections():
        if section not in _SCHEMA:
            msg = f"unknown section [{section}]"
            if strict:
                raise ConfigError(msg)
            cfg.warnings.append(msg)
            continue
        target = getattr(cfg, section)
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                msg = f"[{section}] unknown key '{key}'"
                if strict:
                    raise ConfigError(msg)
                cfg.warnings.append(msg)
                continue
            try:
                setattr(target, key, _SCHEMA[section][key](raw))
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc
    return cfg


def validate(cfg: StudyConfig) -> StudyConfig:
    """Cross-field checks; fills dependent defaults. Returns ``cfg``."""
    g = cfg.grid
    if len(g.domain) != 4:
        raise ConfigError("[grid] domain needs four numbers: x0 x1 y0 y1")
    if not g.n_coarse:
        raise ConfigError("[grid] n_coarse must not be empty")
    for nc in g.n_coarse:
        if nc < 1 or g.n_fine % nc:
            raise ConfigError(f"[grid] n_fine={g.n_fine} is not a multiple of n_coarse={nc}")
    if sorted(g.n_coarse) != list(g.n_coarse):
        raise ConfigError("[grid] n_coarse must be ascending (H descending)")

    m = cfg.media
    if (m.preset is None) == (m.file is None):
        raise ConfigError("[media] set exactly one of 'preset' or 'file'")
    if m.preset is not None and m.preset not in PRESETS:
        raise ConfigError(f"[media] unknown preset {m.preset!r}; choose from {sorted(PRESETS)}")
    if m.file is not None:
        path = (cfg.base_dir / m.file)
        if not path.exists():
            raise ConfigError(f"[media] file not found: {path}")
    if not m.contrast:
        raise ConfigError("[media] contrast list must not be empty")
    if any(min(c) < 1 for c in m.contrast):
        raise ConfigError("[media] contrast values must be >= 1")

    for name in ("f1", "f2"):
        try:
            parse_source(getattr(cfg.source, name))
        except ValueError as exc:
            raise ConfigError(f"[source] {name}: {exc}") from exc

    if not cfg.aux.L or min(cfg.aux.L) < 1:
        raise ConfigError("[aux] L must be a non-empty list of positive integers")
    if cfg.basis.m != "formula":
        if not cfg.basis.m or min(cfg.basis.m) < 1:
            raise ConfigError("[basis] m must be 'formula' or positive integers")
        if len(cfg.basis.m) != len(g.n_coarse) and len(g.n_coarse) != 1:
            raise ConfigError("[basis] m needs one value per n_coarse entry (or a single n_coarse)")
    if cfg.basis.constraints not in ("all", "own"):
        raise ConfigError("[basis] constraints must be 'all' or 'own'")

    s = cfg.solver
    if s.method not in ("direct", "cg"):
        raise ConfigError("[solver] method must be 'direct' or 'cg'")
    if not 0 < s.tol < 1:
        raise ConfigError("[solver] tol must lie in (0, 1)")

    t = cfg.transient
    if t.enabled:
        if not t.dt:
            raise ConfigError("[transient] enabled without dt")
        n_rows = len(g.n_coarse) if cfg.basis.m == "formula" or len(g.n_coarse) > 1 \
            else len(cfg.basis.m)
        if len(t.dt) == 1:
            t.dt = t.dt * n_rows
        if len(t.dt) != n_rows:
            raise ConfigError("[transient] dt needs one value per study row")
        if not t.T > 0 or min(t.dt) <= 0 or max(t.dt) > t.T:
            raise ConfigError("[transient] need T > 0 and 0 < dt <= T")
        try:
            parse_initial(t.p0)
        except ValueError as exc:
            raise ConfigError(f"[transient] p0: {exc}") from exc
    elif t.dt:
        msg = "[transient] dt given but transient disabled; dt ignored"
        log.warning(msg)
        cfg.warnings.append(msg)
        t.dt = []
    return cfg


def load_config(path, strict: bool = True) -> StudyConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(), base_dir=path.parent, strict=strict)
    return validate(cfg)


def validate_config(path, strict: bool = True) -> StudyConfig:
    """Load, check and echo the resolved configuration."""
    cfg = load_config(path, strict)
    log.info("resolved configuration:\n%s", cfg.describe())
    return cfg


# ---------------------------------------------------------------------------
# factories used by the study harness and the CLI

PRESETS = {
    "experiment1": (experiment1_spec, EXPERIMENT1_CONTRAST),
    "experiment2": (experiment2_spec, EXPERIMENT2_CONTRAST),
    "homogeneous": (None, (1.0, 1.0)),
}


def preset_spec(name: str) -> ChannelSpec | None:
    return PRESETS[name][0]() if PRESETS[name][0] is not None else None


def build_media(cfg: StudyConfig, hier: GridHierarchy, contrast):
    m = cfg.media
    if m.file is not None:
        media = load_media(cfg.base_dir / m.file, hier)
    elif m.preset == "homogeneous":
        media = constant_media(hier)
    else:
        media = generate_channelized(hier, preset_spec(m.preset), contrast)
    p = cfg.physics
    if p.rho is not None or p.sigma is not None:
        media = media.with_constants(p.rho, p.sigma)
    return media


def parse_source(text: str):
    """'sine' (2 pi^2 sin(pi x) sin(pi y)), 'one', 'zero', a number, or
    'box x0 x1 y0 y1 [value]' (indicator)."""
    t = text.strip().lower()
    if t == "sine":
        return lambda x, y: 2.0 * math.pi ** 2 * np.sin(math.pi * x) * np.sin(math.pi * y)
    if t == "one":
        return 1.0
    if t == "zero":
        return 0.0
    parts = t.split()
    if parts and parts[0] == "box":
        if len(parts) not in (5, 6):
            raise ValueError("box source needs x0 x1 y0 y1 [value]")
        x0, x1, y0, y1 = map(float, parts[1:5])
        val = float(parts[5]) if len(parts) == 6 else 1.0
        return lambda x, y: val * ((x >= x0) & (x <= x1) & (y >= y0) & (y <= y1))
    try:
        return float(t)
    except ValueError:
        raise ValueError(f"unknown source {text!r}") from None


def build_sources(cfg: StudyConfig):
    return (parse_source(cfg.source.f1), parse_source(cfg.source.f2))


def parse_initial(text: str):
    """'zero' or 'sine' (sin(pi x) sin(pi y) in both continua)."""
    t = text.strip().lower()
    if t not in ("zero", "sine"):
        raise ValueError(f"unknown initial state {text!r}; use 'zero' or 'sine'")
    return t


def build_initial_state(cfg: StudyConfig, hier: GridHierarchy):
    if parse_initial(cfg.transient.p0) == "zero":
        return None
    xy = hier.node_coordinates
    v = np.sin(math.pi * xy[:, 0]) * np.sin(math.pi * xy[:, 1])
    return np.concatenate([v, v])
