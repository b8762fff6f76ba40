"""Two-continuum coefficient fields.

Conductivities and capacities are piecewise constant on fine cells. Fractures
are optional polylines along fine-grid edges carrying aperture-scaled line
coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridHierarchy

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class MediaError(ValueError):
    """Malformed or invalid media data."""


class MediaParseError(MediaError):
    pass


class MediaValidationError(MediaError):
    pass


@dataclass(frozen=True)
class Fracture:
    """Polyline through fine-grid nodes ``(ix, iy)``; consecutive vertices must
    share a row or column so the path runs along fine edges."""

    vertices: tuple[tuple[int, int], ...]
    aperture: float
    kappa: tuple[float, float]
    capacity: tuple[float, float]

    def edges(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        out = []
        for (ax, ay), (bx, by) in zip(self.vertices[:-1], self.vertices[1:]):
            if ax != bx and ay != by:
                raise MediaValidationError(
                    f"fracture segment ({ax},{ay})->({bx},{by}) is not along a fine-grid line")
            if ax == bx:
                step = 1 if by > ay else -1
                out += [((ax, y), (ax, y + step)) for y in range(ay, by, step)]
            else:
                step = 1 if bx > ax else -1
                out += [((x, ay), (x + step, ay)) for x in range(ax, bx, step)]
        return out


@dataclass(frozen=True, eq=False)
class MediaField:
    shape: tuple[int, int]  # fine cells (nx, ny)
    kappa: np.ndarray  # (2, nx*ny)
    capacity: np.ndarray  # (2, nx*ny)
    rho: float = 1.0
    sigma: float = 1.0
    fractures: tuple[Fracture, ...] = field(default_factory=tuple)

    def __post_init__(self):
        validate_media(self)

    @property
    def contrast(self) -> tuple[float, float]:
        return tuple(float(k.max() / k.min()) for k in self.kappa)

    @property
    def kappa_bounds(self) -> tuple[float, float]:
        lo = min(float(self.kappa.min()), *(min(f.kappa) for f in self.fractures)) \
            if self.fractures else float(self.kappa.min())
        hi = max(float(self.kappa.max()), *(max(f.kappa) for f in self.fractures)) \
            if self.fractures else float(self.kappa.max())
        return lo, hi

    def check_grid(self, hier: GridHierarchy):
        if tuple(self.shape) != tuple(hier.n_fine):
            raise MediaValidationError(
                f"dimension mismatch: media has {self.shape[0]}x{self.shape[1]} cells, "
                f"grid has {hier.n_fine[0]}x{hier.n_fine[1]}")

    def swapped(self) -> "MediaField":
        """Same media with the continuum labels exchanged."""
        frac = tuple(Fracture(f.vertices, f.aperture, f.kappa[::-1], f.capacity[::-1])
                     for f in self.fractures)
        return MediaField(self.shape, self.kappa[::-1].copy(), self.capacity[::-1].copy(),
                          self.rho, self.sigma, frac)

    def with_constants(self, rho=None, sigma=None) -> "MediaField":
        return MediaField(self.shape, self.kappa, self.capacity,
                          self.rho if rho is None else rho,
                          self.sigma if sigma is None else sigma, self.fractures)

    def __eq__(self, other):
        if not isinstance(other, MediaField):
            return NotImplemented
        return (tuple(self.shape) == tuple(other.shape)
                and np.array_equal(self.kappa, other.kappa)
                and np.array_equal(self.capacity, other.capacity)
                and self.rho == other.rho and self.sigma == other.sigma
                and self.fractures == other.fractures)


def validate_media(media: MediaField):
    nx, ny = media.shape
    for name in ("kappa", "capacity"):
        arr = getattr(media, name)
        if arr.shape != (2, nx * ny):
            raise MediaValidationError(f"{name} has shape {arr.shape}, expected (2, {nx * ny})")
        if not np.all(np.isfinite(arr)):
            raise MediaValidationError(f"non-finite {name} value")
    if np.any(media.kappa <= 0):
        raise MediaValidationError("non-positive conductivity")
    if np.any(media.capacity <= 0):
        raise MediaValidationError("non-positive capacity")
    if not media.rho > 0:
        raise MediaValidationError(f"rho must be positive, got {media.rho}")
    if not media.sigma >= 0:
        raise MediaValidationError(f"sigma must be non-negative, got {media.sigma}")
    for f in media.fractures:
        if not f.aperture > 0 or min(f.kappa) <= 0 or min(f.capacity) <= 0:
            raise MediaValidationError("fracture coefficients must be positive")
        for (ax, ay), (bx, by) in f.edges():
            for x, y in ((ax, ay), (bx, by)):
                if not (0 <= x <= nx and 0 <= y <= ny):
                    raise MediaValidationError(f"fracture node ({x},{y}) outside the fine grid")


def constant_media(hier: GridHierarchy, kappa=(1.0, 1.0), capacity=(1.0, 1.0),
                   rho=1.0, sigma=1.0) -> MediaField:
    n = hier.n_cells
    k = np.array([np.full(n, float(kappa[0])), np.full(n, float(kappa[1]))])
    c = np.array([np.full(n, float(capacity[0])), np.full(n, float(capacity[1]))])
    return MediaField(hier.n_fine, k, c, rho, sigma)


# ---------------------------------------------------------------------------
# channelized media

@dataclass(frozen=True)
class Channel:
    """Union of axis-aligned rectangles ``(x0, x1, y0, y1)`` in domain
    coordinates; an L-shape is two rectangles."""

    rects: tuple[tuple[float, float, float, float], ...]
    multiplier: float = 1.0


@dataclass(frozen=True)
class ChannelSpec:
    channels: tuple[tuple[Channel, ...], tuple[Channel, ...]]
    kappa_background: tuple[float, float] = (1.0, 1.0)
    capacity_background: tuple[float, float] = (1.0, 1.0)
    capacity_channel: tuple[float, float] | None = None
    rho: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        for chans in self.channels:
            for ch in chans:
                if not ch.multiplier > 0:
                    raise MediaValidationError("channel multiplier must be positive")
                for x0, x1, y0, y1 in ch.rects:
                    if not (x1 > x0 and y1 > y0):
                        raise MediaValidationError(f"degenerate channel rectangle {(x0, x1, y0, y1)}")


def channel_mask(hier: GridHierarchy, channel: Channel) -> np.ndarray:
    """Boolean mask over fine cells covered by ``channel``.

    Rectangle edges snap to the nearest fine-grid line; every rectangle covers
    at least one cell per axis.
    """
    x0d, x1d, y0d, y1d = hier.domain
    hx, hy = hier.h
    nx, ny = hier.n_fine
    mask = np.zeros((ny, nx), dtype=bool)
    for x0, x1, y0, y1 in channel.rects:
        if x1 < x0d or x0 > x1d or y1 < y0d or y0 > y1d:
            raise MediaValidationError(f"channel rectangle {(x0, x1, y0, y1)} outside the domain")
        i0 = min(max(int(math.floor((x0 - x0d) / hx + 0.5)), 0), nx - 1)
        i1 = min(max(int(math.floor((x1 - x0d) / hx + 0.5)), i0 + 1), nx)
        k0 = min(max(int(math.floor((y0 - y0d) / hy + 0.5)), 0), ny - 1)
        k1 = min(max(int(math.floor((y1 - y0d) / hy + 0.5)), k0 + 1), ny)
        mask[k0:k1, i0:i1] = True
    return mask.ravel()


def generate_channelized(hier: GridHierarchy, spec: ChannelSpec, contrast=1.0) -> MediaField:
    """Background cells take the background value; channel cells take
    ``background * contrast * multiplier``. ``contrast`` may be a scalar or a
    per-continuum pair."""
    contrast = np.broadcast_to(np.asarray(contrast, dtype=float), (2,))
    if np.any(contrast < 1):
        raise MediaValidationError(f"contrast must be >= 1, got {tuple(contrast)}")
    n = hier.n_cells
    kappa = np.empty((2, n))
    cap = np.empty((2, n))
    cap_ch = spec.capacity_channel or spec.capacity_background
    for i in range(2):
        kappa[i] = spec.kappa_background[i]
        cap[i] = spec.capacity_background[i]
        if not spec.channels[i] and contrast[i] > 1:
            log.warning("continuum %d has no channels; contrast %g has no effect", i + 1, contrast[i])
        for ch in spec.channels[i]:
            m = channel_mask(hier, ch)
            kappa[i, m] = spec.kappa_background[i] * contrast[i] * ch.multiplier
            cap[i, m] = cap_ch[i]
    return MediaField(hier.n_fine, kappa, cap, spec.rho, spec.sigma)


def high_contrast_mask(media: MediaField, i: int) -> np.ndarray:
    k = media.kappa[i]
    return k > k.min()


def channel_components(media: MediaField, hier: GridHierarchy, j: int) -> tuple[int, int]:
    """Number of connected high-contrast regions of each continuum inside
    coarse element ``j`` (4-connectivity on its fine cells)."""
    from scipy import ndimage

    cells = hier.element_cells(j)
    r = hier.refinement
    out = []
    for i in range(2):
        mask = high_contrast_mask(media, i)[cells].reshape(r, r)
        out.append(int(ndimage.label(mask)[1]) if mask.any() and not mask.all() else 0)
    return tuple(out)


def _strip_h(y, x0, x1, w):
    return (x0, x1, y, y + w)


def _strip_v(x, y0, y1, w):
    return (x, x + w, y0, y1)


def experiment1_spec(sigma: float = 1.0) -> ChannelSpec:
    """Channel layout used as a stand-in for the steady-state experiment media.

    Each continuum holds six straight channels one fine cell (1/128) wide and
    roughly 0.2-0.3 long, none touching the boundary: continuum 1 runs
    horizontally, continuum 2 vertically. Two bundles of three parallel
    channels cross so that exactly one coarse element meets six channel
    components at each of H = 1/4, 1/8, 1/16; no element meets more than
    three components of either continuum. Channels are floating (they do not
    reach the Dirichlet boundary), so higher contrast couples them over
    longer distances and calls for more oversampling layers.
    """
    c = 1.0 / 128
    # (row or column, start, end) in fine-cell units
    horizontal = [(81, 26, 64), (84, 26, 64), (87, 26, 64), (38, 70, 110), (19, 20, 60),
                  (56, 80, 118)]
    vertical = [(41, 64, 102), (44, 64, 102), (47, 64, 102), (90, 20, 60), (109, 70, 110),
                (19, 10, 50)]
    c1 = tuple(Channel((_strip_h(r * c, a * c, b * c, c),)) for r, a, b in horizontal)
    c2 = tuple(Channel((_strip_v(r * c, a * c, b * c, c),)) for r, a, b in vertical)
    return ChannelSpec((c1, c2), kappa_background=(1.0, 1.0), capacity_background=(1.0, 1.0),
                       rho=1.0, sigma=sigma)


def experiment2_spec() -> ChannelSpec:
    """Transient-experiment constants on the experiment-1 channel layout."""
    base = experiment1_spec()
    return ChannelSpec(base.channels, kappa_background=(0.1, 1.0),
                       capacity_background=(10.0, 1000.0), capacity_channel=(100.0, 10000.0),
                       rho=1.0, sigma=25.0)


EXPERIMENT1_CONTRAST = (1e4, 1e6)
EXPERIMENT2_CONTRAST = (1e5, 1e6)  # channel values 1e4 / 1e6 over backgrounds 1e-1 / 1


# ---------------------------------------------------------------------------
# file format

def save_media(media: MediaField, path):
    """Write the text media format. Floats use ``repr`` so loading is exact."""
    nx, ny = media.shape
    bg = [float(np.min(c)) for c in media.capacity]
    lines = [
        f"DUALCEM-MEDIA {FORMAT_VERSION}",
        f"nx {nx}",
        f"ny {ny}",
        f"rho {float(media.rho)!r}",
        f"sigma {float(media.sigma)!r}",
        f"capacity_background {bg[0]!r} {bg[1]!r}",
    ]
    for name, arr in (("kappa1", media.kappa[0]), ("kappa2", media.kappa[1]),
                      ("capacity1", media.capacity[0]), ("capacity2", media.capacity[1])):
        lines.append(name)
        grid = arr.reshape(ny, nx)
        lines += [" ".join(repr(float(v)) for v in row) for row in grid]
    lines.append(f"fractures {len(media.fractures)}")
    for f in media.fractures:
        lines.append("fracture " + " ".join(repr(float(v)) for v in
                                            (f.aperture, *f.kappa, *f.capacity)))
        lines.append(" ".join(f"{x},{y}" for x, y in f.vertices))
    Path(path).write_text("\n".join(lines) + "\n")


def load_media(path, hier: GridHierarchy | None = None) -> MediaField:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"media file not found: {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    it = iter(enumerate(lines, start=1))

    def expect(key, nvals=1, conv=float):
        try:
            lineno, ln = next(it)
        except StopIteration:
            raise MediaParseError(f"unexpected end of file, expected '{key}'") from None
        parts = ln.split()
        if parts[0] != key or len(parts) != nvals + 1:
            raise MediaParseError(f"line {lineno}: expected '{key}' with {nvals} value(s), got {ln!r}")
        try:
            vals = [conv(p) for p in parts[1:]]
        except ValueError as exc:
            raise MediaParseError(f"line {lineno}: {exc}") from None
        return vals[0] if nvals == 1 else vals

    version = expect("DUALCEM-MEDIA", conv=int)
    if version != FORMAT_VERSION:
        raise MediaParseError(f"unsupported media format version {version}")
    nx = expect("nx", conv=int)
    ny = expect("ny", conv=int)
    rho = expect("rho")
    sigma = expect("sigma")
    expect("capacity_background", 2)
    if hier is not None and (nx, ny) != tuple(hier.n_fine):
        raise MediaValidationError(
            f"dimension mismatch: file has {nx}x{ny} cells, grid has {hier.n_fine[0]}x{hier.n_fine[1]}")

    blocks = {}
    for name in ("kappa1", "kappa2", "capacity1", "capacity2"):
        expect(name, 0)
        rows = []
        for _ in range(ny):
            try:
                lineno, ln = next(it)
            except StopIteration:
                raise MediaParseError(f"block {name}: expected {ny} rows") from None
            try:
                row = [float(v) for v in ln.split()]
            except ValueError:
                raise MediaParseError(f"line {lineno}: block {name} ended early or holds text") from None
            if len(row) != nx:
                raise MediaValidationError(
                    f"line {lineno}: dimension mismatch in {name}: {len(row)} values, expected {nx}")
            rows.append(row)
        blocks[name] = np.array(rows).ravel()

    fractures = []
    rest = list(it)
    if rest:
        lineno, ln = rest[0]
        parts = ln.split()
        if parts[0] != "fractures" or len(parts) != 2:
            raise MediaParseError(f"line {lineno}: unexpected content {ln!r}")
        nfrac = int(parts[1])
        if len(rest) != 1 + 2 * nfrac:
            raise MediaParseError(f"fracture section: expected {nfrac} entries")
        for a in range(nfrac):
            (l1, head), (l2, verts) = rest[1 + 2 * a], rest[2 + 2 * a]
            hp = head.split()
            if hp[0] != "fracture" or len(hp) != 6:
                raise MediaParseError(f"line {l1}: malformed fracture header {head!r}")
            d, k1, k2, c1, c2 = map(float, hp[1:])
            try:
                vv = tuple(tuple(int(t) for t in v.split(",")) for v in verts.split())
            except ValueError:
                raise MediaParseError(f"line {l2}: malformed fracture vertices") from None
            fractures.append(Fracture(vv, d, (k1, k2), (c1, c2)))

    kappa = np.array([blocks["kappa1"], blocks["kappa2"]])
    cap = np.array([blocks["capacity1"], blocks["capacity2"]])
    return MediaField((nx, ny), kappa, cap, rho, sigma, tuple(fractures))
