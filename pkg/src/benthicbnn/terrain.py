"""Bathymetry rasters, synthetic habitat worlds, patches and terrain features."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import (
    ConfigurationError,
    DegenerateDataError,
    NodataError,
    OutOfBoundsError,
    ParseError,
)

CLASS_NAMES = ("sand", "screwshell rubble", "patchy reef", "reef", "kelp")
SAND, RUBBLE, PATCHY, REEF, KELP = range(5)
N_CLASSES = len(CLASS_NAMES)

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")


@dataclass(frozen=True, eq=False)
class Raster:
    """A north-up grid of depths (metres, positive down).

    Row 0 is the northern edge; ``(x_ll, y_ll)`` is the lower-left corner
    of the lower-left cell.
    """

    depths: np.ndarray
    x_ll: float = 0.0
    y_ll: float = 0.0
    cell_size: float = 2.0
    nodata_value: float = -9999.0

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64)
        if d.ndim != 2:
            raise ConfigurationError(f"depths must be 2-D, got shape {d.shape}")
        if not self.cell_size > 0:
            raise ConfigurationError(f"cell_size must be positive, got {self.cell_size}")
        object.__setattr__(self, "depths", d)

    @property
    def n_rows(self) -> int:
        return self.depths.shape[0]

    @property
    def n_cols(self) -> int:
        return self.depths.shape[1]

    @property
    def nodata_mask(self) -> np.ndarray:
        return (self.depths == self.nodata_value) | ~np.isfinite(self.depths)

    @property
    def bounds(self):
        """(xmin, xmax, ymin, ymax) of the covered area."""
        return (self.x_ll, self.x_ll + self.n_cols * self.cell_size,
                self.y_ll, self.y_ll + self.n_rows * self.cell_size)

    def cell_center(self, row, col):
        x = self.x_ll + (np.asarray(col) + 0.5) * self.cell_size
        y = self.y_ll + (self.n_rows - 1 - np.asarray(row) + 0.5) * self.cell_size
        return x, y

    def cell_of(self, easting, northing):
        """Row/column of the cell containing each coordinate (may be off-grid)."""
        col = np.floor((np.asarray(easting, dtype=float) - self.x_ll) / self.cell_size).astype(np.int64)
        from_bottom = np.floor((np.asarray(northing, dtype=float) - self.y_ll) / self.cell_size).astype(np.int64)
        return self.n_rows - 1 - from_bottom, col

    def contains(self, easting, northing):
        r, c = self.cell_of(easting, northing)
        return (r >= 0) & (r < self.n_rows) & (c >= 0) & (c < self.n_cols)

    def with_values(self, values, nodata_value=None) -> "Raster":
        kw = {"depths": values}
        if nodata_value is not None:
            kw["nodata_value"] = nodata_value
        return replace(self, **kw)


# ASCII grid I/O ------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def save_raster(raster: Raster, path) -> None:
    lines = [
        f"ncols {raster.n_cols}",
        f"nrows {raster.n_rows}",
        f"xllcorner {_fmt(raster.x_ll)}",
        f"yllcorner {_fmt(raster.y_ll)}",
        f"cellsize {_fmt(raster.cell_size)}",
        f"NODATA_value {_fmt(raster.nodata_value)}",
    ]
    for row in raster.depths:
        lines.append(" ".join(map(repr, row.tolist())))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_raster(path) -> Raster:
    """Read an ASCII grid with the six-line ``ncols ... NODATA_value`` header."""
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    header = {}
    for i in range(min(6, len(lines))):
        parts = lines[i].split()
        if len(parts) != 2:
            raise ParseError(f"malformed header line {lines[i]!r}", i + 1)
        header[parts[0].lower()] = (parts[1], i + 1)
    for key in _HEADER_KEYS:
        if key.lower() not in header:
            raise ParseError(f"missing header key {key!r}", min(6, len(lines)) or 1)

    def num(key, kind):
        raw, line = header[key.lower()]
        try:
            return kind(raw)
        except ValueError:
            raise ParseError(f"cannot parse {key} value {raw!r}", line) from None

    ncols, nrows = num("ncols", int), num("nrows", int)
    if ncols <= 0 or nrows <= 0:
        raise ParseError("ncols and nrows must be positive", 1)
    body = lines[6:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != nrows:
        raise ParseError(f"expected {nrows} data rows, found {len(body)}", 6 + len(body))
    depths = np.empty((nrows, ncols))
    for r, line in enumerate(body):
        parts = line.split()
        if len(parts) != ncols:
            raise ParseError(f"expected {ncols} values, found {len(parts)}", 7 + r)
        try:
            depths[r] = [float(p) for p in parts]
        except ValueError:
            raise ParseError("unparsable number", 7 + r) from None
    cellsize = num("cellsize", float)
    if not cellsize > 0:
        raise ParseError("cellsize must be positive", header["cellsize"][1])
    return Raster(depths, num("xllcorner", float), num("yllcorner", float), cellsize,
                  num("NODATA_value", float))


# terrain features ------------------------------------------------------------

def _triangle_areas(z, cell_size):
    """Areas of the two triangles in every grid square of ``z``.

    Returns an array of shape ``z.shape - 1`` with the summed area per square.
    """
    dx_top = z[:-1, 1:] - z[:-1, :-1]
    dy_left = z[1:, :-1] - z[:-1, :-1]
    dx_bot = z[1:, 1:] - z[1:, :-1]
    dy_right = z[1:, 1:] - z[:-1, 1:]
    cs2 = cell_size * cell_size
    t1 = 0.5 * cell_size * np.sqrt(dx_top ** 2 + dy_left ** 2 + cs2)
    t2 = 0.5 * cell_size * np.sqrt(dx_bot ** 2 + dy_right ** 2 + cs2)
    return t1 + t2


def surface_ratio(values, cell_size) -> float:
    """Triangulated surface area over planar area of a gridded surface."""
    z = np.asarray(values, dtype=float)
    areas = _triangle_areas(z, cell_size)
    return float(areas.sum() / (areas.size * cell_size * cell_size))


def rugosity_field(depths, cell_size, window=5):
    """Local surface-area ratio around every cell, averaged over ``window`` squares."""
    areas = _triangle_areas(np.asarray(depths, dtype=float), cell_size) / (cell_size * cell_size)
    areas = np.pad(areas, ((0, 1), (0, 1)), mode="edge")
    return ndimage.uniform_filter(areas, size=window, mode="nearest")


@dataclass(frozen=True)
class Patch:
    values: np.ndarray
    easting: float
    northing: float
    row: int
    col: int
    cell_size: float

    @property
    def width(self) -> int:
        return self.values.shape[0]

    @property
    def extent(self):
        """(xmin, xmax, ymin, ymax) of the window."""
        half = self.width * self.cell_size / 2.0
        return self.easting - half, self.easting + half, self.northing - half, self.northing + half


def extract_patch(raster: Raster, easting, northing, width=21) -> Patch:
    """Square window of ``width`` cells centred on the cell containing the point."""
    r, c = (int(v) for v in raster.cell_of(easting, northing))
    r0, c0 = r - width // 2, c - width // 2
    if r0 < 0 or c0 < 0 or r0 + width > raster.n_rows or c0 + width > raster.n_cols:
        raise OutOfBoundsError(
            f"{width}x{width} window at cell ({r}, {c}) leaves the {raster.n_rows}x{raster.n_cols} raster")
    values = raster.depths[r0:r0 + width, c0:c0 + width]
    if raster.nodata_mask[r0:r0 + width, c0:c0 + width].any():
        raise NodataError(f"window at cell ({r}, {c}) contains nodata")
    # extent is centred on the containing cell, not the raw point
    x, y = raster.cell_center(r, c)
    if width % 2 == 0:
        x, y = x - raster.cell_size / 2, y + raster.cell_size / 2
    return Patch(values.copy(), float(x), float(y), r, c, raster.cell_size)


def patch_windows(raster: Raster, width=21, stride=1):
    """All valid windows whose centres lie on a ``stride`` grid.

    Returns ``(rows, cols, values)``: centre cells and an ``(N, w, w)``
    stack. Windows leaving the raster or touching nodata are skipped.
    """
    half = width // 2
    rows = np.arange(half, raster.n_rows - (width - half) + 1, stride)
    cols = np.arange(half, raster.n_cols - (width - half) + 1, stride)
    if len(rows) == 0 or len(cols) == 0:
        return np.empty(0, int), np.empty(0, int), np.empty((0, width, width))
    win = sliding_window_view(raster.depths, (width, width))
    bad = sliding_window_view(raster.nodata_mask, (width, width)).any(axis=(2, 3))
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    keep = ~bad[rr - half, cc - half]
    rr, cc = rr[keep], cc[keep]
    return rr, cc, win[rr - half, cc - half].copy()


def morphological_features(patch: Patch):
    """Mean depth, plane-fit slope and aspect (degrees), and rugosity.

    Aspect is the compass bearing (clockwise from north) of the direction
    in which depth increases; it is NaN for a level plane.
    """
    z = np.asarray(patch.values, dtype=float)
    n_r, n_c = z.shape
    cs = patch.cell_size
    yy, xx = np.mgrid[0:n_r, 0:n_c]
    x = (xx - (n_c - 1) / 2) * cs
    y = -(yy - (n_r - 1) / 2) * cs
    design = np.column_stack([x.ravel(), y.ravel(), np.ones(z.size)])
    (a, b, _), *_ = np.linalg.lstsq(design, z.ravel(), rcond=None)
    grad = math.hypot(a, b)
    if grad <= 1e-12:
        grad = 0.0
    slope = math.degrees(math.atan(grad))
    aspect = math.degrees(math.atan2(a, b)) % 360.0 if grad > 0 else float("nan")
    return float(z.mean()), slope, aspect, surface_ratio(z, cs)


@dataclass(frozen=True)
class NormalizationRecord:
    mean: float
    std: float

    def apply(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def invert(self, values):
        return np.asarray(values, dtype=float) * self.std + self.mean


def normalize_patches(patches, record: NormalizationRecord | None = None):
    """Global standardisation of a patch stack.

    ``patches`` is a sequence of :class:`Patch` or an array ``(N, w, w)``.
    Statistics come from every cell of every patch unless ``record`` is
    given, in which case it is reused.
    """
    arr = np.stack([p.values if isinstance(p, Patch) else np.asarray(p, dtype=float) for p in patches])
    if record is None:
        if len(arr) < 2:
            raise DegenerateDataError("need at least two patches to normalise")
        std = float(arr.std())
        if not std > 0:
            raise DegenerateDataError("patches have zero variance")
        record = NormalizationRecord(float(arr.mean()), std)
    return record.apply(arr), record


# synthetic worlds ------------------------------------------------------------

@dataclass(frozen=True)
class HabitatRuleSet:
    kelp_depth: float = 45.0
    rugosity_threshold: float = 1.03
    flat_deep_depth: float = 52.0
    band_width: float = 10.0
    noise_rate: float = 0.1
    rugosity_window: int = 5

    def __post_init__(self):
        for name in ("kelp_depth", "rugosity_threshold", "flat_deep_depth", "band_width"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigurationError(f"noise_rate must lie in [0, 1], got {self.noise_rate}")


@dataclass(frozen=True)
class WorldShape:
    """Parameters of the synthetic depth field."""

    base_depth: float = 32.0
    depth_range: float = 36.0
    bump_density: float = 100.0  # outcrops per km^2
    bump_amplitude: tuple = (4.0, 14.0)
    bump_sigma: tuple = (8.0, 22.0)
    roughness: float = 0.6
    noise_amplitude: float = 0.3
    noise_scale: int = 16
    # (xmin, xmax, ymin, ymax) as fractions of the extent; outcrops only start here
    bump_region: tuple = (0.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "bump_amplitude", tuple(self.bump_amplitude))
        object.__setattr__(self, "bump_sigma", tuple(self.bump_sigma))
        object.__setattr__(self, "bump_region", tuple(float(v) for v in self.bump_region))
        x0, x1, y0, y1 = self.bump_region
        if not (0 <= x0 <= x1 <= 1 and 0 <= y0 <= y1 <= 1):
            raise ConfigurationError(f"bump_region {self.bump_region} must be ordered fractions in [0, 1]")
        if self.bump_density < 0:
            raise ConfigurationError("bump_density must be non-negative")


def classify(depth, rugosity, band_distance, rules: HabitatRuleSet):
    """Noiseless habitat class from depth, local rugosity and distance to rugged ground.

    ``band_distance`` is the distance (metres) from a cell to the nearest
    rugged cell; it is only consulted for flat cells.
    """
    depth = np.asarray(depth, dtype=float)
    rugged = np.asarray(rugosity) > rules.rugosity_threshold
    near = np.asarray(band_distance) <= rules.band_width
    out = np.where(depth >= rules.flat_deep_depth, RUBBLE, SAND)
    out = np.where(near, PATCHY, out)
    out = np.where(rugged, np.where(depth < rules.kelp_depth, KELP, REEF), out)
    return out.astype(np.int64)


class HabitatWorld:
    """A raster plus the habitat labelling rules evaluated on it.

    Calling the world with coordinates returns noisy labels drawn with the
    supplied stream; :meth:`noiseless` returns the rule-based labels.
    """

    def __init__(self, raster: Raster, rules: HabitatRuleSet):
        self.raster = raster
        self.rules = rules
        self.rugosity = rugosity_field(raster.depths, raster.cell_size, rules.rugosity_window)
        rugged = self.rugosity > rules.rugosity_threshold
        if rugged.any():
            dist = ndimage.distance_transform_edt(~rugged) * raster.cell_size
        else:
            dist = np.full(rugged.shape, np.inf)
        self.label_grid = classify(raster.depths, self.rugosity, dist, rules)

    def _cells(self, easting, northing):
        e = np.atleast_1d(np.asarray(easting, dtype=float))
        n = np.atleast_1d(np.asarray(northing, dtype=float))
        inside = self.raster.contains(e, n)
        if not np.all(inside):
            i = int(np.argmin(inside))
            raise OutOfBoundsError(f"coordinate ({e[i]}, {n[i]}) lies outside the world")
        return self.raster.cell_of(e, n)

    def noiseless(self, easting, northing):
        r, c = self._cells(easting, northing)
        out = self.label_grid[r, c]
        return out if np.ndim(easting) else int(out[0])

    def __call__(self, easting, northing, stream):
        clean = np.atleast_1d(self.noiseless(easting, northing))
        flip = stream.random(clean.shape) < self.rules.noise_rate
        shift = stream.integers(1, N_CLASSES, size=clean.shape)
        out = np.where(flip, (clean + shift) % N_CLASSES, clean)
        return out if np.ndim(easting) else int(out[0])


def _value_noise(shape, scale, stream):
    coarse = stream.uniform(-1.0, 1.0, size=(shape[0] // scale + 3, shape[1] // scale + 3))
    fine = ndimage.zoom(coarse, scale, order=3)
    return fine[:shape[0], :shape[1]]


def generate_world(extent, rules: HabitatRuleSet, stream, cell_size=2.0,
                   shape: WorldShape = WorldShape(), origin=(0.0, 0.0)):
    """Synthetic bathymetry and its habitat labelling.

    Depth = a planar regional gradient + reef outcrops (Gaussian bumps with
    surface roughness) + low-amplitude value noise. Returns
    ``(raster, world)`` where ``world`` is a :class:`HabitatWorld`.
    """
    width_m, height_m = extent
    n_cols = int(round(width_m / cell_size))
    n_rows = int(round(height_m / cell_size))
    if n_cols < 50 or n_rows < 50:
        raise ConfigurationError(
            f"extent {extent} gives a {n_rows}x{n_cols} grid; at least 50x50 cells are required")
    x = (np.arange(n_cols) + 0.5) * cell_size
    y = (n_rows - 1 - np.arange(n_rows) + 0.5) * cell_size
    X, Y = np.meshgrid(x, y)

    theta = stream.uniform(0, 2 * np.pi)
    proj = X * np.cos(theta) + Y * np.sin(theta)
    proj = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-12)
    depth = shape.base_depth + shape.depth_range * proj

    fx0, fx1, fy0, fy1 = shape.bump_region
    area = (fx1 - fx0) * width_m * (fy1 - fy0) * height_m
    n_bumps = stream.poisson(shape.bump_density * area / 1e6)
    envelope = np.zeros_like(depth)
    for _ in range(n_bumps):
        cx, cy = stream.uniform(fx0 * width_m, fx1 * width_m), stream.uniform(fy0 * height_m, fy1 * height_m)
        amp = stream.uniform(*shape.bump_amplitude)
        sig = stream.uniform(*shape.bump_sigma)
        envelope += amp * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * sig * sig))
    depth -= envelope

    rough = ndimage.gaussian_filter(stream.normal(size=depth.shape), 0.7)
    rough /= rough.std()
    depth += shape.roughness * np.clip(envelope / 3.0, 0.0, 1.0) * rough
    depth += shape.noise_amplitude * _value_noise(depth.shape, shape.noise_scale, stream)

    raster = Raster(depth, origin[0], origin[1], cell_size)
    return raster, HabitatWorld(raster, rules)
