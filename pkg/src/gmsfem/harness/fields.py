"""Synthetic high-contrast permeability fields and source terms.

A field is a constant background with geometric features (channels as
rectangles, inclusions as disks) raised to ``background * contrast``.
Overlapping features take the maximum. Random inclusions draw their
positions from ``numpy.random.default_rng(seed)``.
"""

from dataclasses import dataclass
import os

import numpy as np

from ..fem import read_kappa, write_kappa

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data")


@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float
    scale: float = 1.0

    def mask(self, x, y):
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def bounds(self):
        return self.x0, self.x1, self.y0, self.y1


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    r: float
    scale: float = 1.0

    def mask(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.r ** 2

    def bounds(self):
        return self.cx - self.r, self.cx + self.r, self.cy - self.r, self.cy + self.r


@dataclass(frozen=True)
class RandomInclusions:
    """``count`` disks with radii in ``[rmin, rmax]`` placed inside ``box``."""

    count: int
    rmin: float
    rmax: float
    box: tuple = (0.0, 1.0, 0.0, 1.0)
    scale: float = 1.0

    def realize(self, rng):
        x0, x1, y0, y1 = self.box
        r = rng.uniform(self.rmin, self.rmax, self.count)
        cx = rng.uniform(x0 + r, x1 - r)
        cy = rng.uniform(y0 + r, y1 - r)
        return [Disk(float(a), float(b), float(c), self.scale) for a, b, c in zip(cx, cy, r)]

    def bounds(self):
        return self.box


@dataclass(frozen=True)
class FieldSpec:
    shape: tuple  # (cells_y, cells_x)
    background: float = 1.0
    contrast: float = 1e4
    geometry: tuple = ()
    domain: tuple = (0.0, 1.0, 0.0, 1.0)

    def with_contrast(self, contrast):
        return FieldSpec(self.shape, self.background, contrast, self.geometry, self.domain)


def generate_field(spec, seed=0):
    """Per-cell permeability of ``spec``; deterministic in ``seed``."""
    if spec.contrast < 1:
        raise ValueError(f"contrast must be >= 1, got {spec.contrast!r}")
    if spec.background <= 0:
        raise ValueError("background must be positive")
    x0, x1, y0, y1 = spec.domain
    ny, nx = spec.shape
    xc = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    yc = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    X, Y = np.meshgrid(xc, yc)
    kappa = np.full(spec.shape, float(spec.background))
    rng = np.random.default_rng(seed)
    shapes = []
    for item in spec.geometry:
        bx0, bx1, by0, by1 = item.bounds()
        if bx0 < x0 or bx1 > x1 or by0 < y0 or by1 > y1:
            raise ValueError(f"geometry {item!r} leaves the domain {spec.domain!r}")
        shapes.extend(item.realize(rng) if isinstance(item, RandomInclusions) else [item])
    for shp in shapes:
        value = spec.background * spec.contrast * shp.scale
        m = shp.mask(X, Y)
        kappa[m] = np.maximum(kappa[m], value)
    return kappa


def _channels_8x8():
    """Horizontal and vertical channels, up to three crossing a coarse neighborhood."""
    w = 1.0 / 128
    geom = []
    ys = [0.09, 0.17, 0.33, 0.41, 0.47, 0.61, 0.72, 0.86, 0.93]
    spans = [(0.05, 0.80), (0.20, 0.95), (0.05, 0.60), (0.30, 0.95), (0.10, 0.70),
             (0.05, 0.95), (0.25, 0.85), (0.05, 0.55), (0.45, 0.95)]
    for y, (a, b) in zip(ys, spans):
        geom.append(Rect(a, b, y, y + w))
    for x, (a, b) in zip([0.22, 0.58, 0.81], [(0.12, 0.45), (0.50, 0.90), (0.05, 0.35)]):
        geom.append(Rect(x, x + w, a, b))
    return FieldSpec(shape=(256, 256), background=1.0, contrast=1e4, geometry=tuple(geom))


def _inclusions_and_channels():
    """Staggered short channels plus scattered inclusions on a 256x256 grid.

    Channel rows sit in the middle of coarse cells of a 16x16 coarse grid so
    that no channel hugs a coarse edge.
    """
    w = 1.0 / 128
    geom = []
    for row, y in enumerate(np.arange(0.09, 0.95, 0.125)):
        start = 0.04 + 0.17 * (row % 2)
        for x in np.arange(start, 0.9, 0.36):
            geom.append(Rect(round(float(x), 4), round(min(float(x) + 0.24, 0.97), 4),
                             round(float(y), 4), round(float(y) + w, 4)))
    geom.append(RandomInclusions(count=25, rmin=0.006, rmax=0.012, box=(0.02, 0.98, 0.02, 0.98)))
    return FieldSpec(shape=(256, 256), background=1.0, contrast=1e4, geometry=tuple(geom))


BLOB_AMPLITUDE = 1000.0


def two_blob_source(x, y):
    """Approximate stand-in for a localized source/sink pair; not a digitized figure.

    The amplitude puts the absolute local residuals on the scale of the
    relative energy error, so residual thresholds such as 1e-3 are meaningful.
    """
    blob = lambda cx, cy: ((x - cx) ** 2 + (y - cy) ** 2 <= 0.06 ** 2).astype(float)
    return BLOB_AMPLITUDE * (blob(0.2, 0.8) - blob(0.8, 0.2))


NAMED_FIELDS = {
    "channels-8x8": dict(spec=_channels_8x8, seed=0, coarse=8, fine=32, source="one"),
    "inclusions-and-channels": dict(spec=_inclusions_and_channels, seed=4, coarse=16, fine=16,
                                    source="two-blob"),
}

SOURCES = {
    "one": 1.0,
    "two-blob": two_blob_source,
}


def named_spec(name):
    try:
        return NAMED_FIELDS[name]["spec"]()
    except KeyError:
        raise KeyError(f"unknown field {name!r}; known: {sorted(NAMED_FIELDS)}") from None


def named_field(name, contrast=None):
    """Generate a named field, optionally at a different contrast."""
    info = NAMED_FIELDS[name]
    spec = named_spec(name)
    if contrast is not None:
        spec = spec.with_contrast(contrast)
    return generate_field(spec, info["seed"])


def shipped_field_path(name):
    return os.path.join(DATA_DIR, f"{name}.kappa")


def load_shipped_field(name):
    return read_kappa(shipped_field_path(name))


def write_shipped_fields(directory=DATA_DIR):
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name in NAMED_FIELDS:
        path = os.path.join(directory, f"{name}.kappa")
        write_kappa(path, named_field(name))
        paths.append(path)
    return paths


def rescale_contrast(kappa, contrast):
    """Set the high cells of a two-valued field to ``min * contrast``."""
    kappa = np.asarray(kappa, dtype=float)
    low = kappa.min()
    out = kappa.copy()
    out[kappa > low] = low * contrast
    return out


def resolve_source(name_or_value):
    if callable(name_or_value):
        return name_or_value
    if isinstance(name_or_value, str):
        if name_or_value in SOURCES:
            return SOURCES[name_or_value]
        return float(name_or_value)
    return float(name_or_value)
