"""Terrain heightfields and procedural understory point patches."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

COMPLEXITIES = ("easy", "medium", "difficult")


class DomainError(ValueError):
    """Query outside the terrain extent."""


@dataclass(frozen=True)
class TerrainClass:
    """Per-complexity synthesis targets and acceptance bands (degrees, metres)."""

    slope_deg: float
    roughness: float
    slope_band: tuple[float, float]
    roughness_band: tuple[float, float]
    jitter: float = 0.25
    octaves: int = 4
    base_wavelength: float = 8.0
    persistence: float = 0.5


TERRAIN_CLASSES = {
    "easy": TerrainClass(1.5, 0.05, (0.0, 3.0), (0.0, 0.1)),
    "medium": TerrainClass(6.0, 0.2, (3.0, 10.0), (0.1, 0.3)),
    "difficult": TerrainClass(12.0, 0.5, (8.0, 20.0), (0.2, 0.8)),
}


@dataclass
class Terrain:
    """Node-registered heightfield: ``heights[i, j]`` is the ground at ``origin + (i, j) * cell_size``."""

    origin_xy: tuple[float, float]
    cell_size: float
    heights: np.ndarray
    complexity: str = "easy"

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.cell_size <= 0:
            raise ValueError("cell_size must be > 0")
        if self.heights.ndim != 2 or min(self.heights.shape) < 2:
            raise ValueError("terrain needs at least 2 x 2 nodes")
        if not np.all(np.isfinite(self.heights)):
            raise ValueError("terrain heights must be finite")

    @property
    def nx(self) -> int:
        return int(self.heights.shape[0])

    @property
    def ny(self) -> int:
        return int(self.heights.shape[1])

    @property
    def extent(self) -> tuple[float, float]:
        return ((self.nx - 1) * self.cell_size, (self.ny - 1) * self.cell_size)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin_xy
        ex, ey = self.extent
        return ox, oy, ox + ex, oy + ey

    def node_xy(self) -> tuple[np.ndarray, np.ndarray]:
        ox, oy = self.origin_xy
        xs = ox + self.cell_size * np.arange(self.nx)
        ys = oy + self.cell_size * np.arange(self.ny)
        return np.meshgrid(xs, ys, indexing="ij")

    def mean_height(self) -> float:
        return float(self.heights.mean())


def _grid_shape(extent: float, cell: float) -> int:
    return int(math.floor(extent / cell + 1e-9)) + 1


def _value_noise(xs: np.ndarray, ys: np.ndarray, wavelength: float, rng: np.random.Generator) -> np.ndarray:
    """Quintic-interpolated lattice noise sampled at the grid ``xs x ys``."""
    gx = xs / wavelength
    gy = ys / wavelength
    nx = int(math.floor(gx.max())) + 2
    ny = int(math.floor(gy.max())) + 2
    lattice = rng.uniform(-1.0, 1.0, (nx + 1, ny + 1))
    ix = np.floor(gx).astype(int)
    iy = np.floor(gy).astype(int)
    fx = gx - ix
    fy = gy - iy
    sx = fx * fx * fx * (fx * (fx * 6 - 15) + 10)
    sy = fy * fy * fy * (fy * (fy * 6 - 15) + 10)
    a = lattice[ix[:, None], iy[None, :]]
    b = lattice[ix[:, None] + 1, iy[None, :]]
    c = lattice[ix[:, None], iy[None, :] + 1]
    d = lattice[ix[:, None] + 1, iy[None, :] + 1]
    top = a + (b - a) * sx[:, None]
    bot = c + (d - c) * sx[:, None]
    return top + (bot - top) * sy[None, :]


def plane_fit(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane ``z = a x + b y + c``; returns coefficients and residuals."""
    A = np.column_stack([x.ravel(), y.ravel(), np.ones(x.size)])
    coef, *_ = np.linalg.lstsq(A, z.ravel(), rcond=None)
    return coef, z.ravel() - A @ coef


def generate_terrain(
    complexity: str,
    extent_x: float = 20.0,
    extent_y: float = 20.0,
    cell_size: float = 0.2,
    seed: int = 0,
    terrain_class: TerrainClass | None = None,
    origin_xy: tuple[float, float] = (0.0, 0.0),
) -> Terrain:
    """Multi-octave value noise, detrended and rescaled to the class roughness, on a tilted plane."""
    if extent_x <= 0 or extent_y <= 0:
        raise ValueError("terrain extents must be > 0")
    if cell_size <= 0:
        raise ValueError("cell_size must be > 0")
    if complexity not in TERRAIN_CLASSES and terrain_class is None:
        raise ValueError(f"unknown complexity {complexity!r}")
    tc = terrain_class or TERRAIN_CLASSES[complexity]
    rng = np.random.default_rng(int(seed) & ((1 << 64) - 1))
    nx = _grid_shape(extent_x, cell_size)
    ny = _grid_shape(extent_y, cell_size)
    xs = cell_size * np.arange(nx)
    ys = cell_size * np.arange(ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")

    slope = tc.slope_deg * rng.uniform(1.0 - tc.jitter, 1.0 + tc.jitter)
    rough = tc.roughness * rng.uniform(1.0 - tc.jitter, 1.0 + tc.jitter)
    azimuth = rng.uniform(0.0, 2.0 * math.pi)

    noise = np.zeros((nx, ny))
    amp = 1.0
    wl = tc.base_wavelength
    for _ in range(tc.octaves):
        noise += amp * _value_noise(xs, ys, wl, rng)
        amp *= tc.persistence
        wl *= 0.5
    _, resid = plane_fit(X, Y, noise)
    rms = float(np.sqrt(np.mean(resid**2)))
    relief = resid.reshape(nx, ny) * (rough / rms if rms > 0 and rough > 0 else 0.0)

    g = math.tan(math.radians(slope))
    cx, cy = xs[-1] / 2.0, ys[-1] / 2.0
    tilt = g * ((X - cx) * math.cos(azimuth) + (Y - cy) * math.sin(azimuth))
    return Terrain(origin_xy=tuple(map(float, origin_xy)), cell_size=float(cell_size), heights=tilt + relief, complexity=complexity)


def terrain_slope_roughness(terrain: Terrain) -> tuple[float, float]:
    """Plane-fit slope (degrees) and RMS residual (m) of the grid."""
    X, Y = terrain.node_xy()
    coef, resid = plane_fit(X, Y, terrain.heights)
    return math.degrees(math.atan(math.hypot(coef[0], coef[1]))), float(np.sqrt(np.mean(resid**2)))


def in_extent(terrain: Terrain, x, y, tol: float = 1e-9) -> np.ndarray:
    x0, y0, x1, y1 = terrain.bounds
    x = np.asarray(x)
    y = np.asarray(y)
    return (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)


def height_at(terrain: Terrain, x, y):
    """Bilinear ground height; scalar in, scalar out; arrays broadcast."""
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(in_extent(terrain, x, y)):
        raise DomainError("query outside terrain extent")
    ox, oy = terrain.origin_xy
    gx = np.clip((x - ox) / terrain.cell_size, 0.0, terrain.nx - 1)
    gy = np.clip((y - oy) / terrain.cell_size, 0.0, terrain.ny - 1)
    i = np.minimum(np.floor(gx).astype(np.int64), terrain.nx - 2)
    j = np.minimum(np.floor(gy).astype(np.int64), terrain.ny - 2)
    fx = gx - i
    fy = gy - j
    h = terrain.heights
    z = (
        h[i, j] * (1 - fx) * (1 - fy)
        + h[i + 1, j] * fx * (1 - fy)
        + h[i, j + 1] * (1 - fx) * fy
        + h[i + 1, j + 1] * fx * fy
    )
    return float(z) if scalar else z


def terrain_triangles(terrain: Terrain) -> np.ndarray:
    """Two triangles per cell, every cell split along its (i, j)-(i+1, j+1) diagonal. Shape ``(2 * cells, 3, 3)``."""
    X, Y = terrain.node_xy()
    P = np.stack([X, Y, terrain.heights], axis=-1)
    a = P[:-1, :-1]
    b = P[1:, :-1]
    c = P[1:, 1:]
    d = P[:-1, 1:]
    lower = np.stack([a, b, c], axis=2).reshape(-1, 3, 3)
    upper = np.stack([a, c, d], axis=2).reshape(-1, 3, 3)
    return np.concatenate([lower, upper])


# --------------------------------------------------------------------------- ESRI ASCII grid


def write_ascii_grid(terrain: Terrain, path: str | Path) -> None:
    """ESRI ASCII grid; each node is written as the centre of a cell, northern row first."""
    ox, oy = terrain.origin_xy
    c = terrain.cell_size
    lines = [
        f"ncols {terrain.nx}",
        f"nrows {terrain.ny}",
        f"xllcorner {ox - 0.5 * c!r}",
        f"yllcorner {oy - 0.5 * c!r}",
        f"cellsize {c!r}",
        "NODATA_value -9999",
    ]
    for j in range(terrain.ny - 1, -1, -1):
        lines.append(" ".join(repr(float(v)) for v in terrain.heights[:, j]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_ascii_grid(path: str | Path, complexity: str = "easy") -> Terrain:
    tokens = Path(path).read_text(encoding="ascii").split("\n")
    header = {}
    k = 0
    while k < len(tokens) and tokens[k].split() and tokens[k].split()[0].lower() in (
        "ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter", "cellsize", "nodata_value",
    ):
        key, value = tokens[k].split()
        header[key.lower()] = value
        k += 1
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    c = float(header["cellsize"])
    ox = float(header["xllcenter"]) if "xllcenter" in header else float(header["xllcorner"]) + 0.5 * c
    oy = float(header["yllcenter"]) if "yllcenter" in header else float(header["yllcorner"]) + 0.5 * c
    rows = np.array([[float(v) for v in line.split()] for line in tokens[k:] if line.strip()])
    if rows.shape != (nrows, ncols):
        raise ValueError(f"grid body has shape {rows.shape}, header says {(nrows, ncols)}")
    return Terrain(origin_xy=(ox, oy), cell_size=c, heights=rows[::-1].T.copy(), complexity=complexity)


# --------------------------------------------------------------------------- understory


@dataclass(frozen=True)
class UnderstoryConfig:
    cover_fraction: float = 0.3
    max_height: float = 1.5
    scale_range: tuple[float, float] = (0.5, 1.5)
    shrub_fraction: float = 0.4
    grass_density: float = 120.0
    shrub_density: float = 90.0
    sphere_radius: float = 0.02


@dataclass
class UnderstoryPatch:
    points: np.ndarray
    patch_extent: float


def _shrub_patch(rng: np.random.Generator, cfg: UnderstoryConfig) -> UnderstoryPatch:
    radius = rng.uniform(0.4, 1.0)
    shells = []
    for _ in range(int(rng.integers(2, 4))):
        a = radius * rng.uniform(0.5, 1.0)
        b = radius * rng.uniform(0.5, 1.0)
        c = 0.5 * cfg.max_height * rng.uniform(0.3, 1.0)
        off = rng.uniform(-0.3, 0.3, 2) * radius
        area = 2.0 * math.pi * ((a * b) ** 1.6 + (a * c) ** 1.6 + (b * c) ** 1.6) ** (1 / 1.6) / 3.0 * 2.0
        n = max(8, int(cfg.shrub_density * area))
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        shell = d * np.array([a, b, c]) * rng.uniform(0.85, 1.0, (n, 1))
        shell[:, 0] += off[0]
        shell[:, 1] += off[1]
        shell[:, 2] += c
        shells.append(shell)
    pts = np.concatenate(shells)
    pts[:, 2] = np.clip(pts[:, 2], 0.0, cfg.max_height)
    return UnderstoryPatch(pts, float(radius))


def _grass_patch(rng: np.random.Generator, cfg: UnderstoryConfig) -> UnderstoryPatch:
    radius = rng.uniform(0.8, 2.0)
    n = max(8, int(cfg.grass_density * math.pi * radius * radius))
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    th = rng.uniform(0.0, 2.0 * math.pi, n)
    x = r * np.cos(th)
    y = r * np.sin(th)
    blade = rng.uniform(0.15, 0.45)
    # turbulent sheet: blade tips follow a couple of random ripples
    k1, k2 = rng.uniform(1.0, 4.0, 2)
    p1, p2 = rng.uniform(0.0, 2.0 * math.pi, 2)
    ripple = 0.5 + 0.25 * np.sin(k1 * x + p1) + 0.25 * np.sin(k2 * y + p2)
    z = blade * ripple * np.sqrt(rng.uniform(0.0, 1.0, n))
    pts = np.column_stack([x, y, np.clip(z, 0.0, cfg.max_height)])
    return UnderstoryPatch(pts, float(radius))


def generate_understory(terrain: Terrain, cover_fraction: float, seed: int, config: UnderstoryConfig | None = None) -> np.ndarray:
    """Understory points ``(N, 3)`` in world coordinates, draped on the terrain and cropped to its extent."""
    if not 0.0 <= cover_fraction <= 1.0:
        raise ValueError("cover_fraction must lie in [0, 1]")
    cfg = replace(config or UnderstoryConfig(), cover_fraction=cover_fraction)
    if cover_fraction == 0.0:
        return np.zeros((0, 3))
    rng = np.random.default_rng(int(seed) & ((1 << 64) - 1))
    x0, y0, x1, y1 = terrain.bounds
    target = cover_fraction * (x1 - x0) * (y1 - y0)
    covered = 0.0
    clouds = []
    s_lo, s_hi = cfg.scale_range
    while covered < target:
        patch = _shrub_patch(rng, cfg) if rng.uniform() < cfg.shrub_fraction else _grass_patch(rng, cfg)
        s = rng.uniform(s_lo, s_hi)
        rot = rng.uniform(0.0, 2.0 * math.pi)
        site = rng.uniform([x0, y0], [x1, y1])
        c, sn = math.cos(rot), math.sin(rot)
        p = patch.points * s
        x = site[0] + c * p[:, 0] - sn * p[:, 1]
        y = site[1] + sn * p[:, 0] + c * p[:, 1]
        keep = in_extent(terrain, x, y, tol=0.0)
        x, y, z = x[keep], y[keep], p[keep, 2]
        if len(x):
            clouds.append(np.column_stack([x, y, z + height_at(terrain, x, y)]))
        covered += math.pi * (s * patch.patch_extent) ** 2
    return np.concatenate(clouds) if clouds else np.zeros((0, 3))
