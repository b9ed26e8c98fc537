"""Mission geometry per platform: TLS stations, MLS walking loops, ULS grids and ALS strips."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .plot_assembly import PlotInstance
from .scene_gen import height_at

PLATFORMS = ("TLS", "MLS", "ULS", "ALS")


class PlanningError(RuntimeError):
    pass


@dataclass
class ScanPlan:
    platform: str
    stations: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    path: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    path_legs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    flight_lines: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 3)))
    line_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    mount_height_or_altitude: float = 0.0
    speed: float = 0.0
    params: dict = field(default_factory=dict)

    def path_length(self) -> float:
        """Walked length of the 3D path (terrain-following)."""
        if len(self.path) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.path, axis=0), axis=1).sum())

    def to_dict(self) -> dict:
        return {
            "platform": self.platform,
            "stations": self.stations.tolist(),
            "path": self.path.tolist(),
            "path_legs": self.path_legs.tolist(),
            "flight_lines": self.flight_lines.tolist(),
            "line_ids": self.line_ids.tolist(),
            "mount_height_or_altitude": self.mount_height_or_altitude,
            "speed": self.speed,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanPlan":
        return cls(
            platform=d["platform"],
            stations=np.asarray(d["stations"], dtype=np.float64).reshape(-1, 3),
            path=np.asarray(d["path"], dtype=np.float64).reshape(-1, 3),
            path_legs=np.asarray(d["path_legs"], dtype=np.int64),
            flight_lines=np.asarray(d["flight_lines"], dtype=np.float64).reshape(-1, 2, 3),
            line_ids=np.asarray(d["line_ids"], dtype=np.int64),
            mount_height_or_altitude=float(d["mount_height_or_altitude"]),
            speed=float(d["speed"]),
            params=d.get("params", {}),
        )


def save_plan(plan: ScanPlan, bundle_dir: str | Path) -> Path:
    path = Path(bundle_dir) / f"plan_{plan.platform}.json"
    path.write_text(json.dumps(plan.to_dict(), indent=1, sort_keys=True), encoding="utf-8")
    return path


def load_plan(path: str | Path) -> ScanPlan:
    return ScanPlan.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _corners(plot: PlotInstance, inset: float) -> dict[str, tuple[float, float]]:
    x0, y0, x1, y1 = plot.terrain.bounds
    return {
        "SW": (x0 + inset, y0 + inset),
        "SE": (x1 - inset, y0 + inset),
        "NE": (x1 - inset, y1 - inset),
        "NW": (x0 + inset, y1 - inset),
    }


# --------------------------------------------------------------------------- TLS


def tls_anchors(plot: PlotInstance, inset: float = 1.0) -> np.ndarray:
    x0, y0, x1, y1 = plot.terrain.bounds
    c = _corners(plot, inset)
    return np.array([(0.5 * (x0 + x1), 0.5 * (y0 + y1)), c["SW"], c["SE"], c["NE"], c["NW"]])


def plan_tls(
    plot: PlotInstance,
    clearance: float = 0.6,
    lattice: float = 0.25,
    search_radius: float = 5.0,
    mount_height: float = 1.5,
    inset: float = 1.0,
) -> ScanPlan:
    """Five stations (centre, then SW, SE, NE, NW corners), each nudged to the nearest clear lattice point."""
    if clearance <= 0:
        raise ValueError("clearance must be > 0")
    stems, radii = plot.stems()
    x0, y0, x1, y1 = plot.terrain.bounds
    k = int(math.floor(search_radius / lattice + 1e-9))
    off = lattice * np.arange(-k, k + 1)
    ox, oy = np.meshgrid(off, off, indexing="ij")
    ox, oy = ox.ravel(), oy.ravel()
    dist = np.hypot(ox, oy)
    # nearest first; ties by (dx, dy) so the choice is reproducible
    order = np.lexsort((oy, ox, dist))
    ox, oy, dist = ox[order], oy[order], dist[order]
    keep = dist <= search_radius + 1e-9
    ox, oy = ox[keep], oy[keep]
    stations = []
    for ax, ay in tls_anchors(plot, inset):
        cx, cy = ax + ox, ay + oy
        ok = (cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1)
        if len(stems):
            d = np.hypot(cx[:, None] - stems[None, :, 0], cy[:, None] - stems[None, :, 1])
            ok &= np.all(d >= clearance + radii[None, :], axis=1)
        hit = np.flatnonzero(ok)
        if not len(hit):
            raise PlanningError(f"no clear station within {search_radius} m of anchor ({ax:.2f}, {ay:.2f})")
        sx, sy = float(cx[hit[0]]), float(cy[hit[0]])
        stations.append((sx, sy, height_at(plot.terrain, sx, sy) + mount_height))
    return ScanPlan(
        platform="TLS",
        stations=np.array(stations),
        mount_height_or_altitude=mount_height,
        params={"clearance": clearance, "lattice": lattice, "search_radius": search_radius, "inset": inset},
    )


# --------------------------------------------------------------------------- MLS


def mls_turning_points(plot: PlotInstance, inset: float = 1.0) -> list[tuple[float, float]]:
    """Perimeter anchors (corners and edge midpoints, counter-clockwise from SW), a W to E
    crossing through the plot centre, and the return to the start."""
    x0, y0, x1, y1 = plot.terrain.bounds
    c = _corners(plot, inset)
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    S, E, N, W = (xm, y0 + inset), (x1 - inset, ym), (xm, y1 - inset), (x0 + inset, ym)
    return [c["SW"], S, c["SE"], E, c["NE"], N, c["NW"], W, E, c["SW"]]


def _occupancy(plot: PlotInstance, step: float, buffer: float):
    x0, y0, x1, y1 = plot.terrain.bounds
    nx = int(math.floor((x1 - x0) / step + 1e-9)) + 1
    ny = int(math.floor((y1 - y0) / step + 1e-9)) + 1
    xs = x0 + step * np.arange(nx)
    ys = y0 + step * np.arange(ny)
    free = np.ones((nx, ny), dtype=bool)
    stems, radii = plot.stems()
    for (sx, sy), r in zip(stems, radii):
        reach = buffer + r
        i0 = max(0, int(math.floor((sx - reach - x0) / step)))
        i1 = min(nx - 1, int(math.ceil((sx + reach - x0) / step)))
        j0 = max(0, int(math.floor((sy - reach - y0) / step)))
        j1 = min(ny - 1, int(math.ceil((sy + reach - y0) / step)))
        if i0 > i1 or j0 > j1:
            continue
        gx, gy = np.meshgrid(xs[i0 : i1 + 1], ys[j0 : j1 + 1], indexing="ij")
        free[i0 : i1 + 1, j0 : j1 + 1] &= np.hypot(gx - sx, gy - sy) >= reach
    return xs, ys, free


def _grid_graph(free: np.ndarray, step: float):
    nx, ny = free.shape
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows, cols, w = [], [], []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        i = slice(0, nx - di)
        j = slice(max(0, -dj), ny - max(0, dj))
        i2 = slice(di, nx)
        j2 = slice(max(0, dj), ny - max(0, -dj))
        m = free[i, j] & free[i2, j2]
        rows.append(idx[i, j][m])
        cols.append(idx[i2, j2][m])
        w.append(np.full(int(m.sum()), step * math.hypot(di, dj)))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    ww = np.concatenate(w)
    g = coo_matrix((np.concatenate([ww, ww]), (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(nx * ny, nx * ny))
    return g.tocsr()


def _segment_clear(p, q, stems, reach) -> bool:
    """True when segment p-q keeps at least ``reach`` from every stem axis."""
    if len(stems) == 0:
        return True
    d = q - p
    L2 = float(d @ d)
    t = np.zeros(len(stems)) if L2 == 0 else np.clip(((stems - p) @ d) / L2, 0.0, 1.0)
    closest = p + t[:, None] * d
    return bool(np.all(np.hypot(*(stems - closest).T) >= reach))


def _shortcut(pts: np.ndarray, stems, reach) -> np.ndarray:
    """Greedy string pulling: keep the farthest vertex reachable by a clear straight segment."""
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not _segment_clear(pts[i], pts[j], stems, reach):
            j -= 1
        out.append(pts[j])
        i = j
    return np.array(out)


def _densify(pts: np.ndarray, step: float) -> np.ndarray:
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / step - 1e-9)))
        t = np.arange(1, n + 1)[:, None] / n
        out.extend(a + t * (b - a))
    return np.array(out)


def plan_mls(
    plot: PlotInstance,
    buffer: float = 0.5,
    grid_step: float = 0.1,
    mount_height: float = 1.8,
    speed: float = 1.3,
    inset: float = 1.0,
    smooth: bool = True,
) -> ScanPlan:
    """Closed walking loop through the turning points over an 8-connected occupancy grid.

    Stems block every cell closer than ``buffer`` plus the stem radius. Each leg is the grid
    shortest path, optionally straightened where a direct segment stays clear, then resampled
    so consecutive vertices are at most ``grid_step`` apart.
    """
    if buffer <= 0 or grid_step <= 0:
        raise ValueError("buffer and grid_step must be > 0")
    xs, ys, free = _occupancy(plot, grid_step, buffer)
    nx, ny = free.shape
    graph = _grid_graph(free, grid_step)
    stems, radii = plot.stems()
    reach = buffer + (radii if len(radii) else 0.0)
    free_idx = np.flatnonzero(free.ravel())
    if not len(free_idx):
        raise PlanningError("occupancy grid has no free cell")
    fx = xs[free_idx // ny]
    fy = ys[free_idx % ny]

    def snap(p):
        k = int(np.argmin(np.hypot(fx - p[0], fy - p[1])))
        return int(free_idx[k])

    turns = mls_turning_points(plot, inset)
    nodes = [snap(p) for p in turns]
    legs_xy, legs_id = [], []
    for leg, (a, b) in enumerate(zip(nodes[:-1], nodes[1:]), start=1):
        dist, pred = dijkstra(graph, indices=a, return_predecessors=True)
        if not np.isfinite(dist[b]):
            raise PlanningError(f"turning points {leg - 1} and {leg} are disconnected")
        chain = [b]
        while chain[-1] != a:
            chain.append(int(pred[chain[-1]]))
        chain.reverse()
        pts = np.column_stack([xs[np.array(chain) // ny], ys[np.array(chain) % ny]])
        if smooth and len(pts) > 2:
            pts = _shortcut(pts, stems, reach)
        pts = _densify(pts, grid_step) if len(pts) > 1 else pts
        if legs_xy:
            pts = pts[1:]
        legs_xy.append(pts)
        legs_id.append(np.full(len(pts), leg, dtype=np.int64))
    xy = np.concatenate(legs_xy)
    z = height_at(plot.terrain, xy[:, 0], xy[:, 1]) + mount_height
    return ScanPlan(
        platform="MLS",
        path=np.column_stack([xy, z]),
        path_legs=np.concatenate(legs_id),
        mount_height_or_altitude=mount_height,
        speed=speed,
        params={"buffer": buffer, "grid_step": grid_step, "inset": inset, "turning_points": [list(p) for p in turns]},
    )


# --------------------------------------------------------------------------- airborne


def plan_uls(plot: PlotInstance, altitude: float = 50.0, spacing: float = 15.0, margin: float = 10.0, speed: float = 5.0) -> ScanPlan:
    """Criss-cross grid: lines along x first, then along y, centred on the plot."""
    if spacing <= 0:
        raise ValueError("spacing must be > 0")
    x0, y0, x1, y1 = plot.terrain.bounds
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    z = plot.terrain.mean_height() + altitude
    lines = []
    span_y = (y1 - y0) + 2 * margin
    span_x = (x1 - x0) + 2 * margin
    ny = int(math.floor(span_y / spacing + 1e-9)) + 1
    nx = int(math.floor(span_x / spacing + 1e-9)) + 1
    for k in range(ny):
        y = cy + (k - (ny - 1) / 2) * spacing
        lines.append([(x0 - margin, y, z), (x1 + margin, y, z)])
    for k in range(nx):
        x = cx + (k - (nx - 1) / 2) * spacing
        lines.append([(x, y0 - margin, z), (x, y1 + margin, z)])
    return ScanPlan(
        platform="ULS",
        flight_lines=np.array(lines, dtype=np.float64),
        line_ids=np.arange(1, len(lines) + 1, dtype=np.int64),
        mount_height_or_altitude=altitude,
        speed=speed,
        params={"spacing": spacing, "margin": margin},
    )


def plan_als(
    plot: PlotInstance,
    altitude: float = 800.0,
    separation: float = 60.0,
    margin: float = 200.0,
    speed: float = 45.0,
    heading_deg: float = 0.0,
) -> ScanPlan:
    """Two parallel strips symmetric about the plot centre; heading 0 runs along +x."""
    x0, y0, x1, y1 = plot.terrain.bounds
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    z = plot.terrain.mean_height() + altitude
    h = math.radians(heading_deg)
    along = np.array([math.cos(h), math.sin(h)])
    across = np.array([-math.sin(h), math.cos(h)])
    half = 0.5 * max(x1 - x0, y1 - y0) + margin
    lines = []
    for side in (-0.5, 0.5):
        c = np.array([cx, cy]) + side * separation * across
        a, b = c - half * along, c + half * along
        lines.append([(a[0], a[1], z), (b[0], b[1], z)])
    return ScanPlan(
        platform="ALS",
        flight_lines=np.array(lines, dtype=np.float64),
        line_ids=np.array([1, 2], dtype=np.int64),
        mount_height_or_altitude=altitude,
        speed=speed,
        params={"separation": separation, "margin": margin, "heading_deg": heading_deg},
    )


def plan_all(plot: PlotInstance) -> dict[str, ScanPlan]:
    return {"TLS": plan_tls(plot), "MLS": plan_mls(plot), "ULS": plan_uls(plot), "ALS": plan_als(plot)}
