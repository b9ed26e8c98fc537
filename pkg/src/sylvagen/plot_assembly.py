"""Plot assembly: tree counts and heights from plot statistics, model choice, and crown-overlap placement."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import derive_seed, make_rng
from .scene_gen import (
    COMPLEXITIES,
    Terrain,
    UnderstoryConfig,
    generate_terrain,
    generate_understory,
    height_at,
    read_ascii_grid,
    write_ascii_grid,
)
from .tree_models import BREAST_HEIGHT, ModelLibrary, TreeAttributes, trunk_radius_at

MAX_OVERLAP = 0.05
OVERLAP_TOL = 1e-9
HEIGHT_LIMITS = (2.0, 35.0)


class AssemblyError(RuntimeError):
    """A tree could not be placed within the attempt budget."""

    def __init__(self, tree_index: int, attempts: int):
        super().__init__(f"could not place tree {tree_index} after {attempts} attempts (plot spec too dense)")
        self.tree_index = tree_index


@dataclass(frozen=True)
class PlotStatistics:
    stem_density_mean: float
    stem_density_sd: float
    height_mean: float
    height_sd: float
    dbh_mean: float = 0.0
    dbh_sd: float = 0.0

    def __post_init__(self):
        if self.stem_density_mean <= 0 or self.height_mean <= 0:
            raise ValueError("plot statistic means must be > 0")
        if min(self.stem_density_sd, self.height_sd, self.dbh_sd) < 0:
            raise ValueError("plot statistic sds must be >= 0")


# reference plot statistics per complexity class (stems/ha, m, m)
DEFAULT_STATS = {
    "easy": PlotStatistics(592.0, 189.0, 18.4, 6.4, 0.207, 0.085),
    "medium": PlotStatistics(968.0, 370.0, 16.2, 7.3, 0.172, 0.107),
    "difficult": PlotStatistics(2021.0, 553.0, 13.2, 5.9, 0.123, 0.072),
}


@dataclass(frozen=True)
class PlotSpec:
    complexity: str
    stats: PlotStatistics
    extent: tuple[float, float] = (20.0, 20.0)
    cover_fraction: float = 0.3
    max_attempts: int = 10_000

    @classmethod
    def default(cls, complexity: str, **kw) -> "PlotSpec":
        return cls(complexity=complexity, stats=DEFAULT_STATS[complexity], **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extent"] = list(self.extent)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlotSpec":
        d = dict(d)
        d["stats"] = PlotStatistics(**d["stats"])
        d["extent"] = tuple(d["extent"])
        return cls(**d)


@dataclass
class PlacedTree:
    instance_id: int
    model_id: str
    species_id: str
    position_xy: tuple[float, float]
    base_z: float
    rotation_z: float
    scale: float
    crown_radius: float
    attributes: TreeAttributes
    layer: str = "single"
    sampled_height: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["position_xy"] = list(self.position_xy)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlacedTree":
        d = dict(d)
        d["position_xy"] = tuple(d["position_xy"])
        d["attributes"] = TreeAttributes.from_dict(d["attributes"])
        return cls(**d)


@dataclass
class PlotInstance:
    plot_id: str
    complexity: str
    extent: tuple[float, float]
    terrain: Terrain
    trees: list[PlacedTree]
    understory: np.ndarray
    seed: int
    spec: PlotSpec | None = None
    database: dict = field(default_factory=dict)

    @property
    def area_ha(self) -> float:
        return self.extent[0] * self.extent[1] / 1e4

    def stem_density(self) -> float:
        return len(self.trees) / self.area_ha

    def stems(self) -> tuple[np.ndarray, np.ndarray]:
        """Stem positions ``(N, 2)`` and radii ``(N,)`` at breast height."""
        if not self.trees:
            return np.zeros((0, 2)), np.zeros(0)
        xy = np.array([t.position_xy for t in self.trees], dtype=np.float64)
        r = np.array([0.5 * t.attributes.dbh for t in self.trees])
        return xy, r


# --------------------------------------------------------------------------- sampling


def sample_tree_count(stats: PlotStatistics, plot_area: float, rng: np.random.Generator) -> int:
    """Uniform integer between the rounded stem counts at mean minus and plus one sd."""
    if plot_area <= 0:
        raise ValueError("plot_area must be > 0")
    lo = int(math.floor((stats.stem_density_mean - stats.stem_density_sd) * plot_area + 0.5))
    hi = int(math.floor((stats.stem_density_mean + stats.stem_density_sd) * plot_area + 0.5))
    lo = max(lo, 1)
    hi = max(hi, lo)
    return int(rng.integers(lo, hi + 1))


def sample_heights(count: int, height_mean: float, height_sd: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform heights sharing the given mean and sd, clipped to the database range."""
    if count < 0:
        raise ValueError("count must be >= 0")
    half = math.sqrt(3.0) * height_sd
    h = rng.uniform(height_mean - half, height_mean + half, count) if half > 0 else np.full(count, float(height_mean))
    return np.clip(h, *HEIGHT_LIMITS)


# --------------------------------------------------------------------------- overlap


def _lens_area(d, r1, r2):
    d = np.asarray(d, dtype=np.float64)
    r1 = np.broadcast_to(np.asarray(r1, dtype=np.float64), d.shape)
    r2 = np.broadcast_to(np.asarray(r2, dtype=np.float64), d.shape)
    small = np.minimum(r1, r2)
    large = np.maximum(r1, r2)
    out = np.zeros(d.shape)
    inner = d <= large - small
    out[inner] = np.pi * small[inner] ** 2
    part = (d < r1 + r2) & ~inner
    if np.any(part):
        dd, a, b = d[part], r1[part], r2[part]
        tiny = np.finfo(np.float64).tiny
        c1 = np.arccos(np.clip((dd * dd + a * a - b * b) / np.maximum(2 * dd * a, tiny), -1.0, 1.0))
        c2 = np.arccos(np.clip((dd * dd + b * b - a * a) / np.maximum(2 * dd * b, tiny), -1.0, 1.0))
        k = (-dd + a + b) * (dd + a - b) * (dd - a + b) * (dd + a + b)
        out[part] = a * a * c1 + b * b * c2 - 0.5 * np.sqrt(np.maximum(k, 0.0))
    return out


def overlap_ratio(d, r1, r2):
    """Crown-lens area over the smaller crown's area, vectorised over numpy arrays."""
    small = np.minimum(r1, r2)
    return np.clip(_lens_area(d, r1, r2) / (np.pi * small * small), 0.0, 1.0)


def canopy_overlap(a: PlacedTree, b: PlacedTree) -> float:
    if a.crown_radius <= 0 or b.crown_radius <= 0:
        raise ValueError("crown_radius must be > 0")
    d = math.dist(a.position_xy, b.position_xy)
    return float(overlap_ratio(np.array(d), a.crown_radius, b.crown_radius))


# --------------------------------------------------------------------------- assembly


def _height_pools(library: ModelLibrary) -> dict[str, tuple[np.ndarray, list[list[str]]]]:
    """Per species: sorted nominal heights and the model ids at each height."""
    by: dict[str, dict[float, list[str]]] = {}
    for e in library.entries.values():
        by.setdefault(e.species_id, {}).setdefault(e.nominal_height, []).append(e.model_id)
    pools = {}
    for sp, d in by.items():
        hs = sorted(d)
        pools[sp] = (np.array(hs), [sorted(d[h]) for h in hs])
    return pools


def choose_model(pool: tuple[np.ndarray, list[list[str]]], height: float, rng: np.random.Generator) -> str:
    """A random variant at the nominal height nearest ``height``; an exact tie goes to the lower height."""
    hs, ids = pool
    k = int(np.argmin(np.abs(hs - height)))
    variants = ids[k]
    return variants[int(rng.integers(len(variants)))] if len(variants) > 1 else variants[0]


def _place(
    radius: float,
    placed_xy: list,
    placed_r: list,
    bounds: tuple[float, float, float, float],
    rng: np.random.Generator,
    max_attempts: int,
    tree_index: int,
    batch: int = 64,
) -> tuple[float, float]:
    x0, y0, x1, y1 = bounds
    used = 0
    pxy = np.asarray(placed_xy, dtype=np.float64).reshape(-1, 2)
    pr = np.asarray(placed_r, dtype=np.float64)
    while used < max_attempts:
        n = min(batch, max_attempts - used)
        cand = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
        used += n
        if len(pr) == 0:
            return float(cand[0, 0]), float(cand[0, 1])
        d = np.linalg.norm(cand[:, None, :] - pxy[None, :, :], axis=2)
        ok = np.all(overlap_ratio(d, radius, pr[None, :]) <= MAX_OVERLAP, axis=1)
        hit = np.flatnonzero(ok)
        if len(hit):
            return float(cand[hit[0], 0]), float(cand[hit[0], 1])
    raise AssemblyError(tree_index, max_attempts)


def assemble_plot(
    spec: PlotSpec,
    library: ModelLibrary,
    terrain: Terrain,
    understory: np.ndarray | UnderstoryConfig | None = None,
    seed: int = 0,
    plot_id: str = "0",
) -> PlotInstance:
    """Sample, select, scale, rotate and place trees on ``terrain``.

    ``understory`` may be a ready point array, or a config from which points are generated with a derived seed.
    """
    if not library.entries:
        raise ValueError("model database is empty")
    ex, ey = spec.extent
    if not np.allclose(terrain.extent, spec.extent, atol=1e-6):
        raise ValueError("terrain extent does not match plot extent")
    rng = make_rng(seed, "assemble")
    area = ex * ey / 1e4
    n = sample_tree_count(spec.stats, area, rng)
    heights = sample_heights(n, spec.stats.height_mean, spec.stats.height_sd, rng)
    pools = _height_pools(library)
    species = sorted(pools)

    drafts = []
    for h in heights:
        sp = species[int(rng.integers(len(species)))]
        mid = choose_model(pools[sp], h, rng)
        drafts.append(
            {
                "species": sp,
                "model_id": mid,
                "sampled_height": float(h),
                "scale": float(rng.uniform(0.9, 1.1)),
                "rotation": float(rng.uniform(0.0, 2.0 * math.pi)),
            }
        )

    if spec.complexity == "difficult" and n > 1:
        order = np.argsort(heights, kind="stable")
        n_small = n // 2
        small = set(order[:n_small].tolist())
        groups = [("tall", [i for i in range(n) if i not in small]), ("small", [i for i in range(n) if i in small])]
    else:
        groups = [("single", list(range(n)))]

    bounds = terrain.bounds
    trees: list[PlacedTree] = []
    for layer, members in groups:
        layer_xy: list = []
        layer_r: list = []
        for i in members:
            dr = drafts[i]
            attrs = library.attributes(dr["model_id"])
            scaled = _scale_attributes(attrs, dr["scale"], library.model(dr["model_id"]).trunk_profile)
            radius = max(0.5 * scaled.crown_width, 1e-3)
            x, y = _place(radius, layer_xy, layer_r, bounds, rng, spec.max_attempts, i)
            layer_xy.append((x, y))
            layer_r.append(radius)
            trees.append(
                PlacedTree(
                    instance_id=len(trees) + 1,
                    model_id=dr["model_id"],
                    species_id=dr["species"],
                    position_xy=(x, y),
                    base_z=float(height_at(terrain, x, y)),
                    rotation_z=dr["rotation"],
                    scale=dr["scale"],
                    crown_radius=radius,
                    attributes=scaled,
                    layer=layer,
                    sampled_height=dr["sampled_height"],
                )
            )

    if isinstance(understory, np.ndarray):
        points = understory
    else:
        cfg = understory or UnderstoryConfig(cover_fraction=spec.cover_fraction)
        points = generate_understory(terrain, cfg.cover_fraction, derive_seed(seed, "understory"), cfg)
    return PlotInstance(
        plot_id=str(plot_id),
        complexity=spec.complexity,
        extent=(float(ex), float(ey)),
        terrain=terrain,
        trees=trees,
        understory=points,
        seed=int(seed),
        spec=spec,
        database=library.describe(),
    )


def _scale_attributes(a: TreeAttributes, s: float, trunk_profile: np.ndarray) -> TreeAttributes:
    """Attributes of a model uniformly scaled by ``s``.

    Similarity laws for everything but DBH, which is re-read from the trunk profile at
    breast height of the scaled tree, as :func:`compute_attributes` does.
    """
    height = a.height * s
    z = 0.5 * a.height if height < BREAST_HEIGHT else BREAST_HEIGHT / s
    return TreeAttributes(
        height=height,
        dbh=2.0 * s * trunk_radius_at(trunk_profile, z),
        crown_width=a.crown_width * s,
        crown_area=a.crown_area * s * s,
        leaf_area=a.leaf_area * s * s,
        wood_volume=a.wood_volume * s**3,
        dbh_at_half_height=bool(height < BREAST_HEIGHT),
    )


def make_plot(
    plot_id: str,
    spec: PlotSpec,
    library: ModelLibrary,
    seed: int,
    cell_size: float = 0.2,
    understory: UnderstoryConfig | None = None,
) -> PlotInstance:
    """Terrain, trees and understory for one plot, every stream derived from ``seed``."""
    terrain = generate_terrain(spec.complexity, spec.extent[0], spec.extent[1], cell_size, derive_seed(seed, "terrain"))
    return assemble_plot(spec, library, terrain, understory, seed, plot_id)


def pairwise_violations(plot: PlotInstance, limit: float = MAX_OVERLAP + OVERLAP_TOL) -> list[tuple[int, int, float]]:
    """Same-layer tree pairs whose crown overlap exceeds ``limit``."""
    out = []
    trees = plot.trees
    for a in range(len(trees)):
        for b in range(a + 1, len(trees)):
            if trees[a].layer != trees[b].layer:
                continue
            r = canopy_overlap(trees[a], trees[b])
            if r > limit:
                out.append((trees[a].instance_id, trees[b].instance_id, r))
    return out


# --------------------------------------------------------------------------- bundle


def save_plot(plot: PlotInstance, directory: str | Path, nested: bool = True) -> Path:
    """Write ``plot.json``, ``terrain.asc`` and ``understory.bin`` into ``directory/plot_<id>``
    (or straight into ``directory`` when ``nested`` is False)."""
    out = Path(directory) / f"plot_{plot.plot_id}" if nested else Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_ascii_grid(plot.terrain, out / "terrain.asc")
    np.ascontiguousarray(plot.understory, dtype="<f4").tofile(out / "understory.bin")
    doc = {
        "plot_id": plot.plot_id,
        "complexity": plot.complexity,
        "extent": list(plot.extent),
        "seed": plot.seed,
        "spec": plot.spec.to_dict() if plot.spec else None,
        "database": plot.database,
        "terrain": {"file": "terrain.asc", "cell_size": plot.terrain.cell_size, "origin_xy": list(plot.terrain.origin_xy)},
        "understory": {"file": "understory.bin", "count": int(len(plot.understory)), "dtype": "<f4"},
        "trees": [t.to_dict() for t in plot.trees],
    }
    (out / "plot.json").write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
    return out


def load_plot(path: str | Path) -> PlotInstance:
    """Read a bundle directory (or its ``plot.json``). Understory points come back at float32 precision."""
    path = Path(path)
    if path.is_file():
        path = path.parent
    doc = json.loads((path / "plot.json").read_text(encoding="utf-8"))
    terrain = read_ascii_grid(path / doc["terrain"]["file"], doc["complexity"])
    terrain.cell_size = float(doc["terrain"]["cell_size"])
    terrain.origin_xy = tuple(doc["terrain"]["origin_xy"])
    pts = np.fromfile(path / doc["understory"]["file"], dtype="<f4").astype(np.float64).reshape(-1, 3)
    return PlotInstance(
        plot_id=doc["plot_id"],
        complexity=doc["complexity"],
        extent=tuple(doc["extent"]),
        terrain=terrain,
        trees=[PlacedTree.from_dict(t) for t in doc["trees"]],
        understory=pts,
        seed=int(doc["seed"]),
        spec=PlotSpec.from_dict(doc["spec"]) if doc.get("spec") else None,
        database=doc.get("database", {}),
    )


def batch_species_counts(plots: Sequence[PlotInstance]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for p in plots:
        for t in p.trees:
            counts[t.species_id] = counts.get(t.species_id, 0) + 1
    return counts


__all__ = [
    "AssemblyError",
    "COMPLEXITIES",
    "DEFAULT_STATS",
    "PlacedTree",
    "PlotInstance",
    "PlotSpec",
    "PlotStatistics",
    "assemble_plot",
    "canopy_overlap",
    "choose_model",
    "load_plot",
    "make_plot",
    "overlap_ratio",
    "pairwise_violations",
    "sample_heights",
    "sample_tree_count",
    "save_plot",
]
