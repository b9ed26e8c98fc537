"""Procedural tree model database.

Each model is a pair of triangle meshes in a local frame (stem base at the origin, +z up):
closed tapered frusta for the wood and crossed quad pairs for the foliage. Frustum rings
use an area-preserving polygon radius, so a segment's mesh volume equals the circular
frustum volume recorded while generating it, and a planar slice of the trunk has the
area of a circle with the nominal stem radius.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import convex_hull_area, min_enclosing_circle, orthonormal_frame, triangle_areas
from .rng import derive_seed

BREAST_HEIGHT = 1.3
CROWN_SHAPES = ("conical", "ellipsoidal", "spreading")


class ParameterError(ValueError):
    """Generator parameter outside its domain."""


@dataclass(frozen=True)
class SpeciesArchetype:
    species_id: str
    trunk_taper: float
    branch_levels: int
    branch_angle_range: tuple[float, float]
    crown_base_fraction: float
    crown_shape: str
    leaf_element_size: float
    leaf_density: float
    dbh_ratio: float = 0.0095
    crown_radius_ratio: float = 0.045
    crown_radius_min: float = 0.3
    whorl_spacing: float = 0.4
    branches_per_whorl: int = 4
    trunk_sides: int = 8
    branch_sides: int = 4
    twig_sides: int = 3

    def __post_init__(self):
        object.__setattr__(self, "branch_angle_range", tuple(float(a) for a in self.branch_angle_range))
        validate_archetype(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpeciesArchetype":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ParameterError(f"unknown archetype fields: {sorted(unknown)}")
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_angle_range"] = list(self.branch_angle_range)
        return d


def validate_archetype(a: SpeciesArchetype) -> None:
    problems = []
    if not 0.0 < a.crown_base_fraction < 1.0:
        problems.append("crown_base_fraction must lie in (0, 1)")
    if a.branch_levels < 1:
        problems.append("branch_levels must be >= 1")
    if a.leaf_element_size <= 0:
        problems.append("leaf_element_size must be > 0")
    if a.leaf_density <= 0:
        problems.append("leaf_density must be > 0")
    if not 0.0 < a.trunk_taper < 1.0:
        problems.append("trunk_taper must lie in (0, 1)")
    lo, hi = a.branch_angle_range
    if not 0.0 < lo <= hi < 180.0:
        problems.append("branch_angle_range must satisfy 0 < lo <= hi < 180 degrees")
    if a.crown_shape not in CROWN_SHAPES:
        problems.append(f"crown_shape must be one of {CROWN_SHAPES}")
    if a.dbh_ratio <= 0 or a.crown_radius_ratio <= 0 or a.crown_radius_min < 0:
        problems.append("dbh_ratio and crown_radius_ratio must be > 0")
    if a.whorl_spacing <= 0 or a.branches_per_whorl < 1:
        problems.append("whorl_spacing must be > 0 and branches_per_whorl >= 1")
    if min(a.trunk_sides, a.branch_sides, a.twig_sides) < 3:
        problems.append("polygon side counts must be >= 3")
    if problems:
        raise ParameterError(f"archetype {a.species_id!r}: " + "; ".join(problems))


def load_archetypes(path: str | Path | None = None) -> list[SpeciesArchetype]:
    """Archetypes from a JSON document (a list, or ``{"archetypes": [...]}``); defaults if ``path`` is None."""
    if path is None:
        text = resources.files("sylvagen.data").joinpath("archetypes.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    items = doc["archetypes"] if isinstance(doc, dict) else doc
    return [SpeciesArchetype.from_dict(item) for item in items]


@dataclass
class TreeModel:
    """Species-tagged wood and foliage meshes plus the generation record needed for attributes.

    ``trunk_profile`` holds ``(z, radius)`` at trunk segment boundaries; the radius is linear
    within a segment. ``segment_volumes[i]`` is the volume of wood faces
    ``segment_offsets[i]:segment_offsets[i + 1]`` (one closed frustum each).
    """

    model_id: str
    species_id: str
    nominal_height: float
    wood_vertices: np.ndarray
    wood_faces: np.ndarray
    foliage_vertices: np.ndarray
    foliage_faces: np.ndarray
    trunk_profile: np.ndarray
    segment_volumes: np.ndarray
    segment_offsets: np.ndarray | None = None
    n_trunk_segments: int = 0
    variant: int = 0
    seed: int = 0

    @property
    def n_triangles(self) -> int:
        return int(len(self.wood_faces) + len(self.foliage_faces))

    @property
    def wood_volume(self) -> float:
        return float(np.sum(self.segment_volumes))

    def max_z(self) -> float:
        zs = [self.wood_vertices[:, 2].max()] if len(self.wood_vertices) else []
        if len(self.foliage_vertices):
            zs.append(self.foliage_vertices[:, 2].max())
        return float(max(zs)) if zs else 0.0

    def wood_triangles(self) -> np.ndarray:
        return self.wood_vertices[self.wood_faces]

    def foliage_triangles(self) -> np.ndarray:
        return self.foliage_vertices[self.foliage_faces]


@dataclass(frozen=True)
class TreeAttributes:
    height: float
    dbh: float
    crown_width: float
    crown_area: float
    leaf_area: float
    wood_volume: float
    dbh_at_half_height: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TreeAttributes":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# --------------------------------------------------------------------------- meshing


def _polygon_radius_factor(n: int) -> float:
    # circumradius of the regular n-gon whose area equals the circle of radius 1
    return math.sqrt(2.0 * math.pi / (n * math.sin(2.0 * math.pi / n)))


def frustum_volume(length: float, r0: float, r1: float) -> float:
    return math.pi * length / 3.0 * (r0 * r0 + r0 * r1 + r1 * r1)


def mesh_frusta(p0: np.ndarray, p1: np.ndarray, r0: np.ndarray, r1: np.ndarray, n: int):
    """Closed n-sided frusta between ``p0`` and ``p1``; returns vertices ``(m*2n, 3)`` and faces ``(m*(4n-4), 3)``.

    Faces are wound with outward normals. Faces of segment ``i`` occupy rows
    ``i*(4n-4) : (i+1)*(4n-4)`` and index only that segment's ``2n`` vertices.
    """
    m = len(p0)
    axis = p1 - p0
    axis = axis / np.linalg.norm(axis, axis=1, keepdims=True)
    u, v = orthonormal_frame(axis)
    phi = 2.0 * np.pi * np.arange(n) / n
    ring = np.cos(phi)[None, :, None] * u[:, None, :] + np.sin(phi)[None, :, None] * v[:, None, :]
    k = _polygon_radius_factor(n)
    bottom = p0[:, None, :] + (k * r0)[:, None, None] * ring
    top = p1[:, None, :] + (k * r1)[:, None, None] * ring
    verts = np.concatenate([bottom, top], axis=1).reshape(-1, 3)

    j = np.arange(n)
    jn = (j + 1) % n
    sides_a = np.stack([j, jn, n + jn], axis=1)
    sides_b = np.stack([j, n + jn, n + j], axis=1)
    f = np.arange(1, n - 1)
    cap_bottom = np.stack([np.zeros_like(f), f + 1, f], axis=1)
    cap_top = np.stack([np.full_like(f, n), n + f, n + f + 1], axis=1)
    local = np.concatenate([sides_a, sides_b, cap_bottom, cap_top])
    faces = (local[None, :, :] + (2 * n * np.arange(m))[:, None, None]).reshape(-1, 3)
    return verts, faces


def mesh_leaf_pairs(centres: np.ndarray, axes: np.ndarray, sides: np.ndarray, length: float, width: float):
    """Crossed quad pairs: two perpendicular ``length x width`` quads sharing ``axes`` as their long edge direction."""
    m = len(centres)
    if m == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), np.int64)
    binorm = np.cross(axes, sides)
    hl = 0.5 * length
    hw = 0.5 * width
    quads = []
    for w in (sides, binorm):
        quads.append(
            np.stack(
                [
                    centres - hl * axes - hw * w,
                    centres + hl * axes - hw * w,
                    centres + hl * axes + hw * w,
                    centres - hl * axes + hw * w,
                ],
                axis=1,
            )
        )
    verts = np.concatenate(quads, axis=1).reshape(-1, 3)
    local = np.array([[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]])
    faces = (local[None, :, :] + (8 * np.arange(m))[:, None, None]).reshape(-1, 3)
    return verts, faces


# --------------------------------------------------------------------------- generation


def crown_envelope(shape: str, t: np.ndarray | float) -> np.ndarray:
    """Relative crown radius at relative position ``t`` (0 = crown base, 1 = apex)."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    if shape == "conical":
        return 0.1 + 0.9 * (1.0 - t)
    if shape == "ellipsoidal":
        return np.sqrt(np.clip(1.0 - ((t - 0.5) / 0.55) ** 2, 0.0, None))
    if shape == "spreading":
        return np.sqrt(np.clip(1.0 - ((t - 0.4) / 0.62) ** 2, 0.0, None))
    raise ParameterError(f"unknown crown shape {shape!r}")


@dataclass
class _Segments:
    p0: list = field(default_factory=list)
    p1: list = field(default_factory=list)
    r0: list = field(default_factory=list)
    r1: list = field(default_factory=list)

    def add(self, p0, p1, r0, r1):
        self.p0.append(p0)
        self.p1.append(p1)
        self.r0.append(r0)
        self.r1.append(r1)

    def __len__(self):
        return len(self.p0)


def _rotate_about(vec: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return vec * c + np.cross(axis, vec) * s + axis * np.dot(axis, vec) * (1.0 - c)


def generate_tree(
    archetype: SpeciesArchetype,
    target_height: float,
    variant_seed: int,
    model_id: str | None = None,
    variant: int = 0,
) -> TreeModel:
    """Generate one tree of ``target_height`` m by recursive parametric branching."""
    if not target_height > 0:
        raise ParameterError("target_height must be > 0")
    a = archetype
    rng = np.random.default_rng(int(variant_seed) & ((1 << 64) - 1))
    H = float(target_height)

    # trunk: linear taper r(z) = r0 * (1 - (1 - taper) z / H), calibrated to the target DBH
    dbh = a.dbh_ratio * H * rng.uniform(0.9, 1.1)
    z_dbh = min(BREAST_HEIGHT, 0.5 * H)
    r_base = 0.5 * dbh / (1.0 - (1.0 - a.trunk_taper) * z_dbh / H)

    def r_trunk(z):
        return r_base * (1.0 - (1.0 - a.trunk_taper) * np.asarray(z) / H)

    n_trunk = int(np.clip(math.ceil(H / 1.0), 4, 32))
    zs = np.linspace(0.0, H, n_trunk + 1)
    trunk = _Segments()
    for i in range(n_trunk):
        trunk.add(
            np.array([0.0, 0.0, zs[i]]), np.array([0.0, 0.0, zs[i + 1]]), float(r_trunk(zs[i])), float(r_trunk(zs[i + 1]))
        )

    crown_base = a.crown_base_fraction * H
    crown_len = H - crown_base
    crown_radius = (a.crown_radius_ratio * H + a.crown_radius_min) * rng.uniform(0.9, 1.05)
    leaf_len = a.leaf_element_size
    leaf_w = 0.5 * a.leaf_element_size

    branches = _Segments()
    twigs = _Segments()
    leaf_sites: list[tuple[np.ndarray, np.ndarray]] = []  # (start, end) of foliated stretches

    n_whorls = max(3, int(crown_len / a.whorl_spacing))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phase = rng.uniform(0.0, 2.0 * math.pi)
    angle_lo, angle_hi = (math.radians(x) for x in a.branch_angle_range)
    for w in range(n_whorls):
        t = (w + rng.uniform(0.25, 0.75)) / n_whorls
        z = crown_base + t * crown_len
        reach = crown_radius * float(crown_envelope(a.crown_shape, t)) * rng.uniform(0.8, 1.0)
        reach -= 0.5 * leaf_len
        if reach <= 0.05:
            continue
        n_b = a.branches_per_whorl if a.branches_per_whorl > 1 else 1
        for b in range(n_b):
            az = phase + w * golden + 2.0 * math.pi * b / n_b + rng.uniform(-0.25, 0.25)
            theta = rng.uniform(angle_lo, angle_hi)
            sin_t = max(math.sin(theta), 0.2)
            length = reach / sin_t
            # keep branch tips above the crown base and below the apex
            dz = length * math.cos(theta)
            if z + dz < crown_base:
                length = (z - crown_base) / max(-math.cos(theta), 1e-6) * 0.999
            if z + dz > H * 0.995:
                length = (H * 0.995 - z) / max(math.cos(theta), 1e-6)
            if length <= 0.05:
                continue
            direction = np.array([sin_t * math.cos(az), sin_t * math.sin(az), math.cos(theta)])
            direction /= np.linalg.norm(direction)
            rt = float(r_trunk(z))
            rb = min(0.6 * rt, 0.006 + 0.012 * length)
            r_tip = 0.35 * rb
            start = np.array([0.0, 0.0, z])
            # two segments with a small bend towards the horizontal
            mid = start + 0.55 * length * direction
            bent = direction.copy()
            bent[2] *= rng.uniform(0.3, 0.9)
            bent /= np.linalg.norm(bent)
            end = mid + 0.45 * length * bent
            r_mid = rb + 0.55 * (r_tip - rb)
            branches.add(start, mid, rb, r_mid)
            branches.add(mid, end, r_mid, r_tip)
            leaf_sites.append((start + 0.3 * (end - start), end))

            if a.branch_levels >= 2:
                n_child = int(min(6, max(0, math.floor(length / 0.35))))
                side = 1.0
                for c in range(n_child):
                    s = 0.25 + 0.7 * (c + rng.uniform(0.2, 0.8)) / max(n_child, 1)
                    if s < 0.55:
                        base = start + (s / 0.55) * (mid - start)
                        pdir = direction
                    else:
                        base = mid + ((s - 0.55) / 0.45) * (end - mid)
                        pdir = bent
                    c_len = 0.45 * length * (1.0 - s) + 0.08
                    spread = math.radians(rng.uniform(35.0, 60.0)) * side
                    side = -side
                    lateral = np.cross(pdir, [0.0, 0.0, 1.0])
                    nrm = np.linalg.norm(lateral)
                    lateral = lateral / nrm if nrm > 1e-9 else np.array([1.0, 0.0, 0.0])
                    cdir = _rotate_about(pdir, np.cross(pdir, lateral), spread)
                    cdir[2] += rng.uniform(-0.1, 0.1)
                    cdir /= np.linalg.norm(cdir)
                    c_end = base + c_len * cdir
                    if c_end[2] < crown_base or c_end[2] > H * 0.995:
                        continue
                    r_parent = rb + s * (r_tip - rb)
                    twigs.add(base, c_end, 0.6 * r_parent, 0.25 * r_parent)
                    leaf_sites.append((base, c_end))

    # leader above the last whorl carries foliage up to the apex
    leaf_sites.append((np.array([0.0, 0.0, crown_base + 0.9 * crown_len]), np.array([0.0, 0.0, H])))

    # leaves along the foliated stretches
    centres, axes, sides = [], [], []
    for p, q in leaf_sites:
        seg = q - p
        seg_len = float(np.linalg.norm(seg))
        n_leaf = max(1, int(round(seg_len * a.leaf_density)))
        s = (np.arange(n_leaf) + rng.uniform(0.0, 1.0, n_leaf)) / n_leaf
        c = p[None, :] + s[:, None] * seg[None, :]
        c = c + rng.normal(0.0, 0.25 * leaf_len, c.shape)
        ax = rng.normal(size=(n_leaf, 3))
        ax += 1.5 * seg / seg_len
        ax /= np.linalg.norm(ax, axis=1, keepdims=True)
        sd = np.cross(ax, rng.normal(size=(n_leaf, 3)))
        sd /= np.linalg.norm(sd, axis=1, keepdims=True)
        centres.append(c)
        axes.append(ax)
        sides.append(sd)
    centres = np.concatenate(centres)
    axes = np.concatenate(axes)
    sides = np.concatenate(sides)

    parts = [(trunk, a.trunk_sides), (branches, a.branch_sides), (twigs, a.twig_sides)]
    wood_v, wood_f, volumes, offsets = [], [], [], [0]
    v_base = 0
    for segs, n in parts:
        if len(segs) == 0:
            continue
        p0 = np.asarray(segs.p0, dtype=np.float64)
        p1 = np.asarray(segs.p1, dtype=np.float64)
        r0 = np.asarray(segs.r0, dtype=np.float64)
        r1 = np.asarray(segs.r1, dtype=np.float64)
        verts, faces = mesh_frusta(p0, p1, r0, r1, n)
        wood_v.append(verts)
        wood_f.append(faces + v_base)
        v_base += len(verts)
        lengths = np.linalg.norm(p1 - p0, axis=1)
        volumes.extend(np.pi * lengths / 3.0 * (r0 * r0 + r0 * r1 + r1 * r1))
        per = 4 * n - 4
        offsets.extend(offsets[-1] + per * np.arange(1, len(segs) + 1))
    wood_v = np.concatenate(wood_v)
    wood_f = np.concatenate(wood_f)
    leaf_v, leaf_f = mesh_leaf_pairs(centres, axes, sides, leaf_len, leaf_w)

    # normalise to the exact target height; uniform scaling keeps the base at the origin
    top = max(wood_v[:, 2].max(), leaf_v[:, 2].max() if len(leaf_v) else 0.0)
    s = H / top
    wood_v *= s
    leaf_v *= s
    volumes = np.asarray(volumes) * s**3
    profile = np.column_stack([zs * s, r_trunk(zs) * s])

    # foliage strictly above the crown base
    if len(leaf_f):
        zmin = leaf_v[:, 2].reshape(-1, 8).min(axis=1)
        keep = zmin >= crown_base
        leaf_v = leaf_v.reshape(-1, 8, 3)[keep].reshape(-1, 3)
        leaf_f = leaf_f[: 4 * int(keep.sum())]

    return TreeModel(
        model_id=model_id or f"{a.species_id}_h{H:06.2f}_v{variant}",
        species_id=a.species_id,
        nominal_height=H,
        wood_vertices=wood_v,
        wood_faces=wood_f.astype(np.int64),
        foliage_vertices=leaf_v,
        foliage_faces=leaf_f.astype(np.int64),
        trunk_profile=profile,
        segment_volumes=volumes,
        segment_offsets=np.asarray(offsets, dtype=np.int64),
        n_trunk_segments=n_trunk,
        variant=variant,
        seed=int(variant_seed),
    )


# --------------------------------------------------------------------------- database


def model_id_for(species_id: str, height: float, variant: int) -> str:
    return f"{species_id}_h{height:06.2f}_v{variant}"


def height_grid(height_min: float, height_max: float, height_step: float) -> list[float]:
    if height_step <= 0:
        raise ParameterError("height_step must be > 0")
    if height_min > height_max:
        raise ParameterError("height_min must not exceed height_max")
    if height_min <= 0:
        raise ParameterError("heights must be > 0")
    n = int(math.floor((height_max - height_min) / height_step + 1e-9)) + 1
    return [round(height_min + k * height_step, 9) for k in range(n)]


@dataclass(frozen=True)
class DatabaseEntry:
    model_id: str
    species_id: str
    nominal_height: float
    variant: int
    seed: int


def database_entries(
    archetypes: Sequence[SpeciesArchetype],
    height_min: float = 2.0,
    height_max: float = 35.0,
    height_step: float = 1.0,
    variants_per_height: int = 3,
    seed: int = 0,
) -> list[DatabaseEntry]:
    """The catalogue of (species, height, variant) triples, without building any mesh."""
    if variants_per_height < 1:
        raise ParameterError("variants_per_height must be >= 1")
    if len({a.species_id for a in archetypes}) != len(archetypes):
        raise ParameterError("species ids must be unique")
    heights = height_grid(height_min, height_max, height_step)
    out = []
    for a in archetypes:
        for h in heights:
            for v in range(variants_per_height):
                out.append(
                    DatabaseEntry(model_id_for(a.species_id, h, v), a.species_id, h, v, derive_seed(seed, "tree", a.species_id, h, v))
                )
    return out


def build_model_database(
    archetypes: Sequence[SpeciesArchetype],
    height_min: float = 2.0,
    height_max: float = 35.0,
    height_step: float = 1.0,
    variants_per_height: int = 3,
    seed: int = 0,
) -> list[TreeModel]:
    """One model per (species, height, variant); deterministic for a fixed seed."""
    by_species = {a.species_id: a for a in archetypes}
    return [
        generate_tree(by_species[e.species_id], e.nominal_height, e.seed, model_id=e.model_id, variant=e.variant)
        for e in database_entries(archetypes, height_min, height_max, height_step, variants_per_height, seed)
    ]


class ModelLibrary:
    """Lazily generated (or loaded) models and their unit-scale attributes, keyed by model id."""

    def __init__(
        self,
        archetypes: Sequence[SpeciesArchetype],
        entries: Iterable[DatabaseEntry],
        models: dict | None = None,
        source: dict | None = None,
    ):
        self.archetypes = {a.species_id: a for a in archetypes}
        self.entries = {e.model_id: e for e in entries}
        self._models: dict[str, TreeModel] = dict(models or {})
        self._attrs: dict[str, TreeAttributes] = {}
        self.source = dict(source or {})

    @classmethod
    def generated(cls, archetypes=None, seed: int = 0, **ranges) -> "ModelLibrary":
        archetypes = list(archetypes) if archetypes is not None else load_archetypes()
        source = {"kind": "generated", "seed": int(seed), "ranges": dict(ranges), "archetypes": [a.to_dict() for a in archetypes]}
        return cls(archetypes, database_entries(archetypes, seed=seed, **ranges), source=source)

    @classmethod
    def from_models(cls, archetypes, models: Sequence[TreeModel], source: dict | None = None) -> "ModelLibrary":
        entries = [DatabaseEntry(m.model_id, m.species_id, m.nominal_height, m.variant, m.seed) for m in models]
        return cls(archetypes, entries, {m.model_id: m for m in models}, source=source or {"kind": "in_memory"})

    @classmethod
    def from_directory(cls, directory: str | Path) -> "ModelLibrary":
        archetypes, models, attrs = load_database(directory)
        lib = cls.from_models(archetypes, models, source={"kind": "directory", "path": str(Path(directory).resolve())})
        lib._attrs.update(attrs)
        return lib

    @classmethod
    def from_source(cls, source: dict) -> "ModelLibrary":
        """Rebuild a library from :meth:`describe` output."""
        kind = source.get("kind")
        if kind == "generated":
            archetypes = [SpeciesArchetype.from_dict(d) for d in source["archetypes"]]
            return cls.generated(archetypes, seed=source["seed"], **source.get("ranges", {}))
        if kind == "directory":
            return cls.from_directory(source["path"])
        raise ParameterError(f"cannot rebuild a model library from source {kind!r}")

    def describe(self) -> dict:
        return dict(self.source)

    def model(self, model_id: str) -> TreeModel:
        if model_id not in self._models:
            e = self.entries[model_id]
            self._models[model_id] = generate_tree(
                self.archetypes[e.species_id], e.nominal_height, e.seed, model_id=e.model_id, variant=e.variant
            )
        return self._models[model_id]

    def attributes(self, model_id: str) -> TreeAttributes:
        if model_id not in self._attrs:
            self._attrs[model_id] = compute_attributes(self.model(model_id), 1.0)
        return self._attrs[model_id]

    def species(self) -> list[str]:
        return sorted({e.species_id for e in self.entries.values()})


# --------------------------------------------------------------------------- attributes


def trunk_radius_at(profile: np.ndarray, z: float) -> float:
    zs, rs = profile[:, 0], profile[:, 1]
    return float(np.interp(z, zs, rs))


def compute_attributes(model: TreeModel, scale: float = 1.0) -> TreeAttributes:
    """Structural attributes of ``model`` uniformly scaled by ``scale``."""
    if not scale > 0:
        raise ParameterError("scale must be > 0")
    if len(model.wood_faces) == 0:
        raise ParameterError("wood mesh is empty")
    height = scale * model.max_z()
    half = height < BREAST_HEIGHT
    z_local = 0.5 * model.max_z() if half else BREAST_HEIGHT / scale
    dbh = 2.0 * scale * trunk_radius_at(model.trunk_profile, z_local)
    if len(model.foliage_faces):
        xy = model.foliage_vertices[:, :2] * scale
        _, r = min_enclosing_circle(xy)
        crown_width = 2.0 * r
        crown_area = convex_hull_area(xy)
        leaf_area = float(triangle_areas(model.foliage_vertices, model.foliage_faces).sum()) * scale**2
    else:
        crown_width = crown_area = leaf_area = 0.0
    return TreeAttributes(
        height=float(height),
        dbh=float(dbh),
        crown_width=float(crown_width),
        crown_area=float(crown_area),
        leaf_area=float(leaf_area),
        wood_volume=float(model.wood_volume * scale**3),
        dbh_at_half_height=bool(half),
    )


# --------------------------------------------------------------------------- serialisation


def write_mesh(path: Path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """Little-endian: u32 vertex count, f32 xyz triples, u32 triangle count, u32 index triples."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(vertices)))
        fh.write(np.ascontiguousarray(vertices, dtype="<f4").tobytes())
        fh.write(struct.pack("<I", len(faces)))
        fh.write(np.ascontiguousarray(faces, dtype="<u4").tobytes())


def read_mesh(path: Path) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    (nv,) = struct.unpack_from("<I", data, 0)
    off = 4
    verts = np.frombuffer(data, dtype="<f4", count=3 * nv, offset=off).reshape(nv, 3).astype(np.float64)
    off += 12 * nv
    (nf,) = struct.unpack_from("<I", data, off)
    off += 4
    faces = np.frombuffer(data, dtype="<u4", count=3 * nf, offset=off).reshape(nf, 3).astype(np.int64)
    return verts, faces


def save_database(models: Sequence[TreeModel], directory: str | Path, archetypes: Sequence[SpeciesArchetype], meta: dict | None = None) -> Path:
    """Write ``index.json`` and per-model ``meshes/<id>_wood.bin`` / ``<id>_foliage.bin`` under ``directory``."""
    directory = Path(directory)
    (directory / "meshes").mkdir(parents=True, exist_ok=True)
    records = []
    for m in models:
        write_mesh(directory / "meshes" / f"{m.model_id}_wood.bin", m.wood_vertices, m.wood_faces)
        write_mesh(directory / "meshes" / f"{m.model_id}_foliage.bin", m.foliage_vertices, m.foliage_faces)
        records.append(
            {
                "model_id": m.model_id,
                "species": m.species_id,
                "nominal_height": m.nominal_height,
                "variant": m.variant,
                "seed": m.seed,
                "attributes": compute_attributes(m, 1.0).to_dict(),
                "wood_volume": m.wood_volume,
                "trunk_profile": m.trunk_profile.tolist(),
                "n_trunk_segments": m.n_trunk_segments,
                "wood_file": f"meshes/{m.model_id}_wood.bin",
                "foliage_file": f"meshes/{m.model_id}_foliage.bin",
            }
        )
    index = {"archetypes": [a.to_dict() for a in archetypes], "models": records, **(meta or {})}
    (directory / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True), encoding="utf-8")
    return directory / "index.json"


def load_database(directory: str | Path) -> tuple[list[SpeciesArchetype], list[TreeModel], dict[str, TreeAttributes]]:
    """Read a database directory. Mesh coordinates come back at float32 precision."""
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    archetypes = [SpeciesArchetype.from_dict(d) for d in index["archetypes"]]
    models, attrs = [], {}
    for rec in index["models"]:
        wv, wf = read_mesh(directory / rec["wood_file"])
        fv, ff = read_mesh(directory / rec["foliage_file"])
        models.append(
            TreeModel(
                model_id=rec["model_id"],
                species_id=rec["species"],
                nominal_height=rec["nominal_height"],
                wood_vertices=wv,
                wood_faces=wf,
                foliage_vertices=fv,
                foliage_faces=ff,
                trunk_profile=np.asarray(rec["trunk_profile"], dtype=np.float64),
                segment_volumes=np.array([rec["wood_volume"]]),
                n_trunk_segments=rec["n_trunk_segments"],
                variant=rec["variant"],
                seed=rec["seed"],
            )
        )
        attrs[rec["model_id"]] = TreeAttributes.from_dict(rec["attributes"])
    return archetypes, models, attrs
