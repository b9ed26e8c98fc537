"""Trace throughput benchmark on a forest scene of a requested triangle budget."""

from __future__ import annotations

import math
import time

import numpy as np

from ..scene_gen import generate_terrain, terrain_triangles
from ..tree_models import generate_tree, load_archetypes
from .bvh import build_bvh, trace_rays

SOFT_TARGET = 5e5


def benchmark_scene(n_triangles: int = 100_000, seed: int = 0) -> np.ndarray:
    """Terrain plus generated trees on a 20 m plot, trimmed to exactly ``n_triangles`` triangles."""
    rng = np.random.default_rng(seed)
    terrain = generate_terrain("medium", 20.0, 20.0, 0.2, seed)
    parts = [terrain_triangles(terrain).reshape(-1, 9)]
    total = len(parts[0])
    archetypes = load_archetypes()
    k = 0
    while total < n_triangles:
        a = archetypes[k % len(archetypes)]
        tree = generate_tree(a, float(rng.uniform(8.0, 25.0)), int(rng.integers(1 << 62)))
        c, s = math.cos(rng.uniform(0, 2 * math.pi)), math.sin(rng.uniform(0, 2 * math.pi))
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        off = np.array([rng.uniform(2, 18), rng.uniform(2, 18), 0.0])
        tris = np.concatenate([tree.wood_triangles(), tree.foliage_triangles()]) @ rot.T + off
        parts.append(tris.reshape(-1, 9))
        total += len(tris)
        k += 1
    return np.concatenate(parts)[:n_triangles]


def run_benchmark(n_triangles: int = 100_000, n_rays: int = 1_000_000, seed: int = 0, repeats: int = 3) -> dict:
    """Rays fan down from 30 m above the plot onto random ground targets; best of ``repeats``."""
    rng = np.random.default_rng(seed)
    tris = benchmark_scene(n_triangles, seed)
    t0 = time.perf_counter()
    bvh = build_bvh(tris)
    build_s = time.perf_counter() - t0
    origins = np.column_stack([rng.uniform(0, 20, n_rays), rng.uniform(0, 20, n_rays), np.full(n_rays, 30.0)])
    target = np.column_stack([rng.uniform(0, 20, n_rays), rng.uniform(0, 20, n_rays), np.full(n_rays, -5.0)])
    dirs = target - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    trace_rays(bvh, origins[:1000], dirs[:1000], 1e3)  # compile and warm caches
    best = np.inf
    hits = 0
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        prim, _ = trace_rays(bvh, origins, dirs, 1e3)
        best = min(best, time.perf_counter() - t0)
        hits = int((prim >= 0).sum())
    rate = n_rays / best
    return {
        "triangles": int(len(tris)),
        "rays": int(n_rays),
        "build_seconds": round(build_s, 4),
        "trace_seconds": round(best, 4),
        "rays_per_second_per_worker": round(rate, 1),
        "hit_fraction": hits / n_rays,
        "soft_target": SOFT_TARGET,
        "meets_target": bool(rate >= SOFT_TARGET),
    }
