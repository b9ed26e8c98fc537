"""First-return simulation: pulse blocks traced against a scene index by a pool of workers."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..plot_assembly import PlotInstance
from ..pointcloud import SEMANTIC_NAMES, PointCloud
from ..scan_planning import ScanPlan
from ..tree_models import ModelLibrary
from .bvh import trace_rays
from .scanners import ConfigurationError, PulseBlock, ScannerModel, make_schedule
from .scene import SceneIndex, build_scene_index

BLOCK_SIZE = 1 << 18


@dataclass(frozen=True)
class Pulse:
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]
    time: float = 0.0
    viewpoint_id: int = 0


@dataclass(frozen=True)
class LabeledPoint:
    position: tuple[float, float, float]
    semantic: int
    instance: int
    viewpoint: int
    range: float


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("SYLVAGEN_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def trace(scene: SceneIndex, pulse: Pulse, max_range: float = np.inf) -> LabeledPoint | None:
    """Nearest hit of one pulse, or None."""
    o = np.asarray(pulse.origin, dtype=np.float64)[None, :]
    d = np.asarray(pulse.direction, dtype=np.float64)[None, :]
    prim, t = trace_rays(scene.bvh, o, d, max_range)
    if prim[0] < 0:
        return None
    p = o[0] + t[0] * d[0]
    return LabeledPoint(
        position=(float(p[0]), float(p[1]), float(p[2])),
        semantic=int(scene.semantic[prim[0]]),
        instance=int(scene.instance[prim[0]]),
        viewpoint=int(pulse.viewpoint_id),
        range=float(t[0]),
    )


def trace_block(scene: SceneIndex, block: PulseBlock, max_range: float, platform: str = "") -> PointCloud:
    prim, t = trace_rays(scene.bvh, block.origins, block.directions, max_range)
    hit = prim >= 0
    p = prim[hit]
    th = t[hit]
    return PointCloud(
        xyz=block.origins[hit] + th[:, None] * block.directions[hit],
        semantic=scene.semantic[p],
        instance=scene.instance[p],
        viewpoint=block.viewpoints[hit],
        gps_time=block.times[hit],
        range=th,
        platform=platform,
    )


def _run(schedule, fn, workers: int, block_size: int):
    ranges = schedule.ranges(block_size)
    job = lambda r: fn(schedule.block(*r))  # noqa: E731
    if workers <= 1 or len(ranges) <= 1:
        return [job(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map keeps emission order regardless of completion order
        return list(pool.map(job, ranges))


def _check(platform: str, scanner: ScannerModel, plan: ScanPlan) -> None:
    if not (platform == scanner.platform == plan.platform):
        raise ConfigurationError(f"platform mismatch: {platform}, scanner {scanner.platform}, plan {plan.platform}")


def simulate(
    plot: PlotInstance,
    platform: str,
    scanner: ScannerModel,
    plan: ScanPlan,
    library: ModelLibrary | None = None,
    scene: SceneIndex | None = None,
    workers: int | None = None,
    block_size: int = BLOCK_SIZE,
) -> PointCloud:
    """First-return point cloud, in pulse emission order."""
    _check(platform, scanner, plan)
    scene = scene or build_scene_index(plot, library)
    schedule = make_schedule(scanner, plan)
    parts = _run(schedule, lambda b: trace_block(scene, b, scanner.max_range, platform), worker_count(workers), block_size)
    return PointCloud.concatenate(parts, platform)


@dataclass(frozen=True)
class CountSummary:
    platform: str
    pulses: int
    points: int
    per_class: dict

    def scaled(self, factor: float) -> "CountSummary":
        return CountSummary(
            self.platform,
            int(round(self.pulses * factor)),
            int(round(self.points * factor)),
            {k: int(round(v * factor)) for k, v in self.per_class.items()},
        )


def simulate_counts(
    plot: PlotInstance,
    platform: str,
    scanner: ScannerModel,
    plan: ScanPlan,
    library: ModelLibrary | None = None,
    scene: SceneIndex | None = None,
    workers: int | None = None,
    block_size: int = BLOCK_SIZE,
) -> CountSummary:
    """Same trace as :func:`simulate` but keeps only per-class return counts."""
    _check(platform, scanner, plan)
    scene = scene or build_scene_index(plot, library)
    schedule = make_schedule(scanner, plan)

    def count(b: PulseBlock) -> np.ndarray:
        prim, _ = trace_rays(scene.bvh, b.origins, b.directions, scanner.max_range)
        return np.bincount(scene.semantic[prim[prim >= 0]], minlength=4)

    total = np.sum(_run(schedule, count, worker_count(workers), block_size), axis=0) if schedule.count else np.zeros(4, int)
    per = {SEMANTIC_NAMES[k]: int(total[k]) for k in SEMANTIC_NAMES}
    return CountSummary(platform, schedule.count, int(total.sum()), per)


def reduced_tls_counts(
    plot: PlotInstance,
    scanner: ScannerModel,
    plan: ScanPlan,
    resolution: float = 0.4,
    **kw,
) -> tuple[CountSummary, CountSummary]:
    """Trace TLS on a coarser angular grid and scale counts by the pulse-count ratio.

    Returns ``(reduced, scaled_to_full)``.
    """
    full = make_schedule(scanner, plan).count
    coarse = scanner.with_pattern(h_res=resolution, v_res=resolution)
    red = simulate_counts(plot, "TLS", coarse, plan, **kw)
    return red, red.scaled(full / red.pulses)
