"""Labeled point cloud container shared by the simulator and the file formats."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TERRAIN, UNDERSTORY, WOOD, LEAF = 0, 1, 2, 3
SEMANTIC_NAMES = {TERRAIN: "terrain", UNDERSTORY: "understory", WOOD: "wood", LEAF: "leaf"}


@dataclass
class PointCloud:
    xyz: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    semantic: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))
    instance: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint32))
    viewpoint: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint16))
    gps_time: np.ndarray = field(default_factory=lambda: np.zeros(0))
    range: np.ndarray | None = None
    platform: str = ""
    plot_id: str = ""
    crs_note: str = "local plot frame, metres"
    labeled: bool = True

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = len(self.xyz)
        self.semantic = np.asarray(self.semantic, dtype=np.uint8)
        self.instance = np.asarray(self.instance, dtype=np.uint32)
        self.viewpoint = np.asarray(self.viewpoint, dtype=np.uint16)
        self.gps_time = np.asarray(self.gps_time, dtype=np.float64)
        if self.range is not None:
            self.range = np.asarray(self.range, dtype=np.float64)
        for name in ("semantic", "instance", "viewpoint", "gps_time"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries for {n} points")

    def __len__(self) -> int:
        return len(self.xyz)

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.semantic, minlength=4)
        return {SEMANTIC_NAMES[k]: int(counts[k]) for k in SEMANTIC_NAMES}

    @classmethod
    def concatenate(cls, parts: list["PointCloud"], platform: str = "") -> "PointCloud":
        if not parts:
            return cls(platform=platform)
        rng = None if any(p.range is None for p in parts) else np.concatenate([p.range for p in parts])
        return cls(
            xyz=np.concatenate([p.xyz for p in parts]),
            semantic=np.concatenate([p.semantic for p in parts]),
            instance=np.concatenate([p.instance for p in parts]),
            viewpoint=np.concatenate([p.viewpoint for p in parts]),
            gps_time=np.concatenate([p.gps_time for p in parts]),
            range=rng,
            platform=platform or parts[0].platform,
            plot_id=parts[0].plot_id,
        )
