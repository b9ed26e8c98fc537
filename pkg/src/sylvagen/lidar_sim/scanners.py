"""Scanner models and index-addressable pulse schedules.

A schedule knows its total pulse count and can materialise any contiguous index range, so
blocks can be handed to workers and reassembled in emission order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterator

import numpy as np

from ..scan_planning import ScanPlan

PATTERNS = ("spherical_grid", "multi_channel_spinner", "across_track_line")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ScannerModel:
    """One scanner. ``pattern`` holds the fields of its angular pattern (degrees, Hz, counts)."""

    name: str
    platform: str
    angular_pattern: str
    pattern: dict
    max_range: float
    mount_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.angular_pattern not in PATTERNS:
            raise ConfigurationError(f"unknown angular pattern {self.angular_pattern!r}")
        if not self.max_range > 0:
            raise ConfigurationError("max_range must be > 0")
        p = self.pattern
        if self.angular_pattern == "spherical_grid":
            if min(p["h_res"], p["v_res"], p["v_fov"]) <= 0:
                raise ConfigurationError("spherical grid resolutions must be > 0")
        elif self.angular_pattern == "multi_channel_spinner":
            ch = list(p["channels"])
            if not ch or ch != sorted(ch):
                raise ConfigurationError("spinner channels must be non-empty and ascending")
            if p["rotation_hz"] <= 0 or p["pulses_per_rotation"] < 1:
                raise ConfigurationError("spinner rates must be > 0")
        else:
            if p["fov"] <= 0 or p["line_rate_hz"] <= 0 or p["pulses_per_line"] < 2:
                raise ConfigurationError("line scanner rates must be > 0 (and >= 2 pulses per line)")

    def with_pattern(self, **changes) -> "ScannerModel":
        return replace(self, pattern={**self.pattern, **changes})

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "platform": self.platform,
            "angular_pattern": self.angular_pattern,
            "pattern": dict(self.pattern),
            "max_range": self.max_range,
            "mount_offset": list(self.mount_offset),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScannerModel":
        return cls(
            name=d["name"],
            platform=d["platform"],
            angular_pattern=d["angular_pattern"],
            pattern=dict(d["pattern"]),
            max_range=float(d["max_range"]),
            mount_offset=tuple(d.get("mount_offset", (0.0, 0.0, 0.0))),
        )


def load_scanners(path: str | Path | None = None) -> dict[str, ScannerModel]:
    """Scanner models keyed by name; the packaged defaults when ``path`` is None."""
    if path is None:
        text = resources.files("sylvagen.data").joinpath("scanners.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    return {name: ScannerModel.from_dict({"name": name, **d}) for name, d in doc.items()}


def default_scanner(platform: str) -> ScannerModel:
    return load_scanners()[f"{platform.lower()}_default"]


# --------------------------------------------------------------------------- schedules


@dataclass
class PulseBlock:
    origins: np.ndarray
    directions: np.ndarray
    times: np.ndarray
    viewpoints: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


class PulseSchedule:
    """Base: subclasses implement ``count`` and ``block(i0, i1)``."""

    count: int = 0
    duration: float = 0.0

    def block(self, i0: int, i1: int) -> PulseBlock:
        raise NotImplementedError

    def blocks(self, size: int = 1 << 18) -> Iterator[PulseBlock]:
        for i0 in range(0, self.count, size):
            yield self.block(i0, min(self.count, i0 + size))

    def ranges(self, size: int = 1 << 18) -> list[tuple[int, int]]:
        return [(i, min(self.count, i + size)) for i in range(0, self.count, size)]


def _sph_dirs(az: np.ndarray, el: np.ndarray) -> np.ndarray:
    ce = np.cos(el)
    return np.column_stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)])


class SphericalGridSchedule(PulseSchedule):
    """Per station: azimuth columns over 360 degrees, each column sweeping every elevation row."""

    def __init__(self, scanner: ScannerModel, plan: ScanPlan):
        p = scanner.pattern
        self.n_az = int(round(360.0 / p["h_res"]))
        self.n_el = int(round(p["v_fov"] / p["v_res"])) + 1
        self.el0 = math.radians(p.get("v_min", -40.0))
        self.h_res = math.radians(p["h_res"])
        self.v_res = math.radians(p["v_res"])
        self.rate = float(p.get("pulse_rate_hz", 1.0e6))
        self.stations = np.asarray(plan.stations, dtype=np.float64) + np.asarray(scanner.mount_offset)
        self.per_station = self.n_az * self.n_el
        self.count = self.per_station * len(self.stations)
        self.duration = self.count / self.rate

    def block(self, i0, i1):
        idx = np.arange(i0, i1, dtype=np.int64)
        st = idx // self.per_station
        rem = idx - st * self.per_station
        col = rem // self.n_el
        row = rem - col * self.n_el
        dirs = _sph_dirs(col * self.h_res, self.el0 + row * self.v_res)
        return PulseBlock(self.stations[st], dirs, idx / self.rate, (st + 1).astype(np.int64))


class _Trajectory:
    """Constant-speed motion along a polyline."""

    def __init__(self, xyz: np.ndarray, speed: float):
        self.xyz = np.asarray(xyz, dtype=np.float64)
        seg = np.linalg.norm(np.diff(self.xyz, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.s[-1])
        self.speed = float(speed)

    def at(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = np.clip(t * self.speed, 0.0, self.length)
        k = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.s) - 2)
        span = self.s[k + 1] - self.s[k]
        f = np.where(span > 0, (s - self.s[k]) / np.where(span > 0, span, 1.0), 0.0)
        pos = self.xyz[k] + f[:, None] * (self.xyz[k + 1] - self.xyz[k])
        return pos, k


class SpinnerSchedule(PulseSchedule):
    """Channels fire together at each firing; the head spins at ``rotation_hz`` while walking the path."""

    def __init__(self, scanner: ScannerModel, plan: ScanPlan):
        if plan.speed <= 0:
            raise ConfigurationError("mobile plan needs speed > 0")
        p = scanner.pattern
        self.channels = np.radians(np.asarray(p["channels"], dtype=np.float64))
        self.n_ch = len(self.channels)
        self.firing_rate = float(p["rotation_hz"]) * int(p["pulses_per_rotation"])
        self.rot = float(p["rotation_hz"])
        self.traj = _Trajectory(np.asarray(plan.path) + np.asarray(scanner.mount_offset), plan.speed)
        self.legs = np.asarray(plan.path_legs, dtype=np.int64)
        self.duration = self.traj.length / plan.speed
        self.n_fire = int(math.floor(self.duration * self.firing_rate + 1e-9)) + 1
        self.count = self.n_fire * self.n_ch

    def block(self, i0, i1):
        idx = np.arange(i0, i1, dtype=np.int64)
        f = idx // self.n_ch
        ch = idx - f * self.n_ch
        t = f / self.firing_rate
        pos, k = self.traj.at(t)
        az = 2.0 * math.pi * np.mod(f * (self.rot / self.firing_rate), 1.0)
        dirs = _sph_dirs(az, self.channels[ch])
        return PulseBlock(pos, dirs, t, self.legs[k + 1])


class LineScanSchedule(PulseSchedule):
    """Across-track scan lines swept perpendicular to each flight line, lines flown in order."""

    def __init__(self, scanner: ScannerModel, plan: ScanPlan):
        if plan.speed <= 0:
            raise ConfigurationError("mobile plan needs speed > 0")
        p = scanner.pattern
        half = 0.5 * math.radians(p["fov"])
        self.P = int(p["pulses_per_line"])
        self.angles = np.linspace(-half, half, self.P)
        self.rate = float(p["line_rate_hz"])
        lines = np.asarray(plan.flight_lines, dtype=np.float64) + np.asarray(scanner.mount_offset)
        self.a = lines[:, 0]
        vec = lines[:, 1] - lines[:, 0]
        self.length = np.linalg.norm(vec, axis=1)
        self.along = vec / self.length[:, None]
        horiz = np.column_stack([self.along[:, 1], -self.along[:, 0], np.zeros(len(vec))])
        self.across = horiz / np.linalg.norm(horiz, axis=1, keepdims=True)
        self.speed = float(plan.speed)
        dur = self.length / self.speed
        self.n_lines = np.floor(dur * self.rate + 1e-9).astype(np.int64) + 1
        per = self.n_lines * self.P
        self.offsets = np.concatenate([[0], np.cumsum(per)])
        self.t0 = np.concatenate([[0.0], np.cumsum(dur)])
        self.ids = np.asarray(plan.line_ids, dtype=np.int64)
        self.count = int(self.offsets[-1])
        self.duration = float(self.t0[-1])

    def block(self, i0, i1):
        idx = np.arange(i0, i1, dtype=np.int64)
        ln = np.searchsorted(self.offsets, idx, side="right") - 1
        rem = idx - self.offsets[ln]
        k = rem // self.P
        j = rem - k * self.P
        tl = k / self.rate
        pos = self.a[ln] + (self.speed * tl)[:, None] * self.along[ln]
        ang = self.angles[j]
        dirs = np.sin(ang)[:, None] * self.across[ln]
        dirs[:, 2] -= np.cos(ang)
        return PulseBlock(pos, dirs, self.t0[ln] + tl, self.ids[ln])


def make_schedule(scanner: ScannerModel, plan: ScanPlan) -> PulseSchedule:
    if scanner.platform != plan.platform:
        raise ConfigurationError(f"scanner {scanner.name!r} is for {scanner.platform}, plan is {plan.platform}")
    if scanner.angular_pattern == "spherical_grid":
        if len(plan.stations) == 0:
            raise ConfigurationError("spherical grid scanner needs stations")
        return SphericalGridSchedule(scanner, plan)
    if scanner.angular_pattern == "multi_channel_spinner":
        if len(plan.path) < 2:
            raise ConfigurationError("spinner scanner needs a path")
        return SpinnerSchedule(scanner, plan)
    if len(plan.flight_lines) == 0:
        raise ConfigurationError("line scanner needs flight lines")
    return LineScanSchedule(scanner, plan)


def generate_pulses(scanner: ScannerModel, plan: ScanPlan, block_size: int = 1 << 18) -> Iterator[PulseBlock]:
    """Pulse stream in emission order, as blocks of at most ``block_size`` pulses."""
    return make_schedule(scanner, plan).blocks(block_size)


def count_pulses(scanner: ScannerModel, plan: ScanPlan) -> int:
    return make_schedule(scanner, plan).count
