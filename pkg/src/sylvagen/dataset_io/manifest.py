"""Dataset manifest, stratified train/val/test split and batch statistics."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .. import __version__
from ..plot_assembly import PlotInstance
from ..pointcloud import SEMANTIC_NAMES
from ..rng import make_rng

SPLITS = ("train", "val", "test")
ATTRIBUTE_HEADER = (
    "plot_id", "instance_id", "species", "x", "y", "height_m", "dbh_m",
    "crown_width_m", "crown_area_m2", "leaf_area_m2", "wood_volume_m3",
)


@dataclass
class PlotEntry:
    plot_id: str
    complexity: str
    n_trees: int
    path: str = ""
    clouds: dict = field(default_factory=dict)
    split: str | None = None
    seed: int = 0


@dataclass
class DatasetManifest:
    entries: list[PlotEntry] = field(default_factory=list)
    seed: int = 0
    config_hash: str = ""
    tool_version: str = __version__
    created_utc: str = ""
    extra: dict = field(default_factory=dict)

    def by_split(self) -> dict[str, list[PlotEntry]]:
        out = {s: [] for s in SPLITS}
        for e in self.entries:
            if e.split in out:
                out[e.split].append(e)
        return out

    def split_table(self) -> dict[str, dict[str, int]]:
        """``{complexity: {split: count}}`` plus a ``total`` row."""
        table: dict[str, dict[str, int]] = {}
        for e in self.entries:
            row = table.setdefault(e.complexity, {s: 0 for s in SPLITS})
            if e.split in row:
                row[e.split] += 1
        table["total"] = {s: sum(r[s] for k, r in table.items() if k != "total") for s in SPLITS}
        return table

    def to_dict(self) -> dict:
        return {
            "entries": [asdict(e) for e in self.entries],
            "seed": self.seed,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "created_utc": self.created_utc,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            entries=[PlotEntry(**e) for e in d.get("entries", [])],
            seed=int(d.get("seed", 0)),
            config_hash=d.get("config_hash", ""),
            tool_version=d.get("tool_version", ""),
            created_utc=d.get("created_utc", ""),
            extra=d.get("extra", {}),
        )


def config_hash(config: Mapping) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode("utf-8")).hexdigest()[:16]


def utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True), encoding="utf-8")
    return path


def load_manifest(path: str | Path) -> DatasetManifest:
    return DatasetManifest.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def entry_for(plot: PlotInstance, path: str = "") -> PlotEntry:
    return PlotEntry(plot.plot_id, plot.complexity, len(plot.trees), path=path, seed=plot.seed)


# --------------------------------------------------------------------------- split


def _normalise(ratios: Sequence[float]) -> np.ndarray:
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r < 0) or r.sum() <= 0:
        raise ValueError("ratios must be three non-negative numbers with a positive sum")
    return r / r.sum()


def holdout_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Split sizes: the last split gets ``floor`` of its share, then each earlier split the
    ``floor`` of its share of what is left; the first takes the remainder.

    With 6:2:2 this gives 201/67/66 for 334 plots and 201/66/66 for 333.
    """
    r = _normalise(ratios)
    counts = [0] * len(r)
    left = n
    for k in range(len(r) - 1, 0, -1):
        share = r[k] / r[: k + 1].sum() if r[: k + 1].sum() > 0 else 0.0
        counts[k] = int(math.floor(share * left + 1e-9))
        left -= counts[k]
    counts[0] = left
    return counts


def largest_remainder_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Hamilton apportionment; remainder ties go to the earlier split."""
    r = _normalise(ratios)
    quota = r * n
    base = np.floor(quota + 1e-9).astype(int)
    frac = quota - base
    order = sorted(range(len(r)), key=lambda k: (-round(frac[k], 9), k))
    for k in order[: n - int(base.sum())]:
        base[k] += 1
    return base.tolist()


def split_dataset(
    manifest: DatasetManifest,
    ratios: Sequence[float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    method: str = "holdout",
) -> DatasetManifest:
    """Stratified by complexity: each class is shuffled by ``seed`` and cut into train, val, test."""
    counter = {"holdout": holdout_counts, "largest_remainder": largest_remainder_counts}[method]
    classes: dict[str, list[PlotEntry]] = {}
    for e in manifest.entries:
        classes.setdefault(e.complexity, []).append(e)
    assigned = {}
    for cx in sorted(classes):
        members = sorted(classes[cx], key=lambda e: e.plot_id)
        if len(members) < len(SPLITS):
            warnings.warn(f"class {cx!r} has {len(members)} plots, fewer than {len(SPLITS)} splits", stacklevel=2)
        perm = make_rng(seed, "split", cx).permutation(len(members))
        counts = counter(len(members), ratios)
        bounds = np.cumsum([0] + counts)
        for s, name in enumerate(SPLITS):
            for k in perm[bounds[s] : bounds[s + 1]]:
                assigned[members[k].plot_id] = name
    entries = [PlotEntry(**{**asdict(e), "split": assigned[e.plot_id]}) for e in manifest.entries]
    extra = {**manifest.extra, "split": {"ratios": list(map(float, ratios)), "seed": int(seed), "method": method}}
    return DatasetManifest(entries, manifest.seed, manifest.config_hash, manifest.tool_version, manifest.created_utc, extra)


# --------------------------------------------------------------------------- attribute table


def _num(v: float) -> str:
    return repr(float(v))


def tree_attribute_rows(plot: PlotInstance) -> list[list[str]]:
    rows = []
    for t in sorted(plot.trees, key=lambda t: t.instance_id):
        a = t.attributes
        rows.append(
            [
                plot.plot_id, str(t.instance_id), t.species_id, _num(t.position_xy[0]), _num(t.position_xy[1]),
                _num(a.height), _num(a.dbh), _num(a.crown_width), _num(a.crown_area), _num(a.leaf_area), _num(a.wood_volume),
            ]
        )
    return rows


def export_tree_attributes(plot: PlotInstance, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ATTRIBUTE_HEADER)
        w.writerows(tree_attribute_rows(plot))
    return path


def read_tree_attributes(path: str | Path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = {k: float(v) for k, v in row.items() if k not in ("plot_id", "instance_id", "species")}
            rec.update(plot_id=row["plot_id"], instance_id=int(row["instance_id"]), species=row["species"])
            out.append(rec)
    return out


# --------------------------------------------------------------------------- statistics


def _summary(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"mean": 0.0, "sd": 0.0, "n": 0}
    return {"mean": float(v.mean()), "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0, "n": int(v.size)}


def dataset_stats(
    manifest: DatasetManifest,
    clouds: Mapping | None = None,
    plots: Sequence[PlotInstance] | None = None,
) -> dict:
    """Per-platform per-class point counts, per-species tree counts and per-complexity summaries.

    ``clouds`` maps ``(plot_id, platform)`` to a point cloud (anything with ``semantic``) or to a
    ``{class: count}`` dict; ``plots`` supplies the tree tables.
    """
    clouds = clouds or {}
    platforms: dict[str, dict] = {}
    for (pid, platform), c in sorted(clouds.items()):
        if isinstance(c, Mapping):
            counts = {SEMANTIC_NAMES[k]: int(c.get(SEMANTIC_NAMES[k], 0)) for k in SEMANTIC_NAMES}
        else:
            bc = np.bincount(np.asarray(c.semantic, dtype=np.int64), minlength=4)
            counts = {SEMANTIC_NAMES[k]: int(bc[k]) for k in SEMANTIC_NAMES}
        slot = platforms.setdefault(platform, {"plots": 0, "total": 0, "per_class": {v: 0 for v in SEMANTIC_NAMES.values()}})
        slot["plots"] += 1
        for k, v in counts.items():
            slot["per_class"][k] += v
        slot["total"] += sum(counts.values())

    species: dict[str, int] = {}
    per_cx: dict[str, dict[str, list]] = {}
    for p in plots or []:
        acc = per_cx.setdefault(p.complexity, {"stem_density": [], "dbh": [], "height": []})
        acc["stem_density"].append(p.stem_density())
        for t in p.trees:
            species[t.species_id] = species.get(t.species_id, 0) + 1
            acc["dbh"].append(t.attributes.dbh)
            acc["height"].append(t.attributes.height)
    complexity = {
        cx: {"plots": len(acc["stem_density"]), **{k: _summary(v) for k, v in acc.items()}} for cx, acc in sorted(per_cx.items())
    }
    return {
        "n_plots": len(manifest.entries),
        "n_trees": int(sum(e.n_trees for e in manifest.entries)),
        "platforms": platforms,
        "species": dict(sorted(species.items())),
        "complexity": complexity,
        "splits": manifest.split_table() if any(e.split for e in manifest.entries) else {},
    }
