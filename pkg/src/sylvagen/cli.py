"""Command-line entry point: ``sylvagen <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .dataset_io import (
    DatasetManifest,
    PlotEntry,
    config_hash,
    dataset_stats,
    export_tree_attributes,
    load_manifest,
    read_las,
    save_manifest,
    split_dataset,
    write_las,
)
from .dataset_io.manifest import utc_now
from .eval_metrics import confusion, detection_metrics, match_instances, semantic_metrics
from .plot_assembly import COMPLEXITIES, PlotSpec, load_plot, make_plot, save_plot
from .rng import derive_seed
from .scan_planning import PLATFORMS, load_plan, plan_als, plan_mls, plan_tls, plan_uls, save_plan
from .tree_models import ModelLibrary, build_model_database, load_archetypes, save_database

PLANNERS = {"TLS": plan_tls, "MLS": plan_mls, "ULS": plan_uls, "ALS": plan_als}


class CliError(RuntimeError):
    pass


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError("config must be a JSON object")
    known = {"seed", "database", "plots", "extent", "cover_fraction", "workers", "platforms", "tls_resolution"}
    unknown = set(cfg) - known
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _manifest(out: Path, seed: int, config: dict, entries=None, extra=None) -> Path:
    m = DatasetManifest(
        entries=list(entries or []),
        seed=int(seed),
        config_hash=config_hash(config),
        tool_version=__version__,
        created_utc=utc_now(),
        extra=extra or {},
    )
    return save_manifest(m, out / "manifest.json")


def _library(args, plot_database: dict | None = None) -> ModelLibrary:
    if getattr(args, "db", None):
        return ModelLibrary.from_directory(args.db)
    if plot_database:
        return ModelLibrary.from_source(plot_database)
    return ModelLibrary.generated(seed=getattr(args, "db_seed", 0))


# --------------------------------------------------------------------------- subcommands


def cmd_gen_db(args) -> dict:
    out = Path(args.out)
    archetypes = load_archetypes(args.archetypes)
    t0 = time.perf_counter()
    models = build_model_database(
        archetypes, args.height_min, args.height_max, args.height_step, args.variants, args.seed
    )
    meta = {"seed": args.seed, "ranges": [args.height_min, args.height_max, args.height_step, args.variants]}
    save_database(models, out, archetypes, meta={"build": meta})
    _manifest(out, args.seed, {"gen-db": meta, "archetypes": [a.to_dict() for a in archetypes]})
    return {"models": len(models), "seconds": round(time.perf_counter() - t0, 3), "out": str(out)}


def _plot_spec(complexity: str, cfg: dict) -> PlotSpec:
    kw = {}
    if "extent" in cfg:
        kw["extent"] = tuple(cfg["extent"])
    if "cover_fraction" in cfg:
        kw["cover_fraction"] = float(cfg["cover_fraction"])
    return PlotSpec.default(complexity, **kw)


def cmd_gen_plot(args) -> dict:
    cfg = _read_config(args.config)
    out = Path(args.out)
    seed = int(cfg.get("seed", args.seed))
    lib = _library(args) if not cfg.get("database") else ModelLibrary.generated(seed=int(cfg["database"].get("seed", 0)))
    if cfg.get("plots"):
        from .lidar_sim import worker_count

        jobs = []
        for cx in COMPLEXITIES:
            for _ in range(int(cfg["plots"].get(cx, 0))):
                jobs.append((f"{len(jobs):04d}", cx, derive_seed(seed, "plot", len(jobs))))
        platforms = _platforms(",".join(cfg["platforms"])) if cfg.get("platforms") else []

        def run(job):
            pid, cx, plot_seed = job
            p = make_plot(pid, _plot_spec(cx, cfg), lib, plot_seed)
            bundle = save_plot(p, out)
            clouds = {name: _simulate_into(p, bundle, name, lib, cfg.get("tls_resolution"), 1) for name in platforms}
            return PlotEntry(pid, cx, len(p.trees), path=bundle.name, clouds=clouds, seed=p.seed)

        workers = worker_count(cfg.get("workers"))
        if workers > 1 and len(jobs) > 1:
            # each plot is independent; map keeps the manifest in index order
            with ThreadPoolExecutor(max_workers=workers) as pool:
                entries = list(pool.map(run, jobs))
        else:
            entries = [run(j) for j in jobs]
        _manifest(out, seed, cfg, entries)
        return {"plots": len(entries), "out": str(out)}
    if args.complexity not in COMPLEXITIES:
        raise CliError("--complexity is required without a batch config")
    pid = args.plot_id or str(seed)
    p = make_plot(pid, _plot_spec(args.complexity, cfg), lib, seed)
    save_plot(p, out, nested=False)
    _manifest(out, seed, {"complexity": args.complexity, "seed": seed, "database": lib.describe()},
              [PlotEntry(pid, p.complexity, len(p.trees), path=".", seed=seed)])
    return {"plot_id": pid, "trees": len(p.trees), "understory_points": int(len(p.understory)), "out": str(out)}


def _platforms(value: str) -> list[str]:
    if value.lower() == "all":
        return list(PLATFORMS)
    names = [v.strip().upper() for v in value.split(",")]
    bad = [n for n in names if n not in PLATFORMS]
    if bad:
        raise CliError(f"unknown platform(s): {bad}")
    return names


def cmd_plan(args) -> dict:
    plot = load_plot(args.plot)
    written = {}
    for name in _platforms(args.platform):
        plan = PLANNERS[name](plot)
        written[name] = str(save_plan(plan, Path(args.plot)))
    return {"plans": written}


def _scanner(platform: str, name: str):
    from .lidar_sim import load_scanners

    if name == "default":
        return load_scanners()[f"{platform.lower()}_default"]
    p = Path(name)
    table = load_scanners(p) if p.exists() else load_scanners()
    if p.exists():
        matches = [s for s in table.values() if s.platform == platform]
        if not matches:
            raise CliError(f"no {platform} scanner in {name}")
        return matches[0]
    if name not in table:
        raise CliError(f"unknown scanner {name!r}")
    return table[name]


def _simulate_into(plot, bundle: Path, platform: str, lib, resolution, workers) -> str:
    """Plan, simulate and write ``<platform>.las`` into a plot bundle; returns the file name."""
    from .lidar_sim import build_scene_index, default_scanner, simulate

    plan = PLANNERS[platform](plot)
    save_plan(plan, bundle)
    scanner = default_scanner(platform)
    if resolution and scanner.angular_pattern == "spherical_grid":
        scanner = scanner.with_pattern(h_res=float(resolution), v_res=float(resolution))
    cloud = simulate(plot, platform, scanner, plan, scene=build_scene_index(plot, lib), workers=workers)
    cloud.plot_id = plot.plot_id
    name = f"{platform.lower()}.las"
    write_las(cloud, bundle / name)
    return name


def cmd_simulate(args) -> dict:
    from .lidar_sim import build_scene_index, simulate

    platform = args.platform.upper()
    plot = load_plot(args.plot)
    plan_path = Path(args.plot) / f"plan_{platform}.json"
    plan = load_plan(plan_path) if plan_path.exists() else PLANNERS[platform](plot)
    scanner = _scanner(platform, args.scanner)
    if args.resolution:
        if scanner.angular_pattern != "spherical_grid":
            raise CliError("--resolution applies to spherical-grid scanners only")
        scanner = scanner.with_pattern(h_res=args.resolution, v_res=args.resolution)
    lib = _library(args, plot.database)
    scene = build_scene_index(plot, lib)
    t0 = time.perf_counter()
    cloud = simulate(plot, platform, scanner, plan, scene=scene, workers=args.workers)
    dt = time.perf_counter() - t0
    cloud.plot_id = plot.plot_id
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_las(cloud, out)
    return {"points": len(cloud), "per_class": cloud.class_counts(), "seconds": round(dt, 3), "out": str(out)}


def cmd_attrs(args) -> dict:
    plot = load_plot(args.plot)
    out = Path(args.out) if args.out else Path(args.plot) / "trees.csv"
    export_tree_attributes(plot, out)
    return {"trees": len(plot.trees), "out": str(out)}


def cmd_stats(args) -> dict:
    root = Path(args.manifest).parent
    manifest = load_manifest(args.manifest)
    plots, clouds = [], {}
    for e in manifest.entries:
        bundle = root / e.path
        plots.append(load_plot(bundle))
        for las in sorted(bundle.glob("*.las")):
            c = read_las(las)
            clouds[(e.plot_id, c.platform or las.stem.upper())] = c
    stats = dataset_stats(manifest, clouds, plots)
    out = Path(args.out) if args.out else root / "stats.json"
    _write_json(out, stats)
    return {"out": str(out), "plots": stats["n_plots"], "trees": stats["n_trees"]}


def _ratios(text: str) -> list[float]:
    parts = text.replace(",", ":").split(":")
    try:
        r = [float(p) for p in parts]
    except ValueError as exc:
        raise CliError(f"bad ratios {text!r}") from exc
    if len(r) != 3:
        raise CliError("ratios need three parts, e.g. 6:2:2")
    return r


def cmd_split(args) -> dict:
    manifest = load_manifest(args.manifest)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out_manifest = split_dataset(manifest, _ratios(args.ratios), args.seed)
    out = Path(args.out) if args.out else Path(args.manifest)
    save_manifest(out_manifest, out)
    return {"out": str(out), "table": out_manifest.split_table(), "warnings": [str(w.message) for w in caught]}


def cmd_eval(args) -> dict:
    gt = read_las(args.gt)
    pred = read_las(args.pred)
    if len(gt) != len(pred):
        raise CliError(f"point counts differ: {len(gt)} vs {len(pred)}")
    if args.task == "semantic":
        n = int(max(gt.semantic.max(initial=0), pred.semantic.max(initial=0))) + 1
        n = max(n, 4)
        report = semantic_metrics(confusion(gt.semantic, pred.semantic, n))
    else:
        res = match_instances(gt.instance, pred.instance, args.iou)
        report = detection_metrics(res)
        report["matches"] = len(res.matches)
    report = {"task": args.task, **report}
    if args.out:
        _write_json(Path(args.out), report)
    return report


def cmd_bench(args) -> dict:
    from .lidar_sim.bench import run_benchmark

    report = run_benchmark(args.triangles, args.rays, args.seed, args.repeats)
    if not report["meets_target"]:
        print(
            f"warning: {report['rays_per_second_per_worker']:.0f} rays/s per worker is below the "
            f"{report['soft_target']:.0f} soft target",
            file=sys.stderr,
        )
    if args.out:
        _write_json(Path(args.out), report)
    return report


# --------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    """Usage errors go to stderr as one JSON object, like every other failure."""

    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": f"{self.prog}: {message}"}), file=sys.stderr)
        self.exit(2)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sylvagen", description=__doc__)
    ap.add_argument("--version", action="version", version=f"sylvagen {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-db", help="build the tree model database")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--archetypes", default=None, help="archetype JSON (packaged defaults if omitted)")
    p.add_argument("--height-min", type=float, default=2.0)
    p.add_argument("--height-max", type=float, default=35.0)
    p.add_argument("--height-step", type=float, default=1.0)
    p.add_argument("--variants", type=int, default=3)
    p.set_defaults(func=cmd_gen_db)

    p = sub.add_parser("gen-plot", help="assemble one plot bundle, or a batch from --config")
    p.add_argument("--out", required=True)
    p.add_argument("--complexity", choices=COMPLEXITIES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot-id", default=None)
    p.add_argument("--db", default=None, help="database directory (models are generated on demand if omitted)")
    p.add_argument("--db-seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_gen_plot)

    p = sub.add_parser("plan", help="write scan plans into a plot bundle")
    p.add_argument("--plot", required=True)
    p.add_argument("--platform", default="all")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="simulate one platform over a plot bundle and write LAS")
    p.add_argument("--platform", required=True, type=str.upper, choices=PLATFORMS)
    p.add_argument("--plot", required=True)
    p.add_argument("--scanner", default="default")
    p.add_argument("--out", required=True)
    p.add_argument("--db", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--resolution", type=float, default=None, help="override TLS angular resolution (degrees)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attrs", help="export the per-tree attribute table")
    p.add_argument("--plot", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_attrs)

    p = sub.add_parser("stats", help="dataset statistics for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("split", help="stratified train/val/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="6:2:2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval", help="semantic or instance metrics between two labeled LAS files")
    p.add_argument("--task", choices=("semantic", "instance"), required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="ray-trace throughput benchmark")
    p.add_argument("--triangles", type=int, default=100_000)
    p.add_argument("--rays", type=int, default=1_000_000)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except Exception as exc:  # report every failure as one JSON line on stderr
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
