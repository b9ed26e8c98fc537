from __future__ import annotations

import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sylvagen.dataset_io import (
    ATTRIBUTE_HEADER,
    DatasetManifest,
    LabeledFormatError,
    LasFormatError,
    PlotEntry,
    config_hash,
    dataset_stats,
    entry_for,
    export_tree_attributes,
    holdout_counts,
    largest_remainder_counts,
    load_manifest,
    read_las,
    read_tree_attributes,
    save_manifest,
    split_dataset,
    write_las,
)
from sylvagen.pointcloud import PointCloud
from sylvagen.tree_models import compute_attributes

laspy = pytest.importorskip("laspy")


def random_cloud(seed: int, n: int, span: float = 500.0) -> PointCloud:
    rng = np.random.default_rng(seed)
    origin = rng.uniform(-1e4, 1e4, 3)
    return PointCloud(
        xyz=origin + rng.uniform(0, span, (n, 3)),
        semantic=rng.integers(0, 4, n),
        instance=rng.integers(0, 2**32, n, dtype=np.uint64),
        viewpoint=rng.integers(0, 2**16, n),
        gps_time=np.sort(rng.uniform(0, 1e3, n)),
        platform="ULS",
        plot_id=f"p{seed}",
    )


def assert_round_trip(cloud: PointCloud, back: PointCloud):
    assert len(back) == len(cloud)
    if len(cloud):
        assert np.abs(back.xyz - cloud.xyz).max() <= 0.0005 + 1e-9
    assert back.semantic.tobytes() == cloud.semantic.tobytes()
    assert back.instance.tobytes() == cloud.instance.tobytes()
    assert back.viewpoint.tobytes() == cloud.viewpoint.tobytes()
    assert back.gps_time.tobytes() == cloud.gps_time.tobytes()
    assert back.platform == cloud.platform and back.plot_id == cloud.plot_id


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 3000))
def test_las_round_trip_property(tmp_path_factory, seed, n):
    cloud = random_cloud(seed, n)
    path = tmp_path_factory.mktemp("las") / "c.las"
    write_las(cloud, path)
    assert_round_trip(cloud, read_las(path))


def test_empty_cloud(tmp_path):
    write_las(PointCloud(platform="TLS"), tmp_path / "e.las")
    back = read_las(tmp_path / "e.las")
    assert len(back) == 0 and back.platform == "TLS"
    assert laspy.read(tmp_path / "e.las").header.point_count == 0


def test_instance_ids_up_to_48403(tmp_path):
    ids = np.arange(0, 48404, dtype=np.uint32)
    n = len(ids)
    cloud = PointCloud(np.zeros((n, 3)) + np.arange(n)[:, None] * 0.01, np.full(n, 2), ids, np.ones(n), np.zeros(n))
    write_las(cloud, tmp_path / "i.las")
    assert np.array_equal(read_las(tmp_path / "i.las").instance, ids)


def test_laspy_reads_layout(tmp_path):
    cloud = random_cloud(7, 500)
    write_las(cloud, tmp_path / "c.las")
    f = laspy.read(tmp_path / "c.las")
    assert (f.header.version.major, f.header.version.minor) == (1, 4)
    assert f.header.point_format.id == 6
    assert f.header.point_format.size == 30 + 1 + 4 + 2
    assert {"semantic", "instance", "viewpoint"} <= set(f.point_format.extra_dimension_names)
    assert np.array_equal(np.asarray(f["semantic"]), cloud.semantic)
    assert np.array_equal(np.asarray(f["instance"]), cloud.instance)
    assert np.array_equal(np.asarray(f["viewpoint"]), cloud.viewpoint)
    np.testing.assert_allclose(np.column_stack([f.x, f.y, f.z]), cloud.xyz, atol=0.0005 + 1e-9)
    np.testing.assert_allclose(f.header.scales, 0.001)
    np.testing.assert_allclose(f.header.offsets, np.floor(cloud.xyz.min(axis=0)))
    asprs = {0: 2, 1: 3, 2: 5, 3: 5}
    assert np.array_equal(np.asarray(f.classification), [asprs[s] for s in cloud.semantic])


def test_geometry_only_file(tmp_path):
    hdr = laspy.LasHeader(point_format=6, version="1.4")
    hdr.scales = [0.001] * 3
    hdr.offsets = [0.0] * 3
    las = laspy.LasData(hdr)
    las.x = np.array([1.0, 2.0])
    las.y = np.array([3.0, 4.0])
    las.z = np.array([5.0, 6.0])
    las.write(tmp_path / "g.las")
    with pytest.raises(LabeledFormatError):
        read_las(tmp_path / "g.las")
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        back = read_las(tmp_path / "g.las", require_labels=False)
    assert w and not back.labeled
    np.testing.assert_allclose(back.xyz, [[1, 3, 5], [2, 4, 6]], atol=1e-9)


def test_overflow_raises(tmp_path):
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [3e6, 0.0, 0.0]]), [0, 0], [0, 0], [0, 0], [0, 0])
    with pytest.raises(LasFormatError):
        write_las(cloud, tmp_path / "o.las")


def test_not_las_raises(tmp_path):
    (tmp_path / "x.las").write_bytes(b"nope" * 200)
    with pytest.raises(LasFormatError):
        read_las(tmp_path / "x.las")


# ---------------------------------------------------------------- attribute table


def test_attribute_csv(tmp_path, difficult_plot, library):
    path = export_tree_attributes(difficult_plot, tmp_path / "trees.csv")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == ATTRIBUTE_HEADER
    assert len(rows) - 1 == len(difficult_plot.trees)
    parsed = read_tree_attributes(path)
    assert [r["instance_id"] for r in parsed] == sorted(t.instance_id for t in difficult_plot.trees)
    by_id = {t.instance_id: t for t in difficult_plot.trees}
    names = {"height_m": "height", "dbh_m": "dbh", "crown_width_m": "crown_width", "crown_area_m2": "crown_area", "leaf_area_m2": "leaf_area", "wood_volume_m3": "wood_volume"}
    for r in parsed:
        t = by_id[r["instance_id"]]
        direct = compute_attributes(library.model(t.model_id), t.scale)
        for col, attr in names.items():
            assert float(f"{r[col]:.6g}") == float(f"{getattr(t.attributes, attr):.6g}")
            assert r[col] == pytest.approx(getattr(direct, attr), rel=1e-9)
        assert (r["x"], r["y"]) == pytest.approx(t.position_xy)
        assert r["species"] == t.species_id
    assert min(r["height_m"] for r in parsed) < 10.0


# ---------------------------------------------------------------- stats and manifest


def test_stats_conservation(easy_plot, difficult_plot):
    rng = np.random.default_rng(0)
    clouds = {
        ("e0", "ALS"): PointCloud(rng.uniform(0, 1, (50, 3)), rng.integers(0, 4, 50), np.zeros(50), np.zeros(50), np.zeros(50)),
        ("d0", "ALS"): {"terrain": 10, "wood": 5},
        ("d0", "TLS"): {"terrain": 1000, "understory": 70, "wood": 400, "leaf": 30},
    }
    manifest = DatasetManifest([entry_for(easy_plot), entry_for(difficult_plot)])
    s = dataset_stats(manifest, clouds, [easy_plot, difficult_plot])
    for slot in s["platforms"].values():
        assert sum(slot["per_class"].values()) == slot["total"]
    assert s["platforms"]["ALS"]["total"] == 65
    assert s["n_trees"] == len(easy_plot.trees) + len(difficult_plot.trees)
    assert sum(s["species"].values()) == s["n_trees"]
    assert s["complexity"]["easy"]["stem_density"]["mean"] == pytest.approx(easy_plot.stem_density())


def test_stats_of_empty_manifest():
    s = dataset_stats(DatasetManifest())
    assert s["n_plots"] == 0 and s["n_trees"] == 0 and s["platforms"] == {} and s["species"] == {}


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest([PlotEntry("0001", "easy", 20, "plot_0001", {"ALS": "als.las"}, "train", 5)], seed=3, config_hash=config_hash({"a": 1}))
    save_manifest(m, tmp_path / "manifest.json")
    assert load_manifest(tmp_path / "manifest.json").to_dict() == m.to_dict()
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


# ---------------------------------------------------------------- split


def synthetic_manifest(counts: dict[str, int]) -> DatasetManifest:
    entries = []
    k = 0
    for cx, n in counts.items():
        for _ in range(n):
            entries.append(PlotEntry(f"{k:04d}", cx, 10))
            k += 1
    return DatasetManifest(entries)


def test_split_counts_examples():
    assert holdout_counts(334, (6, 2, 2)) == [201, 67, 66]
    assert holdout_counts(333, (6, 2, 2)) == [201, 66, 66]
    assert holdout_counts(10, (6, 2, 2)) == [6, 2, 2]
    # the largest-remainder rule cannot produce the reference easy row
    assert largest_remainder_counts(334, (6, 2, 2)) == [200, 67, 67]


def test_split_thousand_plots():
    m = split_dataset(synthetic_manifest({"easy": 334, "medium": 333, "difficult": 333}), (0.6, 0.2, 0.2), seed=1)
    table = m.split_table()
    assert table["total"] == {"train": 603, "val": 199, "test": 198}
    assert table["easy"] == {"train": 201, "val": 67, "test": 66}


@settings(max_examples=40, deadline=None)
@given(
    counts=st.dictionaries(st.sampled_from(["easy", "medium", "difficult"]), st.integers(0, 60), min_size=1),
    seed=st.integers(0, 1000),
)
def test_split_is_a_partition(counts, seed):
    m = synthetic_manifest(counts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = split_dataset(m, (6, 2, 2), seed)
        b = split_dataset(m, (6, 2, 2), seed)
    assert [e.split for e in a.entries] == [e.split for e in b.entries]
    assert all(e.split in ("train", "val", "test") for e in a.entries)
    for cx, n in counts.items():
        row = a.split_table().get(cx, {"train": 0, "val": 0, "test": 0})
        assert [row["train"], row["val"], row["test"]] == holdout_counts(n, (6, 2, 2))


def test_single_class_small_split_warns():
    with pytest.warns(UserWarning):
        m = split_dataset(synthetic_manifest({"easy": 2}), (6, 2, 2), 0)
    assert len(m.entries) == 2
    m = split_dataset(synthetic_manifest({"easy": 10}), (6, 2, 2), 0)
    assert m.split_table()["easy"] == {"train": 6, "val": 2, "test": 2}
