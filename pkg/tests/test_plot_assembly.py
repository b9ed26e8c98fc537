from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sylvagen.plot_assembly import (
    DEFAULT_STATS,
    AssemblyError,
    PlacedTree,
    PlotSpec,
    PlotStatistics,
    assemble_plot,
    batch_species_counts,
    canopy_overlap,
    load_plot,
    make_plot,
    pairwise_violations,
    sample_heights,
    sample_tree_count,
    save_plot,
)
from sylvagen.scene_gen import generate_terrain, height_at
from sylvagen.tree_models import compute_attributes

from conftest import make_batch


def _tree(x, y, r, layer="single"):
    return PlacedTree(1, "m", "pine", (x, y), 0.0, 0.0, 1.0, r, None, layer)


def test_tree_count_bounds_easy():
    rng = np.random.default_rng(0)
    counts = {sample_tree_count(PlotStatistics(592, 189, 18.4, 6.4), 0.04, rng) for _ in range(5000)}
    assert min(counts) == 16 and max(counts) == 31


def test_tree_count_zero_sd():
    rng = np.random.default_rng(0)
    assert {sample_tree_count(PlotStatistics(600, 0, 10, 1), 0.04, rng) for _ in range(50)} == {24}


def test_tree_count_monte_carlo_mean():
    rng = np.random.default_rng(1)
    stats = PlotStatistics(2021, 553, 13.2, 5.9)
    draws = [sample_tree_count(stats, 0.04, rng) for _ in range(100_000)]
    assert np.mean(draws) == pytest.approx(80.8, rel=0.02)


def test_tree_count_lower_bound_clamped():
    rng = np.random.default_rng(0)
    assert min(sample_tree_count(PlotStatistics(10, 50, 10, 1), 0.04, rng) for _ in range(500)) == 1


def test_heights_support_and_spread():
    rng = np.random.default_rng(2)
    h = sample_heights(100_000, 18.4, 6.4, rng)
    # quoted support [7.31, 29.48] is rounded to 2 decimals
    assert h.min() >= 7.31 - 0.005 and h.max() <= 29.48 + 0.005
    assert h.min() == pytest.approx(18.4 - math.sqrt(3) * 6.4, abs=1e-3)
    assert np.std(h, ddof=1) == pytest.approx(6.4, rel=0.03)
    assert np.all(sample_heights(10, 12.0, 0.0, rng) == 12.0)
    assert np.all((sample_heights(1000, 3.0, 10.0, rng) >= 2.0))


def test_overlap_examples():
    assert canopy_overlap(_tree(0, 0, 2), _tree(10, 0, 2)) == 0.0
    assert canopy_overlap(_tree(3, 3, 1.5), _tree(3, 3, 1.5)) == pytest.approx(1.0)
    assert canopy_overlap(_tree(0, 0, 2), _tree(2, 0, 2)) == pytest.approx(0.3910, abs=5e-5)
    # a small crown fully inside a large one
    assert canopy_overlap(_tree(0, 0, 4), _tree(1, 0, 1)) == pytest.approx(1.0)


@settings(max_examples=200, deadline=None)
@given(d=st.floats(0, 10), r1=st.floats(0.05, 5), r2=st.floats(0.05, 5))
def test_overlap_bounded_and_symmetric(d, r1, r2):
    a = canopy_overlap(_tree(0, 0, r1), _tree(d, 0, r2))
    b = canopy_overlap(_tree(d, 0, r2), _tree(0, 0, r1))
    assert 0.0 <= a <= 1.0
    assert a == pytest.approx(b, abs=1e-12)


def test_easy_plot_seed_11_overlap(easy_plot):
    for i, a in enumerate(easy_plot.trees):
        for b in easy_plot.trees[i + 1 :]:
            assert canopy_overlap(a, b) <= 0.05 + 1e-9


def test_plot_invariants(batch30):
    for p in batch30:
        ids = [t.instance_id for t in p.trees]
        assert ids == list(range(1, len(ids) + 1))
        x0, y0, x1, y1 = p.terrain.bounds
        for t in p.trees:
            x, y = t.position_xy
            assert x0 <= x <= x1 and y0 <= y <= y1
            assert abs(t.base_z - height_at(p.terrain, x, y)) <= 1e-6
            assert 0.9 <= t.scale <= 1.1
            assert 0.0 <= t.rotation_z < 2 * math.pi
        assert pairwise_violations(p) == []


def test_model_choice_matches_nearest_height(batch30, library):
    for p in batch30:
        for t in p.trees:
            entry = library.entries[t.model_id]
            assert entry.species_id == t.species_id
            # nearest nominal height on the 1 m grid
            assert abs(entry.nominal_height - t.sampled_height) <= 0.5 + 1e-9


def test_scaled_attributes_agree_with_direct_measurement(easy_plot, library):
    for t in easy_plot.trees:
        direct = compute_attributes(library.model(t.model_id), t.scale)
        for k in ("height", "dbh", "crown_width", "crown_area", "leaf_area", "wood_volume"):
            assert getattr(t.attributes, k) == pytest.approx(getattr(direct, k), rel=1e-9)


def test_difficult_has_two_layers(difficult_plot):
    layers = {t.layer for t in difficult_plot.trees}
    assert layers == {"tall", "small"}
    tall = [t.sampled_height for t in difficult_plot.trees if t.layer == "tall"]
    small = [t.sampled_height for t in difficult_plot.trees if t.layer == "small"]
    assert max(small) <= min(tall)
    assert abs(len(tall) - len(small)) <= 1
    assert any(t.attributes.height < 10 for t in difficult_plot.trees)


def test_single_tree_plot(library):
    spec = PlotSpec("easy", PlotStatistics(25.0, 0.0, 12.0, 0.0))
    terrain = generate_terrain("medium", seed=4)
    p = assemble_plot(spec, library, terrain, understory=np.zeros((0, 3)), seed=3)
    assert len(p.trees) == 1
    t = p.trees[0]
    assert 0 <= t.position_xy[0] <= 20 and 0 <= t.position_xy[1] <= 20
    assert t.base_z == pytest.approx(height_at(terrain, *t.position_xy), abs=1e-6)


def test_over_dense_spec_raises(library):
    spec = PlotSpec("easy", PlotStatistics(40000.0, 0.0, 30.0, 0.0), max_attempts=200)
    with pytest.raises(AssemblyError) as err:
        make_plot("x", spec, library, seed=1)
    assert err.value.tree_index >= 1


def test_assembly_is_deterministic(library, easy_plot):
    again = make_plot("e0", PlotSpec.default("easy"), library, easy_plot.seed)
    assert [t.to_dict() for t in again.trees] == [t.to_dict() for t in easy_plot.trees]
    assert again.understory.tobytes() == easy_plot.understory.tobytes()


def test_bundle_round_trip(tmp_path, difficult_plot):
    out = save_plot(difficult_plot, tmp_path)
    assert out.name == "plot_d0"
    assert {p.name for p in out.iterdir()} == {"plot.json", "terrain.asc", "understory.bin"}
    back = load_plot(out)
    assert [t.to_dict() for t in back.trees] == [t.to_dict() for t in difficult_plot.trees]
    assert back.terrain.heights.tobytes() == difficult_plot.terrain.heights.tobytes()
    np.testing.assert_allclose(back.understory, difficult_plot.understory, atol=1e-4)
    assert back.spec.to_dict() == difficult_plot.spec.to_dict()
    save_plot(back, tmp_path / "again")
    assert (out / "plot.json").read_bytes() == (tmp_path / "again" / "plot_d0" / "plot.json").read_bytes()


def test_default_stats_match_reference_rows():
    assert (DEFAULT_STATS["easy"].stem_density_mean, DEFAULT_STATS["easy"].stem_density_sd) == (592, 189)
    assert (DEFAULT_STATS["easy"].height_mean, DEFAULT_STATS["easy"].height_sd) == (18.4, 6.4)


def test_species_balance(library):
    plots = make_batch(library, seed=77, per_class=40, classes=("difficult",))
    counts = batch_species_counts(plots)
    total = sum(counts.values())
    assert total >= 3000
    assert set(counts) == {"pine", "spruce", "birch"}
    for v in counts.values():
        assert 0.25 <= v / total <= 0.42
