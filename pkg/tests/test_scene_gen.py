from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sylvagen.scene_gen import (
    TERRAIN_CLASSES,
    DomainError,
    Terrain,
    TerrainClass,
    UnderstoryConfig,
    generate_terrain,
    generate_understory,
    height_at,
    read_ascii_grid,
    terrain_triangles,
    write_ascii_grid,
)


def lstsq_plane(terrain: Terrain):
    """Independent plane fit: normal equations solved with numpy.linalg.solve."""
    nx, ny = terrain.heights.shape
    x = np.repeat(np.arange(nx) * terrain.cell_size, ny)
    y = np.tile(np.arange(ny) * terrain.cell_size, nx)
    z = terrain.heights.ravel()
    A = np.column_stack([x, y, np.ones_like(x)])
    coef = np.linalg.solve(A.T @ A, A.T @ z)
    resid = z - A @ coef
    return math.degrees(math.atan(math.hypot(coef[0], coef[1]))), float(np.sqrt(np.mean(resid**2)))


def test_easy_terrain_example():
    t = generate_terrain("easy", 20, 20, 0.2, seed=3)
    assert t.heights.shape == (101, 101)
    slope, rms = lstsq_plane(t)
    assert slope <= 3.0 and rms <= 0.1


def test_difficult_terrain_example():
    slope, rms = lstsq_plane(generate_terrain("difficult", 20, 20, 0.2, seed=3))
    assert 8.0 <= slope <= 20.0 and 0.2 <= rms <= 0.8


@pytest.mark.parametrize("complexity", sorted(TERRAIN_CLASSES))
@pytest.mark.parametrize("seed", range(5))
def test_terrain_in_configured_band(complexity, seed):
    tc = TERRAIN_CLASSES[complexity]
    slope, rms = lstsq_plane(generate_terrain(complexity, 20, 20, 0.2, seed=seed))
    assert tc.slope_band[0] <= slope <= tc.slope_band[1]
    assert tc.roughness_band[0] <= rms <= tc.roughness_band[1]


def test_flat_degenerate_terrain():
    t = generate_terrain("easy", 20, 20, 0.2, seed=1, terrain_class=TerrainClass(0.0, 0.0, (0, 0), (0, 0)))
    assert np.all(t.heights == 0.0)


@pytest.mark.parametrize("ex,ey,cell", [(20, 20, 0.2), (10, 7.3, 0.5), (3, 3, 1.0)])
def test_grid_dimensions(ex, ey, cell):
    t = generate_terrain("medium", ex, ey, cell, seed=0)
    assert t.heights.shape == (math.floor(ex / cell + 1e-9) + 1, math.floor(ey / cell + 1e-9) + 1)


def test_terrain_determinism():
    a = generate_terrain("medium", seed=8)
    b = generate_terrain("medium", seed=8)
    c = generate_terrain("medium", seed=9)
    assert a.heights.tobytes() == b.heights.tobytes()
    assert not np.array_equal(a.heights, c.heights)


def test_height_at_examples():
    t = generate_terrain("difficult", seed=2)
    for i, j in [(0, 0), (5, 17), (100, 100), (37, 0)]:
        assert height_at(t, i * 0.2, j * 0.2) == pytest.approx(t.heights[i, j], abs=1e-12)
    flat = Terrain((0.0, 0.0), 1.0, np.full((4, 4), 3.25))
    assert height_at(flat, 1.37, 2.91) == 3.25
    cell = Terrain((0.0, 0.0), 1.0, np.array([[0.0, 1.0], [0.0, 1.0]]))
    assert height_at(cell, 0.5, 0.5) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        height_at(t, -0.5, 3.0)
    with pytest.raises(DomainError):
        height_at(t, 3.0, 20.01)


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 99), f=st.floats(0.0, 20.0))
def test_height_at_is_continuous_across_cell_edges(k, f):
    t = generate_terrain("difficult", seed=4)
    x = 0.2 * k
    eps = 1e-9
    assert abs(height_at(t, x - eps, f) - height_at(t, x + eps, f)) < 1e-6
    assert abs(height_at(t, f, x - eps) - height_at(t, f, x + eps)) < 1e-6


def test_terrain_triangles_cover_every_cell():
    t = generate_terrain("easy", 2, 2, 0.5, seed=1)
    tris = terrain_triangles(t)
    assert tris.shape == (2 * 4 * 4, 3, 3)
    # projected area equals the plot area
    a = tris[:, 1, :2] - tris[:, 0, :2]
    b = tris[:, 2, :2] - tris[:, 0, :2]
    assert np.sum(0.5 * np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])) == pytest.approx(4.0)
    # every vertex lies on the surface
    for v in tris.reshape(-1, 3)[::7]:
        assert height_at(t, v[0], v[1]) == pytest.approx(v[2], abs=1e-12)


def test_ascii_grid_round_trip(tmp_path):
    t = generate_terrain("medium", 6, 4, 0.2, seed=5, origin_xy=(100.0, -20.0))
    write_ascii_grid(t, tmp_path / "t.asc")
    text = (tmp_path / "t.asc").read_text().splitlines()
    assert text[0] == f"ncols {t.nx}" and text[1] == f"nrows {t.ny}"
    back = read_ascii_grid(tmp_path / "t.asc")
    assert back.heights.tobytes() == t.heights.tobytes()
    assert back.origin_xy == pytest.approx(t.origin_xy)
    assert back.cell_size == t.cell_size


def test_understory_properties():
    t = generate_terrain("difficult", seed=6)
    pts = generate_understory(t, 0.3, seed=1)
    assert len(pts) > 1000
    x0, y0, x1, y1 = t.bounds
    assert np.all((pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1))
    dz = pts[:, 2] - height_at(t, pts[:, 0], pts[:, 1])
    assert dz.min() >= -1e-9
    assert dz.max() <= 1.5 * 1.5 + 1e-9
    again = generate_understory(t, 0.3, seed=1)
    assert pts.tobytes() == again.tobytes()
    assert len(generate_understory(t, 0.0, seed=1)) == 0
    with pytest.raises(ValueError):
        generate_understory(t, 1.5, seed=1)


def test_understory_height_cap_is_configurable():
    t = generate_terrain("easy", seed=6)
    pts = generate_understory(t, 0.2, seed=2, config=UnderstoryConfig(max_height=0.5))
    dz = pts[:, 2] - height_at(t, pts[:, 0], pts[:, 1])
    assert dz.max() <= 0.5 * 1.5 + 1e-9
