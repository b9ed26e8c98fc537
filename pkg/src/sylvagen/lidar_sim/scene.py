"""Scene index: terrain triangles, placed tree meshes and understory spheres under one BVH."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..plot_assembly import PlacedTree, PlotInstance
from ..pointcloud import LEAF, TERRAIN, UNDERSTORY, WOOD
from ..scene_gen import UnderstoryConfig, terrain_triangles
from ..tree_models import ModelLibrary, TreeModel
from .bvh import BVH, build_bvh

SPHERE_RADIUS = UnderstoryConfig().sphere_radius


@dataclass(frozen=True)
class SceneIndex:
    """BVH plus per-primitive labels. Triangles take ids ``0..n_tri-1``, spheres follow."""

    bvh: BVH
    semantic: np.ndarray
    instance: np.ndarray
    n_terrain: int
    n_tree_triangles: int
    n_spheres: int

    @property
    def n_triangles(self) -> int:
        return self.n_terrain + self.n_tree_triangles

    @property
    def n_primitives(self) -> int:
        return self.n_triangles + self.n_spheres

    def triangles(self) -> np.ndarray:
        return self.bvh.tris.reshape(-1, 3, 3)

    def spheres(self) -> np.ndarray:
        return self.bvh.sphs


def tree_transform(tree: PlacedTree) -> tuple[np.ndarray, np.ndarray]:
    """Linear part (scale times z-rotation) and translation placing a model in the plot."""
    c, s = math.cos(tree.rotation_z), math.sin(tree.rotation_z)
    lin = tree.scale * np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return lin, np.array([tree.position_xy[0], tree.position_xy[1], tree.base_z])


def placed_triangles(model: TreeModel, tree: PlacedTree) -> tuple[np.ndarray, np.ndarray]:
    lin, off = tree_transform(tree)
    wood = model.wood_triangles() @ lin.T + off
    leaf = model.foliage_triangles() @ lin.T + off
    return wood, leaf


def build_scene_index(plot: PlotInstance, library: ModelLibrary | None = None, sphere_radius: float = SPHERE_RADIUS) -> SceneIndex:
    """Label every primitive and index it. A plot without trees indexes its terrain (and understory) alone."""
    tris = [terrain_triangles(plot.terrain)]
    sem = [np.full(len(tris[0]), TERRAIN, np.uint8)]
    inst = [np.zeros(len(tris[0]), np.uint32)]
    n_tree = 0
    if plot.trees and library is None:
        raise ValueError("a model library is needed to index trees")
    for t in plot.trees:
        wood, leaf = placed_triangles(library.model(t.model_id), t)
        for arr, label in ((wood, WOOD), (leaf, LEAF)):
            if len(arr):
                tris.append(arr)
                sem.append(np.full(len(arr), label, np.uint8))
                inst.append(np.full(len(arr), t.instance_id, np.uint32))
                n_tree += len(arr)
    pts = np.asarray(plot.understory, dtype=np.float64).reshape(-1, 3)
    sph = np.column_stack([pts, np.full(len(pts), sphere_radius)])
    sem.append(np.full(len(pts), UNDERSTORY, np.uint8))
    inst.append(np.zeros(len(pts), np.uint32))
    all_tris = np.concatenate(tris)
    return SceneIndex(
        bvh=build_bvh(all_tris, sph),
        semantic=np.concatenate(sem),
        instance=np.concatenate(inst),
        n_terrain=len(tris[0]),
        n_tree_triangles=n_tree,
        n_spheres=len(pts),
    )


def scene_from_primitives(tris: np.ndarray, sphs: np.ndarray | None, semantic: np.ndarray, instance: np.ndarray) -> SceneIndex:
    """Index an arbitrary labeled primitive set (tests, benchmarks)."""
    tris = np.asarray(tris, dtype=np.float64).reshape(-1, 3, 3)
    sphs = np.zeros((0, 4)) if sphs is None else np.asarray(sphs, dtype=np.float64).reshape(-1, 4)
    return SceneIndex(
        bvh=build_bvh(tris, sphs),
        semantic=np.asarray(semantic, np.uint8),
        instance=np.asarray(instance, np.uint32),
        n_terrain=0,
        n_tree_triangles=len(tris),
        n_spheres=len(sphs),
    )
