"""Bounding volume hierarchy over triangles and spheres, with first-hit ray queries.

Primitive ids are global: triangles take ``0 .. n_tri - 1`` and spheres follow at
``n_tri .. n_tri + n_sph - 1``. The tree is built with a binned surface-area
heuristic and stored as flat arrays so the traversal kernel can run without the GIL.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

LEAF_SIZE = 4
MAX_LEAF = 16
N_BINS = 16
STACK_DEPTH = 96
T_EPS = 1e-9


@dataclass(frozen=True)
class BVH:
    """Flat BVH arrays. Leaves have ``count > 0`` and index ``order[start:start+count]``."""

    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    tris: np.ndarray
    sphs: np.ndarray
    boxes: np.ndarray
    links: np.ndarray
    edges: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.bmin.shape[0])

    @property
    def n_primitives(self) -> int:
        return int(self.tris.shape[0] + self.sphs.shape[0])


def primitive_bounds(tris: np.ndarray, sphs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounds of every primitive, in global id order."""
    t = tris.reshape(-1, 3, 3)
    lo = np.concatenate([t.min(axis=1), sphs[:, :3] - sphs[:, 3:4]])
    hi = np.concatenate([t.max(axis=1), sphs[:, :3] + sphs[:, 3:4]])
    return lo, hi


@nb.njit(cache=True)
def _area(lo, hi):
    dx = hi[0] - lo[0]
    dy = hi[1] - lo[1]
    dz = hi[2] - lo[2]
    if dx < 0.0 or dy < 0.0 or dz < 0.0:
        return 0.0
    return 2.0 * (dx * dy + dy * dz + dz * dx)


@nb.njit(cache=True)
def _build(lo, hi):
    n = lo.shape[0]
    cen = 0.5 * (lo + hi)
    order = np.arange(n).astype(np.int64)
    cap = max(1, 2 * n)
    bmin = np.empty((cap, 3))
    bmax = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)

    stack_node = np.empty(256, np.int64)
    stack_s = np.empty(256, np.int64)
    stack_e = np.empty(256, np.int64)
    sp = 0
    n_nodes = 1
    stack_node[0] = 0
    stack_s[0] = 0
    stack_e[0] = n
    sp = 1

    bin_lo = np.empty((N_BINS, 3))
    bin_hi = np.empty((N_BINS, 3))
    bin_n = np.zeros(N_BINS, np.int64)
    acc_lo = np.empty(3)
    acc_hi = np.empty(3)
    right_area = np.empty(N_BINS)
    right_n = np.empty(N_BINS, np.int64)

    if n == 0:
        bmin[0, :] = 1.0
        bmax[0, :] = -1.0
        start[0] = 0
        count[0] = 0
        return bmin[:1], bmax[:1], left[:1], right[:1], start[:1], count[:1], order

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        s = stack_s[sp]
        e = stack_e[sp]
        m = e - s

        nlo = np.full(3, np.inf)
        nhi = np.full(3, -np.inf)
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for k in range(s, e):
            p = order[k]
            for a in range(3):
                if lo[p, a] < nlo[a]:
                    nlo[a] = lo[p, a]
                if hi[p, a] > nhi[a]:
                    nhi[a] = hi[p, a]
                if cen[p, a] < clo[a]:
                    clo[a] = cen[p, a]
                if cen[p, a] > chi[a]:
                    chi[a] = cen[p, a]
        bmin[node, :] = nlo
        bmax[node, :] = nhi

        if m <= LEAF_SIZE:
            start[node] = s
            count[node] = m
            continue

        best_cost = np.inf
        best_axis = -1
        best_bin = -1
        parent_area = _area(nlo, nhi)
        for a in range(3):
            ext = chi[a] - clo[a]
            if ext <= 0.0:
                continue
            for b in range(N_BINS):
                bin_n[b] = 0
                for c in range(3):
                    bin_lo[b, c] = np.inf
                    bin_hi[b, c] = -np.inf
            scale = N_BINS / ext
            for k in range(s, e):
                p = order[k]
                b = int((cen[p, a] - clo[a]) * scale)
                if b >= N_BINS:
                    b = N_BINS - 1
                bin_n[b] += 1
                for c in range(3):
                    if lo[p, c] < bin_lo[b, c]:
                        bin_lo[b, c] = lo[p, c]
                    if hi[p, c] > bin_hi[b, c]:
                        bin_hi[b, c] = hi[p, c]
            acc_lo[:] = np.inf
            acc_hi[:] = -np.inf
            cnt = 0
            for b in range(N_BINS - 1, 0, -1):
                cnt += bin_n[b]
                for c in range(3):
                    if bin_lo[b, c] < acc_lo[c]:
                        acc_lo[c] = bin_lo[b, c]
                    if bin_hi[b, c] > acc_hi[c]:
                        acc_hi[c] = bin_hi[b, c]
                right_area[b] = _area(acc_lo, acc_hi)
                right_n[b] = cnt
            acc_lo[:] = np.inf
            acc_hi[:] = -np.inf
            cnt = 0
            for b in range(N_BINS - 1):
                cnt += bin_n[b]
                for c in range(3):
                    if bin_lo[b, c] < acc_lo[c]:
                        acc_lo[c] = bin_lo[b, c]
                    if bin_hi[b, c] > acc_hi[c]:
                        acc_hi[c] = bin_hi[b, c]
                if cnt == 0 or right_n[b + 1] == 0:
                    continue
                cost = _area(acc_lo, acc_hi) * cnt + right_area[b + 1] * right_n[b + 1]
                if cost < best_cost:
                    best_cost = cost
                    best_axis = a
                    best_bin = b

        mid = -1
        if best_axis >= 0:
            leaf_cost = parent_area * m
            if best_cost >= leaf_cost and m <= MAX_LEAF:
                start[node] = s
                count[node] = m
                continue
            a = best_axis
            scale = N_BINS / (chi[a] - clo[a])
            i = s
            j = e - 1
            while i <= j:
                b = int((cen[order[i], a] - clo[a]) * scale)
                if b >= N_BINS:
                    b = N_BINS - 1
                if b <= best_bin:
                    i += 1
                else:
                    tmp = order[i]
                    order[i] = order[j]
                    order[j] = tmp
                    j -= 1
            mid = i
        if mid <= s or mid >= e:
            if m <= MAX_LEAF:
                start[node] = s
                count[node] = m
                continue
            # coincident centroids: split by position in the list
            mid = s + m // 2

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        count[node] = 0
        if sp + 2 > stack_node.shape[0]:
            grow = stack_node.shape[0] * 2
            ns = np.empty(grow, np.int64)
            ns[: stack_node.shape[0]] = stack_node
            stack_node = ns
            ns = np.empty(grow, np.int64)
            ns[: stack_s.shape[0]] = stack_s
            stack_s = ns
            ns = np.empty(grow, np.int64)
            ns[: stack_e.shape[0]] = stack_e
            stack_e = ns
        stack_node[sp] = rc
        stack_s[sp] = mid
        stack_e[sp] = e
        sp += 1
        stack_node[sp] = lc
        stack_s[sp] = s
        stack_e[sp] = mid
        sp += 1

    return (
        bmin[:n_nodes].copy(),
        bmax[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        start[:n_nodes].copy(),
        count[:n_nodes].copy(),
        order,
    )


def _pack(bmin, bmax, left, right, start, count, order, tris):
    boxes = np.ascontiguousarray(np.concatenate([bmin, bmax], axis=1))
    links = np.empty((bmin.shape[0], 2), np.int64)
    leaf = count > 0
    links[:, 0] = np.where(leaf, start, left)
    links[:, 1] = np.where(leaf, count, -right)
    # per ordered slot: v0, e1, e2 of the triangle (zeros for sphere slots)
    edges = np.zeros((order.shape[0], 9))
    is_tri = order < tris.shape[0]
    t = tris[order[is_tri]]
    edges[is_tri, 0:3] = t[:, 0:3]
    edges[is_tri, 3:6] = t[:, 3:6] - t[:, 0:3]
    edges[is_tri, 6:9] = t[:, 6:9] - t[:, 0:3]
    return boxes, np.ascontiguousarray(links), edges


def build_bvh(tris: np.ndarray, sphs: np.ndarray | None = None) -> BVH:
    """Build a BVH over ``tris`` (``(T, 9)`` or ``(T, 3, 3)``) and ``sphs`` (``(S, 4)``: centre, radius)."""
    tris = np.ascontiguousarray(np.asarray(tris, dtype=np.float64).reshape(-1, 9))
    if sphs is None:
        sphs = np.zeros((0, 4))
    sphs = np.ascontiguousarray(np.asarray(sphs, dtype=np.float64).reshape(-1, 4))
    lo, hi = primitive_bounds(tris, sphs)
    bmin, bmax, left, right, start, count, order = _build(
        np.ascontiguousarray(lo), np.ascontiguousarray(hi)
    )
    boxes, links, edges = _pack(bmin, bmax, left, right, start, count, order, tris)
    return BVH(bmin, bmax, left, right, start, count, order, tris, sphs, boxes, links, edges)


@nb.njit(cache=True, inline="always", error_model="numpy")
def _hit_triangle(edges, k, ox, oy, oz, dx, dy, dz):
    e1x = edges[k, 3]
    e1y = edges[k, 4]
    e1z = edges[k, 5]
    e2x = edges[k, 6]
    e2y = edges[k, 7]
    e2z = edges[k, 8]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return np.inf
    inv = 1.0 / det
    sx = ox - edges[k, 0]
    sy = oy - edges[k, 1]
    sz = oz - edges[k, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= T_EPS:
        return np.inf
    return t


@nb.njit(cache=True, inline="always", error_model="numpy")
def _hit_sphere(sphs, i, ox, oy, oz, dx, dy, dz):
    lx = ox - sphs[i, 0]
    ly = oy - sphs[i, 1]
    lz = oz - sphs[i, 2]
    r = sphs[i, 3]
    b = lx * dx + ly * dy + lz * dz
    c = lx * lx + ly * ly + lz * lz - r * r
    disc = b * b - c
    if disc < 0.0:
        return np.inf
    sq = np.sqrt(disc)
    t = -b - sq
    if t > T_EPS:
        return t
    t = -b + sq
    if t > T_EPS:
        return t
    return np.inf


@nb.njit(cache=True, inline="always", error_model="numpy")
def _box_entry(boxes, node, ox, oy, oz, ix, iy, iz, tfar):
    """Entry distance of the ray into a node box, or ``inf`` when it misses before ``tfar``.

    Infinite inverse components (axis-parallel rays) yield (-inf, inf) slabs or empty
    ones; the NaN from ``0 * inf`` at a slab face is discarded by the ordered compares.
    """
    tn = 0.0
    tf = tfar
    a = (boxes[node, 0] - ox) * ix
    b = (boxes[node, 3] - ox) * ix
    lo = min(a, b)
    hi = max(a, b)
    if lo > tn:
        tn = lo
    if hi < tf:
        tf = hi
    a = (boxes[node, 1] - oy) * iy
    b = (boxes[node, 4] - oy) * iy
    lo = min(a, b)
    hi = max(a, b)
    if lo > tn:
        tn = lo
    if hi < tf:
        tf = hi
    a = (boxes[node, 2] - oz) * iz
    b = (boxes[node, 5] - oz) * iz
    lo = min(a, b)
    hi = max(a, b)
    if lo > tn:
        tn = lo
    if hi < tf:
        tf = hi
    if tn > tf:
        return np.inf
    return tn


@nb.njit(cache=True, nogil=True, error_model="numpy")
def trace_kernel(origins, dirs, tmax, boxes, links, order, edges, sphs, n_tri, out_prim, out_t):
    """Nearest hit for every ray; ``out_prim = -1`` on a miss. Ties go to the smaller primitive id."""
    stack = np.empty(STACK_DEPTH, np.int64)
    stack_t = np.empty(STACK_DEPTH)
    n_rays = origins.shape[0]
    empty = order.shape[0] == 0
    for r in range(n_rays):
        ox = origins[r, 0]
        oy = origins[r, 1]
        oz = origins[r, 2]
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        ix = 1.0 / dx
        iy = 1.0 / dy
        iz = 1.0 / dz
        best_t = tmax
        best_p = -1
        sp = 0
        if not empty:
            t_root = _box_entry(boxes, 0, ox, oy, oz, ix, iy, iz, best_t)
            if t_root < np.inf:
                stack[0] = 0
                stack_t[0] = t_root
                sp = 1
        while sp > 0:
            sp -= 1
            if stack_t[sp] > best_t:
                continue
            node = stack[sp]
            a = links[node, 0]
            c = links[node, 1]
            if c > 0:
                for k in range(a, a + c):
                    p = order[k]
                    if p < n_tri:
                        t = _hit_triangle(edges, k, ox, oy, oz, dx, dy, dz)
                    else:
                        t = _hit_sphere(sphs, p - n_tri, ox, oy, oz, dx, dy, dz)
                    if t < best_t or (t == best_t and t < np.inf and (best_p < 0 or p < best_p)):
                        best_t = t
                        best_p = p
            else:
                lc = a
                rc = -c
                tl = _box_entry(boxes, lc, ox, oy, oz, ix, iy, iz, best_t)
                tr = _box_entry(boxes, rc, ox, oy, oz, ix, iy, iz, best_t)
                if tl <= tr:
                    if tr < np.inf:
                        stack[sp] = rc
                        stack_t[sp] = tr
                        sp += 1
                    if tl < np.inf:
                        stack[sp] = lc
                        stack_t[sp] = tl
                        sp += 1
                else:
                    stack[sp] = lc
                    stack_t[sp] = tl
                    sp += 1
                    if tr < np.inf:
                        stack[sp] = rc
                        stack_t[sp] = tr
                        sp += 1
        out_prim[r] = best_p
        out_t[r] = best_t if best_p >= 0 else np.inf


def trace_rays(bvh: BVH, origins: np.ndarray, dirs: np.ndarray, max_range: float) -> tuple[np.ndarray, np.ndarray]:
    """Trace a block of rays. Returns ``(prim_id, t)``; misses carry ``-1`` and ``inf``."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    out_prim = np.empty(n, np.int64)
    out_t = np.empty(n, np.float64)
    trace_kernel(
        origins, dirs, float(max_range), bvh.boxes, bvh.links, bvh.order, bvh.edges,
        bvh.sphs, bvh.tris.shape[0], out_prim, out_t,
    )
    return out_prim, out_t
