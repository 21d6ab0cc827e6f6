"""Zero-level-set extraction on a dense grid via standard marching cubes."""

from __future__ import annotations

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .geometry import TriMesh

DEFAULT_EXTRACTION_RESOLUTION = 128

# exact-zero corner values are nudged positive so every cell case is sign-generic
_ZERO_NUDGE = 1e-9


class FieldGrid:
    """n^3 field samples at cell corners over [-0.5, 0.5]^3."""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 2:
            raise ValueError("grid must be 3D with resolution >= 2")
        if not np.isfinite(values).all():
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ValueError(f"non-finite field value at lattice point {tuple(bad)}")
        self.values = values

    @property
    def resolution(self):
        return self.values.shape[0]

    def lattice_axis(self, n=None):
        return np.linspace(-0.5, 0.5, n or self.resolution)


def sample_field(field_fn, n: int = DEFAULT_EXTRACTION_RESOLUTION) -> FieldGrid:
    """Evaluate a scalar field (callable on (N, 3) points) on the n^3 lattice."""
    if n < 2:
        raise ValueError("resolution must be >= 2")
    xs = np.linspace(-0.5, 0.5, n)
    gx, gy, gz = np.meshgrid(xs, xs, xs, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    vals = np.asarray(field_fn(pts), dtype=np.float64).reshape(n, n, n)
    return FieldGrid(vals)


def marching_cubes(grid: FieldGrid):
    """Standard 256-case marching cubes with linear edge interpolation.

    Returns (mesh, empty_flag); vertices shared across cells are welded by a
    global lattice-edge key, and triangles are wound so normals point toward
    positive field values (outward for a signed distance field).
    """
    v = grid.values.copy()
    v[v == 0.0] = _ZERO_NUDGE
    n = v.shape[0]
    xs = grid.lattice_axis()

    corner_vals = [v[dx:n - 1 + dx, dy:n - 1 + dy, dz:n - 1 + dz] for dx, dy, dz in CORNER_OFFSETS]
    cube_index = np.zeros((n - 1,) * 3, dtype=np.int32)
    for k, cv in enumerate(corner_vals):
        cube_index |= (cv < 0.0).astype(np.int32) << k

    active = np.argwhere((cube_index != 0) & (cube_index != 255))
    if len(active) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), True

    ci = cube_index[active[:, 0], active[:, 1], active[:, 2]]

    # global edge key: an edge is (lattice point, axis); axis 0 = x, 1 = y, 2 = z
    def edge_key(cells, e):
        a, b = EDGE_CORNERS[e]
        oa = np.array(CORNER_OFFSETS[a])
        ob = np.array(CORNER_OFFSETS[b])
        axis = int(np.argmax(oa != ob))
        origin = cells + np.minimum(oa, ob)
        key = (origin[:, 0] * n + origin[:, 1]) * n + origin[:, 2]
        return key * 3 + axis, origin, axis, a, b

    # interpolate a vertex on every edge needed anywhere, dedup by key
    vert_index: dict[int, int] = {}
    verts: list[np.ndarray] = []
    cell_edge_vertex = np.full((len(active), 12), -1, dtype=np.int64)
    edge_bits = np.array(EDGE_TABLE, dtype=np.int32)[ci]
    for e in range(12):
        need = (edge_bits >> e) & 1 != 0
        if not need.any():
            continue
        keys, origin, axis, a, b = edge_key(active[need], e)
        va = corner_vals[a][active[need, 0], active[need, 1], active[need, 2]]
        vb = corner_vals[b][active[need, 0], active[need, 1], active[need, 2]]
        t = -va / (vb - va)
        pos = xs[origin].astype(np.float64)
        step = 1.0 / (n - 1)
        pos[:, axis] += t * step
        rows = np.flatnonzero(need)
        for r, key, p in zip(rows, keys, pos):
            idx = vert_index.get(key)
            if idx is None:
                idx = len(verts)
                vert_index[key] = idx
                verts.append(p)
            cell_edge_vertex[r, e] = idx

    tris = []
    for r in range(len(active)):
        table = TRI_TABLE[ci[r]]
        row = cell_edge_vertex[r]
        for k in range(0, len(table), 3):
            # table winding faces the negative side; flip toward positive field
            tris.append((row[table[k]], row[table[k + 2]], row[table[k + 1]]))

    mesh = TriMesh(np.array(verts), np.array(tris, dtype=np.int64))
    return mesh, False
