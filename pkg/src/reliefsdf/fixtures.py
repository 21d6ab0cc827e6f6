"""Canonical watertight test shapes, all inside the [-0.5, 0.5]^3 box.

The plate fixtures carry their surface relief as a height field on the +z
face, which is the side the default front-on camera sees.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import TriMesh

BUMP_AMPLITUDE = 0.02
BUMP_FREQ = 8 * math.pi


def bump_height(x, y):
    """Sinusoidal relief of the bumpy plate's front face."""
    return BUMP_AMPLITUDE * np.sin(BUMP_FREQ * x) * np.sin(BUMP_FREQ * y)


def icosphere(radius=0.4, subdivisions=4) -> TriMesh:
    """Icosahedron subdivided and projected to the sphere; shared vertices."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) for v in verts]
    verts = [v / np.linalg.norm(v) for v in verts]
    cache: dict[tuple[int, int], int] = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            m = verts[a] + verts[b]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    return TriMesh(np.array(verts) * radius, np.array(faces))


def box(half_extents=(0.25, 0.25, 0.25), center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box with split vertices (flat per-face normals)."""
    hx, hy, hz = half_extents
    c = np.asarray(center, dtype=np.float64)
    verts = []
    tris = []
    # face -> (axis, sign); corners wound CCW seen from outside
    for axis, sign in ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)):
        u_axis, v_axis = [(1, 2), (2, 0), (0, 1)][axis]
        h = (hx, hy, hz)
        base = len(verts)
        for du, dv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            p = np.zeros(3)
            p[axis] = sign * h[axis]
            p[u_axis] = du * h[u_axis]
            p[v_axis] = dv * h[v_axis]
            verts.append(c + p)
        if sign > 0:
            tris += [(base, base + 1, base + 2), (base, base + 2, base + 3)]
        else:
            tris += [(base, base + 2, base + 1), (base, base + 3, base + 2)]
    return TriMesh(np.array(verts), np.array(tris))


def cube(half_extent=0.25) -> TriMesh:
    return box((half_extent, half_extent, half_extent))


def thin_slab_beside_block() -> TriMesh:
    """A 0.02-thick slab next to a 0.3-thick block (two closed components)."""
    block = box((0.15, 0.4, 0.4), center=(-0.2, 0.0, 0.0))
    slab = box((0.01, 0.4, 0.4), center=(0.21, 0.0, 0.0))
    verts = np.concatenate([block.vertices, slab.vertices])
    tris = np.concatenate([block.triangles, slab.triangles + len(block.vertices)])
    return TriMesh(verts, tris)


def _plate(height_fn, half_xy=0.4, z_back=-0.05, z_front=0.05, n=48) -> TriMesh:
    """Closed plate: gridded front face z = z_front + h(x, y), flat back, side walls.

    Front and back grids keep their own vertices (split from the walls) so the
    front face's derived normals are pure height-field normals.
    """
    xs = np.linspace(-half_xy, half_xy, n + 1)
    ys = np.linspace(-half_xy, half_xy, n + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    front_z = z_front + height_fn(gx, gy)

    verts = []
    tris = []

    def grid_patch(zvals, flip):
        base = len(verts)
        for i in range(n + 1):
            for j in range(n + 1):
                verts.append((xs[i], ys[j], zvals[i, j]))
        for i in range(n):
            for j in range(n):
                a = base + i * (n + 1) + j
                b = a + (n + 1)
                if flip:
                    tris.extend([(a, a + 1, b), (b, a + 1, b + 1)])
                else:
                    tris.extend([(a, b, a + 1), (b, b + 1, a + 1)])

    grid_patch(front_z, flip=False)  # +z, outward
    grid_patch(np.full_like(front_z, z_back), flip=True)  # -z, outward

    # walls: ruled quads between matching front/back border vertices
    def border_indices():
        idx = []
        for i in range(n):  # y = -half (j = 0), runs +x
            idx.append(((i, 0), (i + 1, 0)))
        for j in range(n):  # x = +half, runs +y
            idx.append(((n, j), (n, j + 1)))
        for i in range(n):  # y = +half, runs -x
            idx.append(((n - i, n), (n - i - 1, n)))
        for j in range(n):  # x = -half, runs -y
            idx.append(((0, n - j), (0, n - j - 1)))
        return idx

    for (i0, j0), (i1, j1) in border_indices():
        base = len(verts)
        verts.append((xs[i0], ys[j0], front_z[i0, j0]))
        verts.append((xs[i1], ys[j1], front_z[i1, j1]))
        verts.append((xs[i1], ys[j1], z_back))
        verts.append((xs[i0], ys[j0], z_back))
        tris.extend([(base, base + 2, base + 1), (base, base + 3, base + 2)])

    return TriMesh(np.array(verts, dtype=np.float64), np.array(tris))


def flat_plate(n=48) -> TriMesh:
    return _plate(lambda x, y: np.zeros_like(x), n=n)


def bumpy_plate(n=48) -> TriMesh:
    return _plate(bump_height, n=n)


def beveled_cube(half_extent=0.25, bevel=0.02) -> TriMesh:
    """Cube with chamfered edges, built as the convex hull of the 24 offset corners."""
    a, b = half_extent, half_extent - bevel
    pts = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                pts.append((sx * a, sy * b, sz * b))
                pts.append((sx * b, sy * a, sz * b))
                pts.append((sx * b, sy * b, sz * a))
    pts = np.array(pts)
    hull = ConvexHull(pts)
    tris = hull.simplices.copy()
    # qhull does not promise consistent orientation; flip inward triangles
    v = pts[tris]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    centroid = v.mean(axis=1)
    flip = (n * centroid).sum(axis=1) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return TriMesh(pts, tris)


FIXTURES = {
    "sphere": icosphere,
    "cube": cube,
    "thin_slab": thin_slab_beside_block,
    "flat_plate": flat_plate,
    "bumpy_plate": bumpy_plate,
    "beveled_cube": beveled_cube,
}
