"""Exact signed distance queries against a watertight triangle mesh.

Distance is brute-force exact (closest point over all triangles, with a
bounding-box reject driven by the running best).  The sign comes from the
angle-weighted pseudo-normal of the closest feature (face, edge, or vertex),
which is exact for watertight meshes.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .geometry import TriMesh, _unit_rows

# region codes emitted by the kernel
_R_FACE = 0
_R_EDGE01 = 1
_R_EDGE12 = 2
_R_EDGE20 = 3
_R_VERT0 = 4
_R_VERT1 = 5
_R_VERT2 = 6


@njit(cache=True, parallel=True)
def _closest_kernel(pts, v0, e0, e1, bmin, bmax):
    n = pts.shape[0]
    dist = np.empty(n)
    tri_idx = np.empty(n, dtype=np.int64)
    region = np.empty(n, dtype=np.int64)
    cx = np.empty(n)
    cy = np.empty(n)
    cz = np.empty(n)
    nt = v0.shape[0]
    for i in prange(n):
        px = pts[i, 0]
        py = pts[i, 1]
        pz = pts[i, 2]
        best = 1e30
        bt = -1
        breg = 0
        bx = 0.0
        by = 0.0
        bz = 0.0
        for t in range(nt):
            # cheap reject: squared distance to the triangle's AABB
            dx = max(bmin[t, 0] - px, 0.0, px - bmax[t, 0])
            dy = max(bmin[t, 1] - py, 0.0, py - bmax[t, 1])
            dz = max(bmin[t, 2] - pz, 0.0, pz - bmax[t, 2])
            if dx * dx + dy * dy + dz * dz >= best:
                continue
            ax = v0[t, 0]
            ay = v0[t, 1]
            az = v0[t, 2]
            abx = e0[t, 0]
            aby = e0[t, 1]
            abz = e0[t, 2]
            acx = e1[t, 0]
            acy = e1[t, 1]
            acz = e1[t, 2]
            apx = px - ax
            apy = py - ay
            apz = pz - az
            d1 = abx * apx + aby * apy + abz * apz
            d2 = acx * apx + acy * apy + acz * apz
            if d1 <= 0.0 and d2 <= 0.0:
                qx = ax
                qy = ay
                qz = az
                reg = _R_VERT0
            else:
                bpx = apx - abx
                bpy = apy - aby
                bpz = apz - abz
                d3 = abx * bpx + aby * bpy + abz * bpz
                d4 = acx * bpx + acy * bpy + acz * bpz
                cpx = apx - acx
                cpy = apy - acy
                cpz = apz - acz
                d5 = abx * cpx + aby * cpy + abz * cpz
                d6 = acx * cpx + acy * cpy + acz * cpz
                vc = d1 * d4 - d3 * d2
                vb = d5 * d2 - d1 * d6
                va = d3 * d6 - d5 * d4
                if d3 >= 0.0 and d4 <= d3:
                    qx = ax + abx
                    qy = ay + aby
                    qz = az + abz
                    reg = _R_VERT1
                elif d6 >= 0.0 and d5 <= d6:
                    qx = ax + acx
                    qy = ay + acy
                    qz = az + acz
                    reg = _R_VERT2
                elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                    s = d1 / (d1 - d3)
                    qx = ax + s * abx
                    qy = ay + s * aby
                    qz = az + s * abz
                    reg = _R_EDGE01
                elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                    s = d2 / (d2 - d6)
                    qx = ax + s * acx
                    qy = ay + s * acy
                    qz = az + s * acz
                    reg = _R_EDGE20
                elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                    s = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                    qx = ax + abx + s * (acx - abx)
                    qy = ay + aby + s * (acy - aby)
                    qz = az + abz + s * (acz - abz)
                    reg = _R_EDGE12
                else:
                    den = 1.0 / (va + vb + vc)
                    s = vb * den
                    w = vc * den
                    qx = ax + s * abx + w * acx
                    qy = ay + s * aby + w * acy
                    qz = az + s * abz + w * acz
                    reg = _R_FACE
            ddx = px - qx
            ddy = py - qy
            ddz = pz - qz
            d = ddx * ddx + ddy * ddy + ddz * ddz
            if d < best:
                best = d
                bt = t
                breg = reg
                bx = qx
                by = qy
                bz = qz
        dist[i] = np.sqrt(best)
        tri_idx[i] = bt
        region[i] = breg
        cx[i] = bx
        cy[i] = by
        cz[i] = bz
    return dist, tri_idx, region, cx, cy, cz


class MeshSdf:
    """Signed distance oracle for one (watertight) mesh.

    Construction welds coincident vertices, drops degenerate triangles, and
    precomputes face/edge/vertex pseudo-normals.  Queries are thread-safe.
    """

    def __init__(self, mesh: TriMesh):
        m = mesh.welded()
        v, t = m.vertices, m.triangles
        cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        area2 = np.linalg.norm(cross, axis=1)
        keep = area2 > 1e-16
        t = t[keep]
        if len(t) == 0:
            raise ValueError("mesh has no non-degenerate triangles")
        self.vertices = v
        self.triangles = t
        fn = _unit_rows(cross[keep])
        self.face_normals = fn

        # vertex pseudo-normals: incident-angle weighted face normals
        vn = np.zeros_like(v)
        for k in range(3):
            a = v[t[:, k]]
            b = v[t[:, (k + 1) % 3]]
            c = v[t[:, (k + 2) % 3]]
            u1 = _unit_rows(b - a)
            u2 = _unit_rows(c - a)
            ang = np.arccos(np.clip((u1 * u2).sum(axis=1), -1.0, 1.0))
            np.add.at(vn, t[:, k], fn * ang[:, None])
        self.vertex_pseudo_normals = vn  # unnormalized is fine for sign tests

        # edge pseudo-normals: sum of the (two) incident face normals,
        # stored per (triangle, local edge) via a shared-edge dictionary
        edge_accum: dict[tuple[int, int], np.ndarray] = {}
        for ti in range(len(t)):
            for k in range(3):
                key = tuple(sorted((int(t[ti, k]), int(t[ti, (k + 1) % 3]))))
                if key in edge_accum:
                    edge_accum[key] = edge_accum[key] + fn[ti]
                else:
                    edge_accum[key] = fn[ti].copy()
        en = np.empty((len(t), 3, 3))
        for ti in range(len(t)):
            for k in range(3):
                key = tuple(sorted((int(t[ti, k]), int(t[ti, (k + 1) % 3]))))
                en[ti, k] = edge_accum[key]
        self.edge_pseudo_normals = en

        tv = v[t]
        self._v0 = np.ascontiguousarray(tv[:, 0])
        self._e0 = np.ascontiguousarray(tv[:, 1] - tv[:, 0])
        self._e1 = np.ascontiguousarray(tv[:, 2] - tv[:, 0])
        self._bmin = np.ascontiguousarray(tv.min(axis=1))
        self._bmax = np.ascontiguousarray(tv.max(axis=1))

    def __call__(self, points):
        return self.query(points)

    def query(self, points):
        """Signed distance at one point or an (N, 3) batch."""
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1
        p = np.ascontiguousarray(np.atleast_2d(p))
        dist, ti, region, cx, cy, cz = _closest_kernel(
            p, self._v0, self._e0, self._e1, self._bmin, self._bmax
        )
        closest = np.stack([cx, cy, cz], axis=1)
        pseudo = np.empty_like(closest)
        face = region == _R_FACE
        pseudo[face] = self.face_normals[ti[face]]
        for reg, k in ((_R_EDGE01, 0), (_R_EDGE12, 1), (_R_EDGE20, 2)):
            sel = region == reg
            pseudo[sel] = self.edge_pseudo_normals[ti[sel], k]
        for reg, k in ((_R_VERT0, 0), (_R_VERT1, 1), (_R_VERT2, 2)):
            sel = region == reg
            pseudo[sel] = self.vertex_pseudo_normals[self.triangles[ti[sel], k]]
        sign = np.where(((p - closest) * pseudo).sum(axis=1) >= 0.0, 1.0, -1.0)
        out = sign * dist
        return float(out[0]) if single else out

    def gradient(self, points, h=1e-4):
        """Central-difference gradient of the signed distance."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        g = np.empty_like(p)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            g[:, axis] = (self.query(p + step) - self.query(p - step)) / (2 * h)
        return g if np.asarray(points).ndim > 1 else g[0]
