"""Triangle meshes, orthographic cameras, and normal-map rendering.

Everything downstream (sampling, fitting, metrics) treats the mesh as living
in the [-0.5, 0.5]^3 box.  Cameras are orthographic: world -> camera is
p' = R p + t, and pixels are u = (p'_x, p'_y) * pixel_scale + image center.
The camera looks along its own -z axis, so larger p'_z means closer to the
camera.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class ObjParseError(ValueError):
    """Raised for malformed OBJ input, with the offending line number."""


class EmptyMeshError(ValueError):
    pass


def _unit_rows(v, eps=1e-20):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(n, eps)


@dataclass
class TriMesh:
    """Indexed triangle mesh with derived area-weighted vertex normals.

    Vertices may be duplicated on purpose (split vertices give flat shading
    across creases); the SDF builder welds coincident positions itself.
    """

    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64
    vertex_normals: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be (V, 3)")
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        if len(self.triangles) and self.triangles.min() < 0:
            raise ValueError("negative triangle index")
        self.vertex_normals = self._derive_vertex_normals()

    def _derive_vertex_normals(self):
        v, t = self.vertices, self.triangles
        vn = np.zeros_like(v)
        if len(t):
            # cross product length = 2 * area, so summing unnormalized face
            # normals is exactly area weighting
            fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
            for k in range(3):
                np.add.at(vn, t[:, k], fn)
        return _unit_rows(vn)

    @property
    def face_normals(self):
        v, t = self.vertices, self.triangles
        return _unit_rows(np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]))

    @property
    def face_areas(self):
        v, t = self.vertices, self.triangles
        return 0.5 * np.linalg.norm(
            np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]), axis=1
        )

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def normalized(self) -> "TriMesh":
        """Center the bounding box at the origin and scale max extent to 1."""
        lo, hi = self.bounds()
        center = 0.5 * (lo + hi)
        extent = (hi - lo).max()
        if extent <= 0:
            raise EmptyMeshError("degenerate mesh: zero extent")
        return TriMesh((self.vertices - center) / extent, self.triangles.copy())

    def welded(self) -> "TriMesh":
        """Merge exactly-coincident vertex positions (topology for SDF/manifold checks)."""
        uniq, inverse = np.unique(self.vertices, axis=0, return_inverse=True)
        return TriMesh(uniq, inverse[self.triangles])

    def is_edge_manifold(self) -> bool:
        """True when every edge of the position-welded mesh borders exactly 2 triangles."""
        t = self.welded().triangles
        if len(t) == 0:
            return False
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges.sort(axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool((counts == 2).all())


def load_obj(path) -> TriMesh:
    """Parse an ASCII OBJ with `v`/`f` records; polygons are fan-triangulated."""
    vertices = []
    faces = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ObjParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError as e:
                    raise ObjParseError(f"{path}:{lineno}: bad vertex: {e}") from None
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise ObjParseError(f"{path}:{lineno}: face needs >= 3 indices")
                try:
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                except ValueError as e:
                    raise ObjParseError(f"{path}:{lineno}: bad face index: {e}") from None
                idx = [i - 1 if i > 0 else len(vertices) + i for i in idx]
                for i in idx:
                    if i < 0 or i >= len(vertices):
                        raise ObjParseError(
                            f"{path}:{lineno}: face index out of range"
                        )
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
            # other record types (vn, vt, o, g, s, usemtl ...) are ignored
    if not vertices or not faces:
        raise EmptyMeshError(f"{path}: no usable geometry")
    return TriMesh(np.array(vertices), np.array(faces))


def save_obj(path, mesh: TriMesh):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %.9g %.9g %.9g\n" % (v[0], v[1], v[2]))
        for t in mesh.triangles:
            fh.write("f %d %d %d\n" % (t[0] + 1, t[1] + 1, t[2] + 1))


@dataclass(frozen=True)
class Camera:
    """Orthographic camera: p' = R p + t, u = p'_{xy} * pixel_scale + center."""

    rotation: np.ndarray  # (3, 3) row-major, orthonormal
    translation: np.ndarray  # (3,)
    pixel_scale: float  # pixels per world unit
    resolution: tuple[int, int]  # (width, height)

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64)
        )
        r = self.rotation
        if r.shape != (3, 3) or not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal (RtR = I within 1e-9)")
        if self.pixel_scale <= 0:
            raise ValueError("pixel_scale must be positive")
        if self.resolution[0] <= 0 or self.resolution[1] <= 0:
            raise ValueError("resolution must be positive")

    @property
    def center(self):
        return np.array([self.resolution[0] / 2.0, self.resolution[1] / 2.0])

    def camera_point(self, p):
        """World point(s) -> camera coordinates p'."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def project(self, p):
        """World point(s) -> pixel position u = (u_x, u_y); may fall off-image."""
        pc = self.camera_point(p)
        return pc[..., :2] * self.pixel_scale + self.center

    def view_dir_world(self):
        """Unit direction from the scene toward the camera (camera +z in world)."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    @staticmethod
    def front_on(pixel_scale=224.0, resolution=(224, 224)) -> "Camera":
        """Identity pose: looks down -z from the +z side of the box."""
        return Camera(np.eye(3), np.zeros(3), pixel_scale, resolution)


def project(cam: Camera, p):
    return cam.project(p)


def camera_point(cam: Camera, p):
    return cam.camera_point(p)


class NormalMap:
    """Per-pixel camera-space unit normals plus a coverage mask.

    data[y, x] indexes pixel (x, y); uncovered pixels hold zeros and a clear
    mask bit.
    """

    def __init__(self, data: np.ndarray, mask: np.ndarray):
        self.data = np.asarray(data, dtype=np.float64)
        self.mask = np.asarray(mask, dtype=bool)
        if self.data.shape[:2] != self.mask.shape or self.data.shape[2] != 3:
            raise ValueError("data must be (H, W, 3) with (H, W) mask")
        covered = self.data[self.mask]
        if len(covered):
            norms = np.linalg.norm(covered, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-5):
                raise ValueError("covered pixels must hold unit normals")

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]


def render_normal_map(mesh: TriMesh, cam: Camera) -> NormalMap:
    """Orthographic rasterization of camera-space normals.

    Rays travel along camera -z through pixel centers; the hit with the
    largest camera z' wins.  Normals are barycentric-interpolated vertex
    normals, re-normalized and expressed in camera space.
    """
    w, h = cam.resolution
    depth = np.full((h, w), -np.inf)
    normal = np.zeros((h, w, 3))
    vc = cam.camera_point(mesh.vertices)  # camera-space vertices
    vn_cam = mesh.vertex_normals @ cam.rotation.T
    # pixel-space xy (pixel centers sit at integer + 0.5)
    vpix = vc[:, :2] * cam.pixel_scale + cam.center

    for tri in mesh.triangles:
        p0, p1, p2 = vpix[tri[0]], vpix[tri[1]], vpix[tri[2]]
        xmin = max(int(np.floor(min(p0[0], p1[0], p2[0]) - 0.5)), 0)
        xmax = min(int(np.ceil(max(p0[0], p1[0], p2[0]) - 0.5)) + 1, w)
        ymin = max(int(np.floor(min(p0[1], p1[1], p2[1]) - 0.5)), 0)
        ymax = min(int(np.ceil(max(p0[1], p1[1], p2[1]) - 0.5)) + 1, h)
        if xmin >= xmax or ymin >= ymax:
            continue
        denom = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if abs(denom) < 1e-14:
            continue  # edge-on triangle
        xs = np.arange(xmin, xmax) + 0.5
        ys = np.arange(ymin, ymax) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        w1 = ((gx - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (gy - p0[1])) / denom
        w2 = ((p1[0] - p0[0]) * (gy - p0[1]) - (gx - p0[0]) * (p1[1] - p0[1])) / denom
        w0 = 1.0 - w1 - w2
        inside = (w0 >= -1e-12) & (w1 >= -1e-12) & (w2 >= -1e-12)
        if not inside.any():
            continue
        z = w0 * vc[tri[0], 2] + w1 * vc[tri[1], 2] + w2 * vc[tri[2], 2]
        sub = depth[ymin:ymax, xmin:xmax]
        upd = inside & (z > sub)
        if not upd.any():
            continue
        n = (
            w0[..., None] * vn_cam[tri[0]]
            + w1[..., None] * vn_cam[tri[1]]
            + w2[..., None] * vn_cam[tri[2]]
        )
        sub[upd] = z[upd]
        normal[ymin:ymax, xmin:xmax][upd] = n[upd]

    mask = np.isfinite(depth)
    normal[mask] = _unit_rows(normal[mask])
    normal[~mask] = 0.0
    return NormalMap(normal, mask)


_NMAP_MAGIC = b"NMAP"


def save_normal_map(path, nmap: NormalMap):
    """Little-endian f32 planar layout: 3 normal channels then the mask channel."""
    with open(path, "wb") as fh:
        fh.write(_NMAP_MAGIC)
        fh.write(struct.pack("<II", nmap.width, nmap.height))
        for c in range(3):
            fh.write(nmap.data[:, :, c].astype("<f4").tobytes())
        fh.write(nmap.mask.astype("<f4").tobytes())


def load_normal_map(path) -> NormalMap:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _NMAP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        w, hgt = struct.unpack("<II", fh.read(8))
        plane = w * hgt
        buf = np.frombuffer(fh.read(4 * plane * 4), dtype="<f4")
        if buf.size != 4 * plane:
            raise ValueError(f"{path}: truncated normal map")
    data = np.stack([buf[c * plane:(c + 1) * plane].reshape(hgt, w) for c in range(3)], axis=-1)
    mask = buf[3 * plane:].reshape(hgt, w) != 0.0
    data = data.astype(np.float64)
    data[mask] = _unit_rows(data[mask])  # f32 round-trip re-normalization
    data[~mask] = 0.0
    return NormalMap(data, mask)
