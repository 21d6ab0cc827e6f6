"""The disentangled representation: trilinear base grid, bilinear front/back
displacement maps, front classification, and fusion.

The base grid lives on [-0.5, 0.5]^3 and is deliberately low-resolution (the
coarse shape stays smooth by construction).  Displacement maps live on the
camera's pixel rectangle and are queried at projected pixel positions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import Camera, TriMesh
from .sdf import MeshSdf

DEFAULT_DELTA = 0.05
DEFAULT_BASE_RESOLUTION = 16
DEFAULT_MAP_RESOLUTION = 64


class BaseField:
    """Dense scalar lattice over the box, trilinear interpolation between nodes."""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 2:
            raise ValueError("base grid must be 3D with resolution >= 2")
        self.values = values

    @classmethod
    def constant(cls, value, resolution=DEFAULT_BASE_RESOLUTION):
        return cls(np.full((resolution,) * 3, float(value)))

    @classmethod
    def from_function(cls, fn, resolution=DEFAULT_BASE_RESOLUTION):
        xs = np.linspace(-0.5, 0.5, resolution)
        gx, gy, gz = np.meshgrid(xs, xs, xs, indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        return cls(np.asarray(fn(pts)).reshape((resolution,) * 3))

    def interp_coeffs(self, points):
        """Trilinear support of each query: (indices (n, 8, 3), weights (n, 8)).

        Queries outside the box clamp to the boundary cells.
        """
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out_idx = np.empty((len(p), 8, 3), dtype=np.int64)
        out_w = np.empty((len(p), 8))
        shape = self.values.shape
        cell = np.empty((len(p), 3), dtype=np.int64)
        frac = np.empty((len(p), 3))
        for a in range(3):
            t = (p[:, a] + 0.5) * (shape[a] - 1)
            c = np.clip(np.floor(t).astype(np.int64), 0, shape[a] - 2)
            cell[:, a] = c
            frac[:, a] = np.clip(t - c, 0.0, 1.0)
        k = 0
        for dx in (0, 1):
            wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
            for dy in (0, 1):
                wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
                for dz in (0, 1):
                    wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                    out_idx[:, k, 0] = cell[:, 0] + dx
                    out_idx[:, k, 1] = cell[:, 1] + dy
                    out_idx[:, k, 2] = cell[:, 2] + dz
                    out_w[:, k] = wx * wy * wz
                    k += 1
        return out_idx, out_w

    def query(self, points):
        idx, w = self.interp_coeffs(points)
        vals = (self.values[idx[..., 0], idx[..., 1], idx[..., 2]] * w).sum(axis=1)
        return float(vals[0]) if np.asarray(points).ndim == 1 else vals

    def gradient(self, points):
        """Analytic spatial gradient of the trilinear interpolant (per cell)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        shape = self.values.shape
        g = np.empty_like(p)
        # differentiate the weight product along each axis in turn
        idx, _ = self.interp_coeffs(p)
        cell = idx[:, 0, :]
        frac = np.empty((len(p), 3))
        scale = np.empty(3)
        for a in range(3):
            t = (p[:, a] + 0.5) * (shape[a] - 1)
            frac[:, a] = np.clip(t - cell[:, a], 0.0, 1.0)
            scale[a] = shape[a] - 1
        for axis in range(3):
            acc = np.zeros(len(p))
            for dx in (0, 1):
                for dy in (0, 1):
                    for dz in (0, 1):
                        d = (dx, dy, dz)
                        w = np.ones(len(p))
                        for a in range(3):
                            if a == axis:
                                w = w * (scale[a] if d[a] else -scale[a])
                            else:
                                w = w * (frac[:, a] if d[a] else 1.0 - frac[:, a])
                        acc += w * self.values[
                            cell[:, 0] + dx, cell[:, 1] + dy, cell[:, 2] + dz
                        ]
            g[:, axis] = acc
        return g if np.asarray(points).ndim > 1 else g[0]


class DisplacementMap:
    """w x h scalar image over the camera pixel rectangle, bilinear queries.

    Map texel (i, j) covers an sx-by-sy block of image pixels and its center
    sits at ((i + 0.5) sx, (j + 0.5) sy) in image pixel coordinates.  Queries
    clamp to the border texel centers.
    """

    def __init__(self, values: np.ndarray, image_size: tuple[int, int]):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("displacement map must be 2D")
        self.values = values  # indexed [i, j] = [x texel, y texel]
        self.image_size = (int(image_size[0]), int(image_size[1]))

    @classmethod
    def zeros(cls, cam: Camera, resolution=DEFAULT_MAP_RESOLUTION):
        return cls(np.zeros((resolution, resolution)), cam.resolution)

    @property
    def texel_size(self):
        w, h = self.values.shape
        return self.image_size[0] / w, self.image_size[1] / h

    def interp_coeffs(self, u):
        """Bilinear support: (indices (n, 4, 2), weights (n, 4)), border-clamped."""
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        w, h = self.values.shape
        sx, sy = self.texel_size
        tx = u[:, 0] / sx - 0.5
        ty = u[:, 1] / sy - 0.5
        ix = np.clip(np.floor(tx).astype(np.int64), 0, w - 2) if w > 1 else np.zeros(len(u), np.int64)
        iy = np.clip(np.floor(ty).astype(np.int64), 0, h - 2) if h > 1 else np.zeros(len(u), np.int64)
        fx = np.clip(tx - ix, 0.0, 1.0)
        fy = np.clip(ty - iy, 0.0, 1.0)
        idx = np.empty((len(u), 4, 2), dtype=np.int64)
        wgt = np.empty((len(u), 4))
        k = 0
        for dx in (0, 1):
            wx = fx if dx else 1.0 - fx
            for dy in (0, 1):
                wy = fy if dy else 1.0 - fy
                idx[:, k, 0] = ix + dx
                idx[:, k, 1] = iy + dy
                wgt[:, k] = wx * wy
                k += 1
        return idx, wgt

    def query(self, u):
        idx, w = self.interp_coeffs(u)
        vals = (self.values[idx[..., 0], idx[..., 1]] * w).sum(axis=1)
        return float(vals[0]) if np.asarray(u).ndim == 1 else vals


@dataclass
class DisentangledField:
    """Base grid + front/back displacement maps sharing one camera."""

    base: BaseField
    front: DisplacementMap
    back: DisplacementMap
    camera: Camera
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        for m in (self.front, self.back):
            if tuple(m.image_size) != tuple(self.camera.resolution):
                raise ValueError("displacement map image size must match the camera")


def classify_front(p, sdf_oracle, cam: Camera, delta: float, h: float = 1e-4,
                   cos_threshold: float = 0.0):
    """True where |sdf| < delta and the central-difference SDF gradient points
    toward the camera (alignment with the world direction from scene to camera
    exceeds cos_threshold)."""
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    vals = np.asarray(sdf_oracle(pts), dtype=np.float64)
    g = np.empty_like(pts)
    for a in range(3):
        step = np.zeros(3)
        step[a] = h
        g[:, a] = (np.asarray(sdf_oracle(pts + step)) - np.asarray(sdf_oracle(pts - step))) / (2 * h)
    norm = np.linalg.norm(g, axis=1)
    gn = g / np.maximum(norm, 1e-20)[:, None]
    toward_cam = cam.view_dir_world()
    front = (np.abs(vals) < delta) & (gn @ toward_cam > cos_threshold)
    return bool(front[0]) if np.asarray(p).ndim == 1 else front


def fuse(dfield: DisentangledField, p, is_front):
    """Base value plus the front or back displacement at the projected pixel."""
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    u = dfield.camera.project(pts)
    base = dfield.base.query(pts)
    front_mask = np.broadcast_to(np.asarray(is_front, dtype=bool), (len(pts),))
    disp = np.where(front_mask, dfield.front.query(u), dfield.back.query(u))
    out = np.atleast_1d(base) + disp
    return float(out[0]) if np.asarray(p).ndim == 1 else out


def rasterize_residual(mesh: TriMesh, base: BaseField, cam: Camera,
                       resolution=DEFAULT_MAP_RESOLUTION) -> DisplacementMap:
    """Oracle front displacement map: -f_B at each texel's visible surface point.

    On the surface the ground truth vanishes, so the exact front residual at a
    covered texel is 0 - f_B(hit point).  Uncovered texels store 0.
    """
    hits, hit_mask = _raycast_texel_centers(mesh, cam, resolution)
    values = np.zeros((resolution, resolution))
    if hit_mask.any():
        values[hit_mask] = -base.query(hits[hit_mask])
    return DisplacementMap(values, cam.resolution)


def _raycast_texel_centers(mesh: TriMesh, cam: Camera, resolution):
    """Front-surface world hit point for each texel center (orthographic rays)."""
    w_img, h_img = cam.resolution
    sx, sy = w_img / resolution, h_img / resolution
    depth = np.full((resolution, resolution), -np.inf)
    hits = np.zeros((resolution, resolution, 3))
    vc = cam.camera_point(mesh.vertices)
    vpix = vc[:, :2] * cam.pixel_scale + cam.center
    for tri in mesh.triangles:
        p0, p1, p2 = vpix[tri[0]], vpix[tri[1]], vpix[tri[2]]
        ixmin = max(int(np.floor(min(p0[0], p1[0], p2[0]) / sx - 0.5)), 0)
        ixmax = min(int(np.ceil(max(p0[0], p1[0], p2[0]) / sx - 0.5)) + 1, resolution)
        iymin = max(int(np.floor(min(p0[1], p1[1], p2[1]) / sy - 0.5)), 0)
        iymax = min(int(np.ceil(max(p0[1], p1[1], p2[1]) / sy - 0.5)) + 1, resolution)
        if ixmin >= ixmax or iymin >= iymax:
            continue
        denom = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if abs(denom) < 1e-14:
            continue
        gx, gy = np.meshgrid(
            (np.arange(ixmin, ixmax) + 0.5) * sx,
            (np.arange(iymin, iymax) + 0.5) * sy,
            indexing="ij",
        )
        w1 = ((gx - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (gy - p0[1])) / denom
        w2 = ((p1[0] - p0[0]) * (gy - p0[1]) - (gx - p0[0]) * (p1[1] - p0[1])) / denom
        w0 = 1.0 - w1 - w2
        inside = (w0 >= -1e-12) & (w1 >= -1e-12) & (w2 >= -1e-12)
        if not inside.any():
            continue
        wv = mesh.vertices[tri]
        world = w0[..., None] * wv[0] + w1[..., None] * wv[1] + w2[..., None] * wv[2]
        z = w0 * vc[tri[0], 2] + w1 * vc[tri[1], 2] + w2 * vc[tri[2], 2]
        sub = depth[ixmin:ixmax, iymin:iymax]
        upd = inside & (z > sub)
        sub[upd] = z[upd]
        hits[ixmin:ixmax, iymin:iymax][upd] = world[upd]
    return hits, np.isfinite(depth)


_FIELD_MAGIC = b"D2IM"


def save_field(path, dfield: DisentangledField):
    cam = dfield.camera
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(struct.pack("<III", *dfield.base.values.shape))
        fh.write(dfield.base.values.astype("<f4").tobytes())
        for m in (dfield.front, dfield.back):
            fh.write(struct.pack("<II", *m.values.shape))
            fh.write(m.values.astype("<f4").tobytes())
        fh.write(cam.rotation.astype("<f4").tobytes())
        fh.write(cam.translation.astype("<f4").tobytes())
        fh.write(struct.pack("<f", cam.pixel_scale))
        fh.write(struct.pack("<II", *cam.resolution))
        fh.write(struct.pack("<f", dfield.delta))


def load_field(path) -> DisentangledField:
    with open(path, "rb") as fh:
        if fh.read(4) != _FIELD_MAGIC:
            raise ValueError(f"{path}: bad magic")
        bx, by, bz = struct.unpack("<III", fh.read(12))
        base = np.frombuffer(fh.read(4 * bx * by * bz), dtype="<f4").reshape(bx, by, bz)
        maps = []
        for _ in range(2):
            mw, mh = struct.unpack("<II", fh.read(8))
            maps.append(np.frombuffer(fh.read(4 * mw * mh), dtype="<f4").reshape(mw, mh))
        rot = np.frombuffer(fh.read(36), dtype="<f4").reshape(3, 3).astype(np.float64)
        tr = np.frombuffer(fh.read(12), dtype="<f4").astype(np.float64)
        (scale,) = struct.unpack("<f", fh.read(4))
        rw, rh = struct.unpack("<II", fh.read(8))
        (delta,) = struct.unpack("<f", fh.read(4))
    # f32 storage can break strict orthonormality; re-orthonormalize
    uu, _, vt = np.linalg.svd(rot)
    cam = Camera(uu @ vt, tr, float(scale), (rw, rh))
    return DisentangledField(
        base=BaseField(base.astype(np.float64)),
        front=DisplacementMap(maps[0].astype(np.float64), (rw, rh)),
        back=DisplacementMap(maps[1].astype(np.float64), (rw, rh)),
        camera=cam,
        delta=float(delta),
    )


def self_classified_values(dfield: DisentangledField, points, h: float = 1e-3,
                           use_back: bool = True, return_front: bool = False):
    """Fused values with front/back chosen from the fitted field's own gradients.

    A first pass branches on the analytic base-field gradient; the final
    classification uses central differences of that first-pass field, matching
    the test-time rule (no ground-truth oracle available).  With
    return_front=True the (values, front_mask) pair is returned.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    toward_cam = dfield.camera.view_dir_world()

    def pass1(q):
        g = dfield.base.gradient(q)
        gn = g / np.maximum(np.linalg.norm(g, axis=1), 1e-20)[:, None]
        base = dfield.base.query(q)
        front0 = gn @ toward_cam > 0.0
        u = dfield.camera.project(q)
        disp = np.where(front0, dfield.front.query(u),
                        dfield.back.query(u) if use_back else 0.0)
        v0 = base + disp
        in_band = np.abs(v0) < dfield.delta
        front0 = front0 & in_band
        disp = np.where(front0, dfield.front.query(u),
                        dfield.back.query(u) if use_back else 0.0)
        return base + disp

    v0 = pass1(pts)
    g = np.empty_like(pts)
    for a in range(3):
        step = np.zeros(3)
        step[a] = h
        g[:, a] = (pass1(pts + step) - pass1(pts - step)) / (2 * h)
    gn = g / np.maximum(np.linalg.norm(g, axis=1), 1e-20)[:, None]
    front = (np.abs(v0) < dfield.delta) & (gn @ toward_cam > 0.0)
    u = dfield.camera.project(pts)
    disp = np.where(front, dfield.front.query(u),
                    dfield.back.query(u) if use_back else 0.0)
    out = dfield.base.query(pts) + disp
    if np.asarray(points).ndim > 1:
        return (out, front) if return_front else out
    return (float(out[0]), bool(front[0])) if return_front else float(out[0])
