"""Projected-gradient maps, the ground-truth pixel-domain Laplacian, and the
three loss terms.

All pixel-domain derivatives are expressed per image pixel: the ground-truth
Laplacian uses central differences on the pixel grid (spacing 1), and the
map Laplacian uses the 5-point stencil over neighboring texels divided by
the squared texel size.  The ground-truth Laplacian is the discrete
divergence of the projected gradient N' = (N_x, N_y) / pixel_scale, which for
the orthographic camera is definitionally the Laplacian of the projected SDF.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .fields import DisentangledField, BaseField, DisplacementMap
from .geometry import Camera, NormalMap
from .sampling import SampleBatch


class ProjectedGradientMap:
    """Per-pixel 2-vector N'(u); valid only where the source normal map covers."""

    def __init__(self, data: np.ndarray, mask: np.ndarray):
        self.data = np.asarray(data, dtype=np.float64)  # (H, W, 2)
        self.mask = np.asarray(mask, dtype=bool)
        if self.data.shape[:2] != self.mask.shape or self.data.shape[2] != 2:
            raise ValueError("data must be (H, W, 2) with (H, W) mask")

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]


class GtLaplacianMap:
    """Per-pixel scalar l(u); mask eroded by one pixel for stencil support."""

    def __init__(self, data: np.ndarray, mask: np.ndarray):
        self.data = np.asarray(data, dtype=np.float64)
        self.mask = np.asarray(mask, dtype=bool)
        if self.data.shape != self.mask.shape:
            raise ValueError("data and mask shapes differ")
        if not np.isfinite(self.data[self.mask]).all():
            raise ValueError("non-finite Laplacian on a masked pixel")

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]


@dataclass
class LossReport:
    l_base: float
    l_sdf: float
    l_lap: float
    lambda_lap: float = 1.0
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.l_base + self.l_sdf + self.lambda_lap * self.l_lap


def projected_gradient(nmap: NormalMap, cam: Camera) -> ProjectedGradientMap:
    """N'(u) = (N_x, N_y) / pixel_scale; the orthographic Jacobian dp'/du is
    the constant diag(1/pixel_scale)."""
    data = nmap.data[:, :, :2] / cam.pixel_scale
    data = np.where(nmap.mask[:, :, None], data, 0.0)
    return ProjectedGradientMap(data, nmap.mask.copy())


def gt_laplacian(pgrad: ProjectedGradientMap) -> GtLaplacianMap:
    """l(u) = dN'_x/du_x + dN'_y/du_y by central differences on the pixel grid."""
    nx = pgrad.data[:, :, 0]
    ny = pgrad.data[:, :, 1]
    h, w = nx.shape
    lap = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    if h >= 3 and w >= 3:
        # data[y, x]: u_x varies along axis 1, u_y along axis 0
        dnx = (nx[1:-1, 2:] - nx[1:-1, :-2]) / 2.0
        dny = (ny[2:, 1:-1] - ny[:-2, 1:-1]) / 2.0
        lap[1:-1, 1:-1] = dnx + dny
        m = pgrad.mask
        mask[1:-1, 1:-1] = (
            m[1:-1, 1:-1] & m[1:-1, 2:] & m[1:-1, :-2] & m[2:, 1:-1] & m[:-2, 1:-1]
        )
    lap[~mask] = 0.0
    return GtLaplacianMap(lap, mask)


def sample_gt_laplacian(gtl: GtLaplacianMap, u):
    """Bilinear sample of l at continuous pixel positions, with validity flags.

    A sample is valid only when all four supporting pixels are masked.
    Pixel (x, y)'s center sits at image position (x + 0.5, y + 0.5).
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    h, w = gtl.data.shape
    tx = u[:, 0] - 0.5
    ty = u[:, 1] - 0.5
    ix = np.clip(np.floor(tx).astype(np.int64), 0, w - 2)
    iy = np.clip(np.floor(ty).astype(np.int64), 0, h - 2)
    inside = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    fx = tx - ix
    fy = ty - iy
    vals = (
        (1 - fx) * (1 - fy) * gtl.data[iy, ix]
        + fx * (1 - fy) * gtl.data[iy, ix + 1]
        + (1 - fx) * fy * gtl.data[iy + 1, ix]
        + fx * fy * gtl.data[iy + 1, ix + 1]
    )
    valid = (
        inside
        & gtl.mask[iy, ix]
        & gtl.mask[iy, ix + 1]
        & gtl.mask[iy + 1, ix]
        & gtl.mask[iy + 1, ix + 1]
    )
    return vals, valid


def map_stencil(dmap: DisplacementMap):
    """5-point Laplacian stencil taps for this map: (dx, dy, coefficient).

    Offsets are one texel (s image pixels) so the taps land on neighboring
    texel centers; dividing by s^2 makes the result the curvature per image
    pixel^2, directly comparable with gt_laplacian.  For a map whose texels
    are one pixel (s = 1) this is the classic unit stencil.
    """
    sx, sy = dmap.texel_size
    return (
        (sx, 0.0, 1.0 / sx**2), (-sx, 0.0, 1.0 / sx**2),
        (0.0, sy, 1.0 / sy**2), (0.0, -sy, 1.0 / sy**2),
        (0.0, 0.0, -2.0 / sx**2 - 2.0 / sy**2),
    )


def stencil_interior(dmap: DisplacementMap, u):
    """True where the whole stencil stays clear of the border clamp."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    sx, sy = dmap.texel_size
    w_img, h_img = dmap.image_size
    return (
        (u[:, 0] >= 1.5 * sx) & (u[:, 0] <= w_img - 1.5 * sx)
        & (u[:, 1] >= 1.5 * sy) & (u[:, 1] <= h_img - 1.5 * sy)
    )


def map_laplacian(dmap: DisplacementMap, u):
    """5-point stencil over neighboring texels, scaled to per-pixel^2 units."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    acc = np.zeros(len(u))
    for dx, dy, c in map_stencil(dmap):
        acc += c * dmap.query(u + np.array([dx, dy]))
    return float(acc[0]) if np.asarray(u).ndim == 1 else acc


def loss_base(base: BaseField, batch: SampleBatch) -> float:
    """Mean squared base-field error against the batch's ground-truth values."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    resid = base.query(batch.points) - batch.values
    return float(np.mean(resid**2))


def loss_sdf(dfield: DisentangledField, batch: SampleBatch, use_back: bool = True) -> float:
    """Mean absolute fused-field error; front_mask selects the fusion branch."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    base = dfield.base.query(batch.points)
    u = dfield.camera.project(batch.points)
    disp = np.where(batch.front_mask, dfield.front.query(u),
                    dfield.back.query(u) if use_back else 0.0)
    return float(np.mean(np.abs(base + disp - batch.values)))


def loss_lap(front: DisplacementMap, gtl: GtLaplacianMap, batch: SampleBatch,
             cam: Camera, rescale: bool = False):
    """Mean squared Laplacian mismatch over the front band P_F.

    Returns (loss, empty_flag): points outside gtl's valid mask are dropped,
    and a pose that sees no front band yields loss 0 with the flag set.
    With rescale, predicted and ground-truth Laplacians are both multiplied
    by pixel_scale^2 (the shared du/dp' factor, constant for this camera).
    """
    u = cam.project(batch.points[batch.front_mask])
    if len(u) == 0:
        return 0.0, True
    target, valid = sample_gt_laplacian(gtl, u)
    valid &= stencil_interior(front, u)
    if not valid.any():
        return 0.0, True
    pred = map_laplacian(front, u[valid])
    diff = pred - target[valid]
    if rescale:
        diff = diff * cam.pixel_scale**2
    return float(np.mean(diff**2)), False


_MAP_MAGICS = {"GLAP": b"GLAP", "PGRD": b"PGRD"}


def save_float_map(path, kind: str, data: np.ndarray, mask: np.ndarray):
    """Shared planar f32 format (channels then mask) with a 4-byte magic."""
    data = np.atleast_3d(data)
    with open(path, "wb") as fh:
        fh.write(_MAP_MAGICS[kind])
        fh.write(struct.pack("<II", data.shape[1], data.shape[0]))
        for c in range(data.shape[2]):
            fh.write(data[:, :, c].astype("<f4").tobytes())
        fh.write(mask.astype("<f4").tobytes())


def load_float_map(path, kind: str, channels: int):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAP_MAGICS[kind]:
            raise ValueError(f"{path}: bad magic")
        w, h = struct.unpack("<II", fh.read(8))
        plane = w * h
        buf = np.frombuffer(fh.read(), dtype="<f4")
    if buf.size != (channels + 1) * plane:
        raise ValueError(f"{path}: truncated map")
    data = np.stack(
        [buf[c * plane:(c + 1) * plane].reshape(h, w) for c in range(channels)], axis=-1
    ).astype(np.float64)
    mask = buf[channels * plane:].reshape(h, w) != 0.0
    return (data[..., 0] if channels == 1 else data), mask


def save_projected_gradient(path, pgrad: ProjectedGradientMap):
    save_float_map(path, "PGRD", pgrad.data, pgrad.mask)


def load_projected_gradient(path) -> ProjectedGradientMap:
    data, mask = load_float_map(path, "PGRD", 2)
    return ProjectedGradientMap(data, mask)


def save_gt_laplacian(path, gtl: GtLaplacianMap):
    save_float_map(path, "GLAP", gtl.data, gtl.mask)


def load_gt_laplacian(path) -> GtLaplacianMap:
    data, mask = load_float_map(path, "GLAP", 1)
    data = data.copy()
    data[~mask] = 0.0
    return GtLaplacianMap(data, mask)
