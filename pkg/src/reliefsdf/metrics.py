"""Evaluation: chamfer distance, occupancy IoU, edge chamfer in 3D and 2D,
and the Canny detector the 2D variant needs.

The edge chamfer metrics return None (a "no edges" outcome) when either edge
set is empty; 0 would wrongly score a featureless shape as perfect.
Chamfer distance is not a metric (no triangle inequality) and no code here
assumes it is.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import Camera, NormalMap, TriMesh, render_normal_map

EDGENESS_NEIGHBORS = 10
EDGENESS_THRESHOLD = 0.8
CD_SAMPLE_COUNT = 20000
IOU_RESOLUTION = 32
CANNY_SIGMA = 1.4
CANNY_LO = 0.1
CANNY_HI = 0.2


@dataclass
class PointSet:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64)
            if self.normals.shape != self.points.shape:
                raise ValueError("normals must match points")
            n = np.linalg.norm(self.normals, axis=1)
            if len(n) and not np.allclose(n, 1.0, atol=1e-5):
                raise ValueError("normals must be unit length")

    def __len__(self):
        return len(self.points)


@dataclass
class MetricReport:
    cd: float
    iou: float
    ecd3d: float | None
    ecd2d: float | None
    params: dict = dataclass_field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"cd": self.cd, "iou": self.iou, "ecd3d": self.ecd3d,
             "ecd2d": self.ecd2d, "params": self.params},
            sort_keys=True,
        )


def sample_surface(mesh: TriMesh, n: int, seed: int = 0) -> PointSet:
    """Area-uniform surface samples carrying face normals."""
    rng = np.random.Generator(np.random.PCG64(seed))
    areas = mesh.face_areas
    face_idx = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tv = mesh.vertices[mesh.triangles[face_idx]]
    pts = (
        (1 - r1)[:, None] * tv[:, 0]
        + (r1 * (1 - r2))[:, None] * tv[:, 1]
        + (r1 * r2)[:, None] * tv[:, 2]
    )
    return PointSet(pts, mesh.face_normals[face_idx])


def chamfer_l1(a: PointSet, b: PointSet) -> float:
    """Symmetric mean nearest-neighbor distance: (mean_a + mean_b) / 2."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    d_ab, _ = cKDTree(b.points).query(a.points)
    d_ba, _ = cKDTree(a.points).query(b.points)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def iou(field_a, field_b, n: int = IOU_RESOLUTION) -> float:
    """Occupancy (field < 0) intersection over union on the n^3 lattice."""
    xs = np.linspace(-0.5, 0.5, n)
    gx, gy, gz = np.meshgrid(xs, xs, xs, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    occ_a = np.asarray(field_a(pts)) < 0
    occ_b = np.asarray(field_b(pts)) < 0
    union = int(np.sum(occ_a | occ_b))
    if union == 0:
        return 1.0
    return float(np.sum(occ_a & occ_b)) / union


def edgeness(p: PointSet, k: int = EDGENESS_NEIGHBORS) -> np.ndarray:
    """sigma_i = min over the k nearest neighbors of |n_i . n_j| (self excluded)."""
    if p.normals is None:
        raise ValueError("edgeness needs normals")
    if len(p) <= k:
        raise ValueError("edgeness needs more points than neighbors")
    _, nbr = cKDTree(p.points).query(p.points, k=k + 1)
    nbr = nbr[:, 1:]  # drop self
    dots = np.abs(np.einsum("ij,ikj->ik", p.normals, p.normals[nbr]))
    return dots.min(axis=1)


def edge_subset(p: PointSet, k: int = EDGENESS_NEIGHBORS,
                threshold: float = EDGENESS_THRESHOLD) -> PointSet:
    keep = edgeness(p, k) < threshold
    return PointSet(p.points[keep], p.normals[keep])


def ecd3d(gt: PointSet, rec: PointSet, k: int = EDGENESS_NEIGHBORS,
          threshold: float = EDGENESS_THRESHOLD) -> float | None:
    """Chamfer between the edge subsets; None when either has no edges."""
    ga = edge_subset(gt, k, threshold)
    gb = edge_subset(rec, k, threshold)
    if len(ga) == 0 or len(gb) == 0:
        return None
    return chamfer_l1(ga, gb)


def canny(img: np.ndarray, sigma: float = CANNY_SIGMA, lo: float = CANNY_LO,
          hi: float = CANNY_HI) -> np.ndarray:
    """Canny edges: Gaussian blur, Sobel, 8-direction NMS, hysteresis.

    Gradient magnitudes are normalized to [0, 1] before thresholding.
    """
    if lo >= hi:
        raise ValueError("low threshold must be below high threshold")
    img = np.asarray(img, dtype=np.float64)
    blurred = ndimage.gaussian_filter(img, sigma)
    gy = ndimage.sobel(blurred, axis=0)
    gx = ndimage.sobel(blurred, axis=1)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak == 0:
        return np.zeros_like(img, dtype=bool)
    mag = mag / peak

    # quantize gradient direction to 4 orientations (8 neighbor directions)
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    h, w = mag.shape
    padded = np.pad(mag, 1)
    center = padded[1:-1, 1:-1]

    def shifted(dy, dx):
        return padded[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx]

    d0 = (angle < 22.5) | (angle >= 157.5)  # horizontal gradient: compare E/W
    d45 = (angle >= 22.5) & (angle < 67.5)
    d90 = (angle >= 67.5) & (angle < 112.5)
    d135 = (angle >= 112.5) & (angle < 157.5)
    # strict on one side, ties broken toward the positive direction so a
    # 2-pixel plateau (symmetric blurred step) thins to a single line
    keep = np.zeros_like(mag, dtype=bool)
    keep |= d0 & (center > shifted(0, 1)) & (center >= shifted(0, -1))
    keep |= d45 & (center > shifted(1, 1)) & (center >= shifted(-1, -1))
    keep |= d90 & (center > shifted(1, 0)) & (center >= shifted(-1, 0))
    keep |= d135 & (center > shifted(1, -1)) & (center >= shifted(-1, 1))
    thinned = np.where(keep, mag, 0.0)

    strong = thinned > hi
    weak = thinned > lo
    # hysteresis: keep weak pixels 8-connected to a strong one
    edges = ndimage.binary_dilation(
        strong, structure=np.ones((3, 3), dtype=bool), iterations=-1, mask=weak
    )
    return edges


def normal_map_to_gray(nmap: NormalMap) -> np.ndarray:
    """Luminance of the (N + 1) / 2 color encoding; uncovered pixels are 0."""
    rgb = 0.5 * (nmap.data + 1.0)
    gray = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return np.where(nmap.mask, gray, 0.0)


def edge_pixels(nmap: NormalMap, sigma=CANNY_SIGMA, lo=CANNY_LO, hi=CANNY_HI) -> np.ndarray:
    """(x, y) coordinates of Canny edge pixels of a normal map."""
    mask = canny(normal_map_to_gray(nmap), sigma, lo, hi)
    ys, xs = np.nonzero(mask)
    return np.stack([xs, ys], axis=1).astype(np.float64)


def chamfer_2d(a: np.ndarray, b: np.ndarray) -> float:
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def ecd2d(gt_mesh: TriMesh, rec_mesh: TriMesh, cam: Camera,
          sigma=CANNY_SIGMA, lo=CANNY_LO, hi=CANNY_HI) -> float | None:
    """Chamfer (in pixels) between Canny edge sets of the two rendered normal maps."""
    ea = edge_pixels(render_normal_map(gt_mesh, cam), sigma, lo, hi)
    eb = edge_pixels(render_normal_map(rec_mesh, cam), sigma, lo, hi)
    if len(ea) == 0 or len(eb) == 0:
        return None
    return chamfer_2d(ea, eb)


def evaluate(gt_mesh: TriMesh, rec_mesh: TriMesh, cam: Camera,
             gt_field=None, rec_field=None, n_points: int = CD_SAMPLE_COUNT,
             seed: int = 0) -> MetricReport:
    """Full metric bundle for one reconstruction.

    Occupancy fields for IoU default to the meshes' exact SDFs.
    """
    from .sdf import MeshSdf  # deferred: numba import is heavy

    gt_pts = sample_surface(gt_mesh, n_points, seed)
    rec_pts = sample_surface(rec_mesh, n_points, seed + 1)
    if gt_field is None:
        gt_field = MeshSdf(gt_mesh).query
    if rec_field is None:
        rec_field = MeshSdf(rec_mesh).query
    return MetricReport(
        cd=chamfer_l1(gt_pts, rec_pts),
        iou=iou(gt_field, rec_field),
        ecd3d=ecd3d(gt_pts, rec_pts),
        ecd2d=ecd2d(gt_mesh, rec_mesh, cam),
        params={
            "n_points": n_points,
            "iou_resolution": IOU_RESOLUTION,
            "edgeness_k": EDGENESS_NEIGHBORS,
            "edgeness_threshold": EDGENESS_THRESHOLD,
            "canny": {"sigma": CANNY_SIGMA, "lo": CANNY_LO, "hi": CANNY_HI},
            "seed": seed,
        },
    )
