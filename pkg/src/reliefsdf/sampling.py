"""Ground-truth supervision sets: near-surface sampling, density weights,
and weighted batch draws.

Density weighting follows the same-side neighbor count rule: interior points
count only interior neighbors within the radius, exterior points only
exterior ones.  Batches hold equal interior/exterior halves, drawn
weight-proportionally without replacement.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import TriMesh
from .sdf import MeshSdf

DEFAULT_DENSITY_RADIUS = 0.05


@dataclass
class SampledSdf:
    points: np.ndarray  # (N, 3)
    values: np.ndarray  # (N,)
    weights: np.ndarray  # (N,) non-negative; zeros until computed
    side: np.ndarray  # (N,) bool, True = interior

    def __post_init__(self):
        n = len(self.points)
        if not (len(self.values) == len(self.weights) == len(self.side) == n):
            raise ValueError("points/values/weights/side lengths differ")

    def __len__(self):
        return len(self.points)


@dataclass
class SampleBatch:
    points: np.ndarray
    values: np.ndarray
    front_mask: np.ndarray  # True for points in the front band P_F
    indices: np.ndarray  # rows of the source SampledSdf

    def __len__(self):
        return len(self.points)


def build_sample_set(mesh: TriMesh, n_total: int, near_band: float, seed: int,
                     sdf: MeshSdf | None = None) -> SampledSdf:
    """Draw n_total supervision points: 80% near-surface, 20% uniform in the box.

    Near-surface points are area-uniform surface samples offset along the
    face normal by clamped Gaussian noise (sigma = near_band / 2).
    """
    if n_total < 2:
        raise ValueError("n_total must be >= 2")
    if not (0 < near_band <= 0.2):
        raise ValueError("near_band must be in (0, 0.2]")
    areas = mesh.face_areas
    total_area = areas.sum()
    if total_area <= 0:
        raise ValueError("degenerate mesh: zero surface area")
    if sdf is None:
        sdf = MeshSdf(mesh)

    rng = np.random.Generator(np.random.PCG64(seed))
    n_near = int(round(0.8 * n_total))
    n_uni = n_total - n_near

    face_idx = rng.choice(len(areas), size=n_near, p=areas / total_area)
    r1 = np.sqrt(rng.random(n_near))
    r2 = rng.random(n_near)
    tv = mesh.vertices[mesh.triangles[face_idx]]
    surf = (
        (1 - r1)[:, None] * tv[:, 0]
        + (r1 * (1 - r2))[:, None] * tv[:, 1]
        + (r1 * r2)[:, None] * tv[:, 2]
    )
    offsets = np.clip(rng.normal(0.0, near_band / 2.0, n_near), -near_band, near_band)
    near = surf + offsets[:, None] * mesh.face_normals[face_idx]

    uni = rng.uniform(-0.5, 0.5, (n_uni, 3))
    points = np.concatenate([near, uni])
    values = sdf.query(points)
    return SampledSdf(
        points=points,
        values=values,
        weights=np.zeros(n_total),
        side=values < 0,
    )


def compute_density_weights(s: SampledSdf, radius: float = DEFAULT_DENSITY_RADIUS) -> SampledSdf:
    """Fill weights[i] with the exact count of same-side points within radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    weights = np.zeros(len(s))
    for interior in (True, False):
        idx = np.flatnonzero(s.side == interior)
        if len(idx) == 0:
            continue
        tree = cKDTree(s.points[idx])
        counts = np.array(
            [len(nb) - 1 for nb in tree.query_ball_point(s.points[idx], radius)]
        )
        weights[idx] = counts
    return SampledSdf(s.points, s.values, weights, s.side)


def _weighted_draw_without_replacement(rng, weights, k):
    """Efraimidis-Spirakis exponential-sort draw: keys Exp(1)/w, keep the k smallest."""
    positive = np.flatnonzero(weights > 0)
    if len(positive) < k:
        raise ValueError(
            f"need {k} positive-weight points, have {len(positive)}"
        )
    keys = rng.exponential(1.0, len(positive)) / weights[positive]
    order = np.argsort(keys, kind="stable")[:k]
    return positive[order]


def draw_batch(s: SampledSdf, m: int, delta: float, front_classifier, seed: int) -> SampleBatch:
    """Draw m/2 interior + m/2 exterior points, weight-proportional, without replacement.

    front_classifier is called as classifier(points, indices) -> bool array
    (indices are rows of s, so precomputed per-point flags can be looked up);
    the final front mask additionally requires |value| < delta.
    """
    if m % 2 != 0:
        raise ValueError("batch size must be even")
    rng = np.random.Generator(np.random.PCG64(seed))
    interior = _weighted_draw_without_replacement(rng, np.where(s.side, s.weights, 0.0), m // 2)
    exterior = _weighted_draw_without_replacement(rng, np.where(~s.side, s.weights, 0.0), m // 2)
    idx = np.concatenate([interior, exterior])
    points = s.points[idx]
    values = s.values[idx]
    front = np.asarray(front_classifier(points, idx), dtype=bool) & (np.abs(values) < delta)
    return SampleBatch(points=points, values=values, front_mask=front, indices=idx)


_SSDF_MAGIC = b"SSDF"


def save_sampled_sdf(path, s: SampledSdf):
    """Little-endian records: 3xf32 position, f32 value, f32 weight, u8 side."""
    rec = np.zeros(len(s), dtype=[("p", "<f4", 3), ("v", "<f4"), ("w", "<f4"), ("s", "u1")])
    rec["p"] = s.points
    rec["v"] = s.values
    rec["w"] = s.weights
    rec["s"] = s.side
    with open(path, "wb") as fh:
        fh.write(_SSDF_MAGIC)
        fh.write(struct.pack("<I", len(s)))
        fh.write(rec.tobytes())


def load_sampled_sdf(path) -> SampledSdf:
    with open(path, "rb") as fh:
        if fh.read(4) != _SSDF_MAGIC:
            raise ValueError(f"{path}: bad magic")
        (n,) = struct.unpack("<I", fh.read(4))
        rec = np.frombuffer(
            fh.read(), dtype=[("p", "<f4", 3), ("v", "<f4"), ("w", "<f4"), ("s", "u1")]
        )
    if len(rec) != n:
        raise ValueError(f"{path}: expected {n} records, found {len(rec)}")
    return SampledSdf(
        points=rec["p"].astype(np.float64),
        values=rec["v"].astype(np.float64),
        weights=rec["w"].astype(np.float64),
        side=rec["s"].astype(bool),
    )
