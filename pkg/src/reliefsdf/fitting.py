"""Direct-parameter optimizer: overfit one disentangled field to one shape.

The fit pipeline precomputes supervision once (sample set, density weights,
normal map, ground-truth Laplacian, per-point front flags from the
ground-truth SDF), then iterates weighted batch draws and Adam updates on the
base grid and displacement maps using analytic gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .fields import (
    BaseField,
    DEFAULT_BASE_RESOLUTION,
    DEFAULT_DELTA,
    DEFAULT_MAP_RESOLUTION,
    DisentangledField,
    DisplacementMap,
    classify_front,
)
from .geometry import Camera, TriMesh, render_normal_map
from .losses import (
    GtLaplacianMap,
    LossReport,
    gt_laplacian,
    map_stencil,
    projected_gradient,
    sample_gt_laplacian,
    stencil_interior,
)
from .sampling import SampleBatch, build_sample_set, compute_density_weights, draw_batch
from .sdf import MeshSdf

ABLATION_ARMS = ("full", "no_lap", "no_back", "baseline")


@dataclass(frozen=True)
class FitConfig:
    iterations: int = 2000
    batch_size: int = 2048
    learning_rate: float = 0.05
    lambda_lap: float = 1.0
    delta: float = DEFAULT_DELTA
    seed: int = 0
    ablation: str = "full"
    rescale_lap: bool = False
    n_samples: int = 8192
    near_band: float = 0.05
    density_radius: float = 0.05
    base_resolution: int = DEFAULT_BASE_RESOLUTION
    map_resolution: int = DEFAULT_MAP_RESOLUTION

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.batch_size % 2 != 0:
            raise ValueError("batch_size must be even")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.ablation not in ABLATION_ARMS:
            raise ValueError(f"unknown ablation arm {self.ablation!r}")

    @property
    def uses_front_map(self):
        return self.ablation != "baseline"

    @property
    def uses_back_map(self):
        return self.ablation in ("full", "no_lap")

    @property
    def uses_lap_loss(self):
        return self.ablation in ("full", "no_back") and self.lambda_lap != 0.0


@dataclass
class FitTrace:
    history: list  # LossReport per iteration
    field: DisentangledField
    wall_time: float
    config: FitConfig


def loss_history_csv(trace: FitTrace) -> str:
    lines = ["iteration,l_base,l_sdf,l_lap,total"]
    for i, r in enumerate(trace.history):
        lines.append(f"{i},{r.l_base:.9g},{r.l_sdf:.9g},{r.l_lap:.9g},{r.total:.9g}")
    return "\n".join(lines) + "\n"


def _scatter_base(grad, idx, w, coef):
    np.add.at(grad, (idx[:, :, 0], idx[:, :, 1], idx[:, :, 2]), w * coef[:, None])


def _scatter_map(grad, idx, w, coef):
    np.add.at(grad, (idx[:, :, 0], idx[:, :, 1]), w * coef[:, None])


def analytic_gradients(dfield: DisentangledField, batch: SampleBatch,
                       gtl: GtLaplacianMap | None, cfg: FitConfig):
    """Losses and their gradients w.r.t. every grid/map cell.

    Returns (LossReport, grads) where grads maps 'base'/'front'/'back' to
    arrays shaped like the parameters.  Cells untouched by the batch get 0.
    All field queries are piecewise multilinear, so each gradient is a scatter
    of interpolation weights.
    """
    m = len(batch)
    base = dfield.base
    cam = dfield.camera
    grads = {
        "base": np.zeros_like(base.values),
        "front": np.zeros_like(dfield.front.values),
        "back": np.zeros_like(dfield.back.values),
    }

    b_idx, b_w = base.interp_coeffs(batch.points)
    b_vals = (base.values[b_idx[..., 0], b_idx[..., 1], b_idx[..., 2]] * b_w).sum(axis=1)
    u = cam.project(batch.points)

    if cfg.ablation == "baseline":
        # L_sdf evaluated on the base output alone
        resid = b_vals - batch.values
        l_sdf = float(np.mean(np.abs(resid)))
        _scatter_base(grads["base"], b_idx, b_w, np.sign(resid) / m)
        return LossReport(0.0, l_sdf, 0.0, cfg.lambda_lap), grads

    f_idx, f_w = dfield.front.interp_coeffs(u)
    f_vals = (dfield.front.values[f_idx[..., 0], f_idx[..., 1]] * f_w).sum(axis=1)
    front_sel = batch.front_mask

    if cfg.uses_back_map:
        k_idx, k_w = dfield.back.interp_coeffs(u)
        k_vals = (dfield.back.values[k_idx[..., 0], k_idx[..., 1]] * k_w).sum(axis=1)
        disp = np.where(front_sel, f_vals, k_vals)
    else:
        disp = np.where(front_sel, f_vals, 0.0)

    # L_B: mean squared base error
    resid_b = b_vals - batch.values
    l_base = float(np.mean(resid_b**2))
    _scatter_base(grads["base"], b_idx, b_w, 2.0 * resid_b / m)

    # L_sdf: mean absolute fused error
    resid_f = b_vals + disp - batch.values
    l_sdf = float(np.mean(np.abs(resid_f)))
    sgn = np.sign(resid_f) / m
    _scatter_base(grads["base"], b_idx, b_w, sgn)
    if front_sel.any():
        _scatter_map(grads["front"], f_idx[front_sel], f_w[front_sel], sgn[front_sel])
    if cfg.uses_back_map and (~front_sel).any():
        _scatter_map(grads["back"], k_idx[~front_sel], k_w[~front_sel], sgn[~front_sel])

    # L_lap: mean squared Laplacian mismatch over valid front-band points
    l_lap = 0.0
    if cfg.uses_lap_loss and gtl is not None and front_sel.any():
        uf = u[front_sel]
        target, valid = sample_gt_laplacian(gtl, uf)
        valid &= stencil_interior(dfield.front, uf)
        if valid.any():
            uv = uf[valid]
            nv = len(uv)
            pred = np.zeros(nv)
            supports = []
            for dx, dy, c in map_stencil(dfield.front):
                s_idx, s_w = dfield.front.interp_coeffs(uv + np.array([dx, dy]))
                pred += c * (dfield.front.values[s_idx[..., 0], s_idx[..., 1]] * s_w).sum(axis=1)
                supports.append((s_idx, s_w, c))
            diff = pred - target[valid]
            factor = cam.pixel_scale**4 if cfg.rescale_lap else 1.0
            l_lap = factor * float(np.mean(diff**2))
            coef = cfg.lambda_lap * factor * 2.0 * diff / nv
            for s_idx, s_w, c in supports:
                _scatter_map(grads["front"], s_idx, s_w, c * coef)

    if not cfg.uses_back_map:
        grads["back"][:] = 0.0
    return LossReport(l_base, l_sdf, l_lap, cfg.lambda_lap), grads


class _Adam:
    """Adam with lazy (sparse) semantics: moments and parameters only advance
    where the current gradient is nonzero.

    Batches touch a small subset of grid/map cells each step; dense Adam
    would keep pushing untouched cells on stale momentum, dragging
    unsupervised displacement texels far from zero.
    """

    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = {k: np.zeros_like(v) for k, v in params.items()}
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        for k, p in self.params.items():
            g = grads[k]
            touched = g != 0.0
            t = self.t[k]
            t[touched] += 1
            m = self.m[k]
            v = self.v[k]
            m[touched] = self.beta1 * m[touched] + (1 - self.beta1) * g[touched]
            v[touched] = self.beta2 * v[touched] + (1 - self.beta2) * g[touched] ** 2
            m_hat = m[touched] / (1 - self.beta1 ** t[touched])
            v_hat = v[touched] / (1 - self.beta2 ** t[touched])
            p[touched] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def fit(mesh: TriMesh, cam: Camera, cfg: FitConfig, sdf: MeshSdf | None = None) -> FitTrace:
    """Run the full fitting pipeline for one shape and camera."""
    t_start = time.perf_counter()
    if sdf is None:
        sdf = MeshSdf(mesh)

    samples = build_sample_set(mesh, cfg.n_samples, cfg.near_band, cfg.seed, sdf=sdf)
    if cfg.ablation == "baseline":
        # uniform sampling: every point equally likely
        samples.weights[:] = 1.0
    else:
        samples = compute_density_weights(samples, cfg.density_radius)

    # ground-truth-side supervision, computed once
    nmap = render_normal_map(mesh, cam)
    gtl = gt_laplacian(projected_gradient(nmap, cam)) if cfg.uses_lap_loss else None
    front_flags = classify_front(samples.points, sdf.query, cam, cfg.delta)

    def classifier(points, indices):
        return front_flags[indices]

    dfield = DisentangledField(
        base=BaseField.constant(0.5, cfg.base_resolution),  # all-outside start
        front=DisplacementMap(np.zeros((cfg.map_resolution,) * 2), cam.resolution),
        back=DisplacementMap(np.zeros((cfg.map_resolution,) * 2), cam.resolution),
        camera=cam,
        delta=cfg.delta,
    )

    params = {"base": dfield.base.values}
    if cfg.uses_front_map:
        params["front"] = dfield.front.values
    if cfg.uses_back_map:
        params["back"] = dfield.back.values
    opt = _Adam(params, cfg.learning_rate)

    seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.iterations, dtype=np.uint64)
    history = []
    for it in range(cfg.iterations):
        batch = draw_batch(samples, cfg.batch_size, cfg.delta, classifier, int(seeds[it]))
        report, grads = analytic_gradients(dfield, batch, gtl, cfg)
        opt.step({k: grads[k] for k in params})
        history.append(report)

    return FitTrace(
        history=history,
        field=dfield,
        wall_time=time.perf_counter() - t_start,
        config=cfg,
    )
