"""Command-line front end.

Verbs: fixtures, fit, extract, eval, transfer, ablate.  Every command is a
thin orchestration over the library modules, driven by an optional JSON
config (--config) plus --seed / --threads / --out overrides.

Exit codes: 0 success, 1 computation failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from struct import error as struct_error

import numpy as np

from .extraction import DEFAULT_EXTRACTION_RESOLUTION, marching_cubes, sample_field
from .fields import load_field, save_field, self_classified_values
from .fitting import ABLATION_ARMS, FitConfig, fit, loss_history_csv
from .fixtures import FIXTURES
from .geometry import Camera, ObjParseError, load_obj, save_obj
from .metrics import CD_SAMPLE_COUNT, evaluate
from .sdf import MeshSdf
from .transfer import PartBoxes, transfer_fuse


class ConfigError(Exception):
    """Bad config file, schema violation, or unusable argument (exit 2)."""


class StageError(Exception):
    """Computation failure inside a named pipeline stage (exit 1)."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class RunConfig:
    """Full parameter set for a run, mirrored to/from JSON.

    Fitting fields shadow FitConfig; the rest cover the camera, extraction,
    and metric knobs.  Unknown JSON keys are rejected.
    """

    iterations: int = 2000
    batch_size: int = 2048
    learning_rate: float = 0.05
    lambda_lap: float = 1.0
    delta: float = 0.05
    seed: int = 0
    ablation: str = "full"
    rescale_lap: bool = False
    n_samples: int = 8192
    near_band: float = 0.05
    density_radius: float = 0.05
    base_resolution: int = 16
    map_resolution: int = 64
    camera_resolution: int = 224
    pixel_scale: float = 224.0
    extraction_resolution: int = DEFAULT_EXTRACTION_RESOLUTION
    metric_points: int = CD_SAMPLE_COUNT
    metric_seed: int = 0

    def __post_init__(self):
        self.fit_config()  # reuse the fitting invariants
        if self.camera_resolution < 2:
            raise ValueError("camera_resolution must be >= 2")
        if self.pixel_scale <= 0:
            raise ValueError("pixel_scale must be positive")
        if self.extraction_resolution < 2:
            raise ValueError("extraction_resolution must be >= 2")
        if self.metric_points < 1:
            raise ValueError("metric_points must be positive")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from exc

    def fit_config(self) -> FitConfig:
        fields = {f.name for f in dataclasses.fields(FitConfig)}
        return FitConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in fields})

    def camera(self) -> Camera:
        return Camera.front_on(pixel_scale=self.pixel_scale,
                             resolution=(self.camera_resolution, self.camera_resolution))


def _load_config(args) -> RunConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = RunConfig.from_json(path.read_text())
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed, metric_seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {out} ({exc})")
    return out


def _load_mesh(path_str, stage):
    path = Path(path_str)
    if not path.is_file():
        raise ConfigError(f"{stage}: mesh file not found: {path}")
    try:
        return load_obj(path)
    except ObjParseError as exc:
        raise ConfigError(f"{stage}: {exc}")


def _resolve_shape(name_or_path, stage):
    """A fixture name, or a path to an OBJ file."""
    if name_or_path in FIXTURES:
        return FIXTURES[name_or_path]()
    return _load_mesh(name_or_path, stage)


def _load_field_file(path_str, stage):
    path = Path(path_str)
    if not path.is_file():
        raise ConfigError(f"{stage}: field file not found: {path}")
    try:
        return load_field(path)
    except (ValueError, struct_error) as exc:
        raise ConfigError(f"{stage}: bad field file {path}: {exc}")


def cmd_fixtures(args) -> int:
    out = _out_dir(args)
    for name, builder in FIXTURES.items():
        try:
            mesh = builder()
        except Exception as exc:
            raise StageError(f"fixtures:{name}", exc)
        save_obj(out / f"{name}.obj", mesh)
        print(f"wrote {out / f'{name}.obj'} ({len(mesh.triangles)} triangles)")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    mesh = _resolve_shape(args.shape, "fit")
    try:
        trace = fit(mesh, cfg.camera(), cfg.fit_config())
    except Exception as exc:
        raise StageError("fit", exc)
    save_field(out / "field.d2im", trace.field)
    (out / "loss.csv").write_text(loss_history_csv(trace))
    (out / "config.json").write_text(cfg.to_json() + "\n")
    print(f"fit {args.shape} [{cfg.ablation}]: final loss "
          f"{trace.history[-1].total:.6g} in {trace.wall_time:.1f}s")
    return 0


def cmd_extract(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    dfield = _load_field_file(args.field, "extract")
    n = args.resolution or cfg.extraction_resolution
    try:
        if args.base_only:
            grid = sample_field(dfield.base.query, n)
        else:
            grid = sample_field(lambda p: self_classified_values(dfield, p), n)
        mesh, empty = marching_cubes(grid)
    except Exception as exc:
        raise StageError("extract", exc)
    path = out / "extracted.obj"
    save_obj(path, mesh)
    if empty:
        print("warning: field has no zero crossing; wrote an empty mesh", file=sys.stderr)
    else:
        print(f"wrote {path} ({len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles)")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    gt = _load_mesh(args.gt, "eval")
    rec = _load_mesh(args.rec, "eval")
    try:
        report = evaluate(gt, rec, cfg.camera(),
                          n_points=cfg.metric_points, seed=cfg.metric_seed)
    except Exception as exc:
        raise StageError("eval", exc)
    path = out / "metrics.json"
    path.write_text(report.to_json() + "\n")
    print(report.to_json())
    return 0


def cmd_transfer(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    target = _load_field_file(args.target, "transfer")
    source = _load_field_file(args.source, "transfer")
    boxes_path = Path(args.boxes)
    if not boxes_path.is_file():
        raise ConfigError(f"transfer: boxes file not found: {boxes_path}")
    try:
        boxes = PartBoxes.from_json(boxes_path.read_text())
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"transfer: bad boxes file: {exc}")
    n = args.resolution or cfg.extraction_resolution

    def field_fn(p):
        front = self_classified_values(target, p, return_front=True)[1]
        return transfer_fuse(target, source, boxes, p, front)

    try:
        grid = sample_field(field_fn, n)
        mesh, empty = marching_cubes(grid)
    except Exception as exc:
        raise StageError("transfer", exc)
    path = out / "transferred.obj"
    save_obj(path, mesh)
    if empty:
        print("warning: transferred field has no zero crossing", file=sys.stderr)
    else:
        print(f"wrote {path} ({len(mesh.triangles)} triangles)")
    return 0


def _fmt_metric(v) -> str:
    return "" if v is None else f"{v:.6f}"


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    mesh = _resolve_shape(args.shape, "ablate")
    try:
        sdf = MeshSdf(mesh)
    except Exception as exc:
        raise StageError("ablate:sdf", exc)
    cam = cfg.camera()
    rows = []
    for arm in ABLATION_ARMS:
        arm_cfg = dataclasses.replace(cfg.fit_config(), ablation=arm)
        try:
            trace = fit(mesh, cam, arm_cfg, sdf=sdf)
        except Exception as exc:
            raise StageError(f"ablate:fit:{arm}", exc)
        dfield = trace.field
        if arm == "baseline":
            field_fn = dfield.base.query
        else:
            use_back = arm_cfg.uses_back_map
            field_fn = lambda p, ub=use_back: self_classified_values(dfield, p, use_back=ub)
        try:
            grid = sample_field(field_fn, cfg.extraction_resolution)
            rec, empty = marching_cubes(grid)
            if empty:
                raise ValueError("extracted mesh is empty")
            report = evaluate(mesh, rec, cam, gt_field=sdf.query,
                              n_points=cfg.metric_points, seed=cfg.metric_seed)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(f"ablate:eval:{arm}", exc)
        rows.append((arm, report))
        print(f"{arm}: CD={report.cd:.6f} IoU={report.iou:.4f} "
              f"ECD-3D={_fmt_metric(report.ecd3d)} ECD-2D={_fmt_metric(report.ecd2d)}")
        save_obj(out / f"{arm}.obj", rec)
        save_field(out / f"{arm}.d2im", dfield)

    lines = ["arm,CD,IoU,ECD-3D,ECD-2D"]
    for arm, r in rows:
        lines.append(f"{arm},{r.cd:.6f},{r.iou:.6f},"
                     f"{_fmt_metric(r.ecd3d)},{_fmt_metric(r.ecd2d)}")
    csv_text = "\n".join(lines) + "\n"
    (out / "ablation.csv").write_text(csv_text)
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reliefsdf",
        description="Fit, extract, evaluate, and transfer disentangled SDF representations.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="cap internal parallelism")
    common.add_argument("--out", default=".", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("fixtures", parents=[common], help="write the fixture mesh set")

    p = sub.add_parser("fit", parents=[common], help="fit a field to a shape")
    p.add_argument("shape", help="fixture name or OBJ path")

    p = sub.add_parser("extract", parents=[common], help="extract a mesh from a field file")
    p.add_argument("field", help="field (.d2im) file")
    p.add_argument("-n", "--resolution", type=int, help="marching-cubes lattice resolution")
    p.add_argument("--base-only", action="store_true", help="extract the base field alone")

    p = sub.add_parser("eval", parents=[common], help="evaluate a reconstruction")
    p.add_argument("gt", help="ground-truth OBJ")
    p.add_argument("rec", help="reconstructed OBJ")

    p = sub.add_parser("transfer", parents=[common], help="transfer details between fields")
    p.add_argument("target", help="target field (.d2im)")
    p.add_argument("source", help="source field (.d2im)")
    p.add_argument("boxes", help="part-box JSON file")
    p.add_argument("-n", "--resolution", type=int, help="marching-cubes lattice resolution")

    p = sub.add_parser("ablate", parents=[common], help="run all four ablation arms")
    p.add_argument("shape", help="fixture name or OBJ path")

    return parser


_COMMANDS = {
    "fixtures": cmd_fixtures,
    "fit": cmd_fit,
    "extract": cmd_extract,
    "eval": cmd_eval,
    "transfer": cmd_transfer,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        try:
            import numba

            numba.set_num_threads(args.threads)
        except ValueError as exc:
            print(f"error: --threads: {exc}", file=sys.stderr)
            return 2
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
