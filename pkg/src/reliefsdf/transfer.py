"""Detail transfer: fuse a target's base field with a source's displacement
maps through a named part-box correspondence.

Each part pairs one axis-aligned box on the target with one on the source;
points inside a target box map to the source box by matching normalized local
coordinates.  Points outside every box fall back to plain fusion on the
target, so transfer is strictly local.  Seams at box boundaries are hard (no
blending).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .fields import DisentangledField, fuse


@dataclass(frozen=True)
class PartBox:
    name: str
    target_min: np.ndarray
    target_max: np.ndarray
    source_min: np.ndarray
    source_max: np.ndarray

    def __post_init__(self):
        for attr in ("target_min", "target_max", "source_min", "source_max"):
            object.__setattr__(self, attr, np.asarray(getattr(self, attr), dtype=np.float64))
        if not ((self.target_max > self.target_min).all()
                and (self.source_max > self.source_min).all()):
            raise ValueError(f"part {self.name!r}: boxes must have positive extent")


class PartBoxes:
    """Ordered, name-keyed list of box pairs; order breaks containment ties."""

    def __init__(self, parts: list[PartBox]):
        names = [p.name for p in parts]
        if len(set(names)) != len(names):
            raise ValueError("part names must be unique")
        # deterministic tie-break: first by name
        self.parts = sorted(parts, key=lambda p: p.name)

    def __len__(self):
        return len(self.parts)

    def swapped(self) -> "PartBoxes":
        """Exchange source and target roles (the inverse correspondence)."""
        return PartBoxes([
            PartBox(p.name, p.source_min, p.source_max, p.target_min, p.target_max)
            for p in self.parts
        ])

    @classmethod
    def from_json(cls, text: str) -> "PartBoxes":
        doc = json.loads(text)
        return cls([
            PartBox(
                name=entry["name"],
                target_min=entry["target"]["min"],
                target_max=entry["target"]["max"],
                source_min=entry["source"]["min"],
                source_max=entry["source"]["max"],
            )
            for entry in doc["parts"]
        ])

    def to_json(self) -> str:
        return json.dumps({
            "parts": [
                {
                    "name": p.name,
                    "target": {"min": p.target_min.tolist(), "max": p.target_max.tolist()},
                    "source": {"min": p.source_min.tolist(), "max": p.source_max.tolist()},
                }
                for p in self.parts
            ]
        }, indent=2)


def correspond(p, boxes: PartBoxes):
    """Map target-space points into source space through their part box.

    Vectorized: returns (q, found) where found[i] is False for points outside
    every target box (q rows there are copies of p).
    """
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = pts.copy()
    found = np.zeros(len(pts), dtype=bool)
    for part in boxes.parts:
        t_c = 0.5 * (part.target_min + part.target_max)
        t_h = 0.5 * (part.target_max - part.target_min)
        s_c = 0.5 * (part.source_min + part.source_max)
        s_h = 0.5 * (part.source_max - part.source_min)
        inside = ((pts >= part.target_min) & (pts <= part.target_max)).all(axis=1)
        sel = inside & ~found  # first box by name wins
        if sel.any():
            if (part.target_min == part.source_min).all() and (part.target_max == part.source_max).all():
                q[sel] = pts[sel]  # identity pair: skip the round trip, stay bitwise
            else:
                local = (pts[sel] - t_c) / t_h
                q[sel] = s_c + local * s_h
            found[sel] = True
    if np.asarray(p).ndim == 1:
        return (q[0], bool(found[0]))
    return q, found


def transfer_fuse(target: DisentangledField, source: DisentangledField,
                  boxes: PartBoxes, p, is_front):
    """Target base + source displacement (queried at the corresponded point)
    inside the part boxes; plain target fusion elsewhere."""
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    front = np.broadcast_to(np.asarray(is_front, dtype=bool), (len(pts),))
    out = np.asarray(fuse(target, pts, front), dtype=np.float64).copy()
    q, found = correspond(pts, boxes)
    if found.any():
        u_s = source.camera.project(q[found])
        disp = np.where(front[found], source.front.query(u_s), source.back.query(u_s))
        out[found] = target.base.query(pts[found]) + disp
    return float(out[0]) if np.asarray(p).ndim == 1 else out
