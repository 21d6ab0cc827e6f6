"""Disentangled signed-distance-field shape representation.

A smooth trilinear base grid carries the coarse shape; two bilinear
displacement maps (front and back, queried at projected pixel positions)
carry the details.  The package fits this representation to watertight
meshes, extracts isosurfaces, evaluates reconstructions, and transfers
surface details between fitted shapes.
"""

from .fields import (
    BaseField,
    DisentangledField,
    DisplacementMap,
    classify_front,
    fuse,
    rasterize_residual,
)
from .geometry import Camera, NormalMap, TriMesh, load_obj, render_normal_map, save_obj
from .sdf import MeshSdf

__all__ = [
    "BaseField",
    "Camera",
    "DisentangledField",
    "DisplacementMap",
    "MeshSdf",
    "NormalMap",
    "TriMesh",
    "classify_front",
    "fuse",
    "load_obj",
    "rasterize_residual",
    "render_normal_map",
    "save_obj",
]
