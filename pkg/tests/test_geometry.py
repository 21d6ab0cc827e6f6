"""Mesh I/O, camera projection, and normal-map rendering."""

import math

import numpy as np
import pytest

from reliefsdf.fixtures import cube, icosphere
from reliefsdf.geometry import (
    Camera,
    EmptyMeshError,
    NormalMap,
    ObjParseError,
    TriMesh,
    load_normal_map,
    load_obj,
    render_normal_map,
    save_normal_map,
    save_obj,
)

CUBE_OBJ = """\
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v 0.5 0.5 0.5
v -0.5 0.5 0.5
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
"""


class TestLoadObj:
    def test_unit_cube_quads(self, tmp_path):
        path = tmp_path / "cube.obj"
        path.write_text(CUBE_OBJ)
        mesh = load_obj(path)
        assert len(mesh.vertices) == 8
        # 6 quads fan-split into 2 triangles each
        assert len(mesh.triangles) == 12
        assert mesh.is_edge_manifold()

    def test_negative_indices(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
        mesh = load_obj(path)
        assert np.array_equal(mesh.triangles, [[0, 1, 2]])

    def test_index_out_of_range(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        with pytest.raises(ObjParseError, match="4"):  # line number in message
            load_obj(path)

    def test_bad_vertex(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("v 0 zero 0\n")
        with pytest.raises(ObjParseError, match="1"):
            load_obj(path)

    def test_empty_mesh(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("# nothing here\n")
        with pytest.raises(EmptyMeshError):
            load_obj(path)

    def test_roundtrip(self, tmp_path, cube_mesh):
        path = tmp_path / "c.obj"
        save_obj(path, cube_mesh)
        back = load_obj(path)
        assert np.allclose(back.vertices, cube_mesh.vertices)
        assert np.array_equal(back.triangles, cube_mesh.triangles)


class TestTriMesh:
    def test_index_validation(self):
        with pytest.raises(ValueError):
            TriMesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))

    def test_vertex_normals_unit(self, sphere_mesh):
        norms = np.linalg.norm(sphere_mesh.vertex_normals, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-6)

    def test_sphere_normals_radial(self, sphere_mesh):
        # on a sphere every (smoothed) vertex normal points along the vertex
        radial = sphere_mesh.vertices / np.linalg.norm(sphere_mesh.vertices, axis=1, keepdims=True)
        dots = np.einsum("ij,ij->i", radial, sphere_mesh.vertex_normals)
        assert dots.min() > 0.999

    def test_normalized(self):
        mesh = TriMesh(
            np.array([[0.0, 0, 0], [2, 0, 0], [0, 4, 0], [0, 0, 1]]),
            np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]]),
        )
        norm = mesh.normalized()
        lo, hi = norm.bounds()
        assert np.allclose(0.5 * (lo + hi), 0)
        assert math.isclose((hi - lo).max(), 1.0)

    def test_welded_merges_split_vertices(self, cube_mesh):
        assert len(cube_mesh.vertices) == 24  # split per face
        assert len(cube_mesh.welded().vertices) == 8

    def test_edge_manifold(self, cube_mesh):
        assert cube_mesh.is_edge_manifold()
        open_tri = TriMesh(np.eye(3), np.array([[0, 1, 2]]))
        assert not open_tri.is_edge_manifold()


class TestCamera:
    def test_center_projection(self, cam):
        assert np.allclose(cam.project(np.array([0.0, 0, 0])), [112, 112])

    def test_linear_map(self, cam):
        assert np.allclose(cam.project(np.array([0.25, 0, 0])), [168, 112])

    def test_rotated_projection(self):
        # 180 degrees about y: x -> -x, z -> -z
        rot = np.diag([-1.0, 1.0, -1.0])
        cam = Camera(rot, np.zeros(3), 224.0, (224, 224))
        u = cam.project(np.array([0.25, 0.0, 0.1]))
        assert np.allclose(u, [56, 112])

    def test_view_dir(self, cam):
        assert np.allclose(cam.view_dir_world(), [0, 0, 1])

    def test_nonorthonormal_rejected(self):
        with pytest.raises(ValueError):
            Camera(np.eye(3) * 2, np.zeros(3), 224.0, (224, 224))

    def test_bad_scale(self):
        with pytest.raises(ValueError):
            Camera(np.eye(3), np.zeros(3), 0.0, (224, 224))


class TestRenderNormalMap:
    def test_sphere_center_pixel(self, sphere_mesh, cam):
        nmap = render_normal_map(sphere_mesh, cam)
        assert nmap.mask[112, 112]
        # pixel center (112.5, 112.5) sits half a pixel off the pole
        assert np.allclose(nmap.data[112, 112], [0, 0, 1], atol=1e-2)

    def test_cube_front_face_exact(self, cube_mesh, cam):
        nmap = render_normal_map(cube_mesh, cam)
        ys, xs = np.nonzero(nmap.mask)
        # stay away from the silhouette where side-wall pixels win
        inner = (np.abs(xs - 112) < 40) & (np.abs(ys - 112) < 40)
        assert inner.any()
        assert np.allclose(nmap.data[ys[inner], xs[inner]], [0, 0, 1])

    def test_miss_pixels_unmasked(self, sphere_mesh, cam):
        nmap = render_normal_map(sphere_mesh, cam)
        assert not nmap.mask[0, 0]
        assert np.all(nmap.data[0, 0] == 0)

    def test_render_project_consistency(self, sphere_mesh, cam, rng):
        # visible surface point -> stored normal approximates the true normal
        nmap = render_normal_map(sphere_mesh, cam)
        theta = rng.uniform(0, 2 * np.pi, 50)
        r = 0.25 * np.sqrt(rng.uniform(0, 1, 50))
        pts = np.stack([r * np.cos(theta), r * np.sin(theta),
                        np.sqrt(0.4**2 - r**2)], axis=1)
        u = cam.project(pts)
        px = np.clip(u.astype(int), 0, 223)
        true_n = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        stored = nmap.data[px[:, 1], px[:, 0]]
        assert np.linalg.norm(stored - true_n, axis=1).max() < 0.02

    def test_coverage_matches_silhouette(self, sphere_mesh, cam):
        nmap = render_normal_map(sphere_mesh, cam)
        covered = nmap.mask.sum()
        expected = np.pi * (0.4 * 224) ** 2  # disc area in pixels
        assert abs(covered - expected) / expected < 0.02


class TestNormalMapIO:
    def test_roundtrip(self, tmp_path, sphere_mesh, cam):
        nmap = render_normal_map(sphere_mesh, cam)
        path = tmp_path / "n.nmap"
        save_normal_map(path, nmap)
        back = load_normal_map(path)
        assert np.array_equal(back.mask, nmap.mask)
        assert np.allclose(back.data, nmap.data, atol=1e-6)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.nmap"
        path.write_bytes(b"XXXX" + b"\0" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_normal_map(path)

    def test_unit_invariant_enforced(self):
        data = np.zeros((2, 2, 3))
        data[0, 0] = [2.0, 0, 0]  # not unit
        mask = np.zeros((2, 2), dtype=bool)
        mask[0, 0] = True
        with pytest.raises(ValueError):
            NormalMap(data, mask)
