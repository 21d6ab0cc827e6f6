"""Part-box correspondence and detail-transfer fusion."""

import numpy as np
import pytest

from reliefsdf.fields import BaseField, DisentangledField, DisplacementMap, fuse
from reliefsdf.geometry import Camera
from reliefsdf.transfer import PartBox, PartBoxes, correspond, transfer_fuse


def _boxes(*parts):
    return PartBoxes([PartBox(*p) for p in parts])


@pytest.fixture
def identity_box():
    return _boxes(("a", [-0.4, -0.4, -0.1], [0.4, 0.4, 0.1],
                   [-0.4, -0.4, -0.1], [0.4, 0.4, 0.1]))


@pytest.fixture
def random_fields(cam, rng):
    def make():
        return DisentangledField(
            base=BaseField(rng.normal(size=(8, 8, 8))),
            front=DisplacementMap(rng.normal(size=(16, 16)), cam.resolution),
            back=DisplacementMap(rng.normal(size=(16, 16)), cam.resolution),
            camera=cam,
        )

    return make(), make()


class TestPartBoxes:
    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            PartBox("bad", [0, 0, 0], [1, 0, 1], [0, 0, 0], [1, 1, 1])

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            _boxes(("a", [0, 0, 0], [1, 1, 1], [0, 0, 0], [1, 1, 1]),
                   ("a", [2, 2, 2], [3, 3, 3], [0, 0, 0], [1, 1, 1]))

    def test_json_roundtrip(self):
        boxes = _boxes(("seat", [0, 0, 0], [1, 1, 1], [0, 0, 0], [2, 2, 2]))
        back = PartBoxes.from_json(boxes.to_json())
        assert len(back) == 1
        p = back.parts[0]
        assert p.name == "seat"
        assert np.array_equal(p.source_max, [2, 2, 2])


class TestCorrespond:
    def test_identity_box(self, identity_box):
        p = np.array([0.1, -0.2, 0.05])
        q, found = correspond(p, identity_box)
        assert found
        assert np.array_equal(q, p)

    def test_center_maps_to_center(self):
        boxes = _boxes(("a", [0, 0, 0], [1, 1, 1], [0, 0, 0], [2, 2, 2]))
        q, found = correspond(np.array([0.5, 0.5, 0.5]), boxes)
        assert found
        assert np.allclose(q, [1, 1, 1])

    def test_outside_all_boxes(self, identity_box):
        q, found = correspond(np.array([0.0, 0.0, 0.4]), identity_box)
        assert not found

    def test_first_by_name_tie_break(self):
        boxes = _boxes(
            ("b", [0, 0, 0], [1, 1, 1], [10, 10, 10], [11, 11, 11]),
            ("a", [0, 0, 0], [1, 1, 1], [20, 20, 20], [21, 21, 21]),
        )
        q, found = correspond(np.array([0.5, 0.5, 0.5]), boxes)
        assert found
        assert np.all(q >= 20)  # part "a" wins alphabetically

    def test_bijectivity(self, rng):
        boxes = _boxes(("a", [-0.3, -0.3, -0.3], [0.1, 0.2, 0.3],
                        [0.0, 0.0, 0.0], [0.5, 0.4, 0.6]))
        pts = rng.uniform([-0.3, -0.3, -0.3], [0.1, 0.2, 0.3], (50, 3))
        q, found = correspond(pts, boxes)
        assert found.all()
        back, found2 = correspond(q, boxes.swapped())
        assert found2.all()
        assert np.allclose(back, pts, atol=1e-9)


class TestTransferFuse:
    def test_identity_transfer_bitwise(self, random_fields, identity_box, rng):
        target, _ = random_fields
        pts = rng.uniform(-0.5, 0.5, (200, 3))
        front = rng.random(200) > 0.5
        plain = fuse(target, pts, front)
        transferred = transfer_fuse(target, target, identity_box, pts, front)
        assert np.array_equal(plain, transferred)

    def test_locality_bitwise(self, random_fields, rng):
        target, source = random_fields
        boxes = _boxes(("a", [-0.1, -0.1, -0.1], [0.1, 0.1, 0.1],
                        [-0.2, -0.2, -0.2], [0.2, 0.2, 0.2]))
        pts = rng.uniform(-0.5, 0.5, (500, 3))
        front = rng.random(500) > 0.5
        outside = ~((np.abs(pts) <= 0.1).all(axis=1))
        plain = fuse(target, pts, front)
        transferred = transfer_fuse(target, source, boxes, pts, front)
        assert np.array_equal(plain[outside], transferred[outside])

    def test_inside_uses_source_displacement(self, random_fields, identity_box):
        target, source = random_fields
        p = np.array([0.0, 0.0, 0.0])
        got = transfer_fuse(target, source, identity_box, p, True)
        u = source.camera.project(p)
        expected = target.base.query(p) + source.front.query(u)
        assert got == pytest.approx(expected, abs=1e-15)

    def test_zero_source_maps_reduce_to_target_base(self, random_fields, identity_box, cam):
        target, _ = random_fields
        source = DisentangledField(
            base=BaseField.constant(1.0, 4),
            front=DisplacementMap.zeros(cam, 4),
            back=DisplacementMap.zeros(cam, 4),
            camera=cam,
        )
        p = np.array([0.05, -0.05, 0.0])
        got = transfer_fuse(target, source, identity_box, p, False)
        assert got == pytest.approx(target.base.query(p), abs=1e-15)
