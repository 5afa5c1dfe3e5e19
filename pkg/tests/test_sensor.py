import math
import unittest

import numpy as np

from pyobjmap.constants import Face, NoiseLevel
from pyobjmap.exceptions import DomainException
from pyobjmap.explore import candidate_views
from pyobjmap.obj_types import CameraIntrinsics, CameraPose, ObjectPose
from pyobjmap.objmap import ObjectEstimate
from pyobjmap.scene import DeskScene, ScenePrimitive
from pyobjmap.sensor import (
    NoiseModel, predicted_visibility, project, project_points, projected_bbox, render, unproject, visible_cells
)
from pyobjmap.util import look_at_rotation

INTR = CameraIntrinsics()
BOUNDS = (-0.5, -0.7, 0.5, 0.7)


def camera(eye, target):
    return CameraPose(rotation=look_at_rotation(eye, target), translation=eye)


def cube(object_id, x, y, half=0.05, yaw=0.0, label='box', height=0.7):
    pose = ObjectPose.upright((x, y, height + half), yaw, (half, half, half))
    return ScenePrimitive(id=object_id, label=label, shape='cuboid', pose_gt=pose)


def scene_of(*prims):
    return DeskScene(desk_height=0.7, desk_bounds=BOUNDS, primitives=prims)


def estimate_of(prim):
    return ObjectEstimate.create(prim.id, prim.label, prim.pose_gt)


class TestProjection(unittest.TestCase):

    def setUp(self):
        self.cam = CameraPose(rotation=np.eye(3), translation=np.zeros(3))

    def test_optical_axis(self):
        np.testing.assert_allclose(project(INTR, self.cam, (0.0, 0.0, 2.0)), [320.0, 240.0])

    def test_offset_point(self):
        np.testing.assert_allclose(project(INTR, self.cam, (0.1, 0.0, 2.0)), [345.0, 240.0])

    def test_behind_camera(self):
        self.assertIsNone(project(INTR, self.cam, (0.0, 0.0, -1.0)))
        _, valid = project_points(INTR, self.cam, np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]))
        self.assertEqual(valid.tolist(), [True, False])

    def test_round_trip(self):
        cam = camera((0.2, -0.4, 1.3), (0.0, 0.0, 0.7))
        rng = np.random.default_rng(3)
        for _ in range(100):
            pixel = rng.uniform([0, 0], [INTR.width, INTR.height])
            depth = rng.uniform(0.2, 3.0)
            world = unproject(INTR, cam, pixel, depth)
            np.testing.assert_allclose(project(INTR, cam, world), pixel, atol=1e-9)
            self.assertLess(np.linalg.norm(unproject(INTR, cam, project(INTR, cam, world), depth) - world), 1e-9)


class TestRender(unittest.TestCase):

    def test_top_down_isolated_cube(self):
        scene = scene_of(cube(1, 0.0, 0.0))
        obs = render(scene, camera((0.0, 0.0, 1.3), (0.0, 0.0, 0.7)), INTR)
        self.assertEqual(len(obs.detections), 1)
        det = obs.detections[0]
        np.testing.assert_allclose(det.points_world[:, 2], 0.8)
        self.assertEqual(len(det.lines), 4)
        # image directions modulo 180 degrees: two of them, 90 degrees apart
        directions = [math.degrees(line.theta) % 180.0 for line in det.lines]
        horizontal = [min(d, 180.0 - d) < 1e-6 for d in directions]
        vertical = [abs(d - 90.0) < 1e-6 for d in directions]
        self.assertEqual(sum(horizontal), 2)
        self.assertEqual(sum(vertical), 2)
        self.assertGreater(len(obs.desk_points), 0)
        self.assertIsNone(det.object_id)

    def test_bbox_encloses_projected_points(self):
        scene = scene_of(cube(1, 0.1, 0.1, yaw=0.4))
        cam = camera((0.5, -0.3, 1.2), (0.1, 0.1, 0.75))
        obs = render(scene, cam, INTR)
        det = obs.detections[0]
        uv, _ = project_points(INTR, cam, det.points_world)
        u0, v0, u1, v1 = det.bbox
        self.assertTrue(np.all((uv[:, 0] >= u0 - 1e-6) & (uv[:, 0] <= u1 + 1e-6)))
        self.assertTrue(np.all((uv[:, 1] >= v0 - 1e-6) & (uv[:, 1] <= v1 + 1e-6)))

    def test_occluded_object(self):
        wall = ScenePrimitive(id=1, label='board', shape='cuboid',
                              pose_gt=ObjectPose.upright((0.0, 0.0, 0.8), 0.0, (0.1, 0.02, 0.1)))
        hidden = cube(2, 0.0, 0.2, half=0.03)
        cam = camera((0.0, -0.5, 0.75), (0.0, 0.2, 0.73))
        alone = render(scene_of(hidden), cam, INTR, reveal_ids=True)
        isolated = sum(len(d.points_world) for d in alone.detections if d.object_id == 2)
        self.assertGreater(isolated, 0)

        both = render(scene_of(wall, hidden), cam, INTR, reveal_ids=True)
        behind = sum(len(d.points_world) for d in both.detections if d.object_id == 2)
        self.assertLess(behind, 0.1 * isolated)

    def test_total_dropout(self):
        scene = scene_of(cube(1, 0.0, 0.0), cube(2, 0.3, 0.3))
        obs = render(scene, camera((0.0, -0.3, 1.3), (0.1, 0.1, 0.7)), INTR, NoiseModel(dropout_prob=1.0))
        self.assertEqual(len(obs.detections), 0)
        self.assertGreater(len(obs.desk_points), 0)
        self.assertFalse(obs.is_empty)

    def test_camera_below_desk(self):
        with self.assertRaises(DomainException):
            render(scene_of(cube(1, 0.0, 0.0)), camera((0.0, -0.5, 0.6), (0.0, 0.0, 0.75)), INTR)

    def test_deterministic(self):
        scene = scene_of(cube(1, 0.0, 0.0), cube(2, 0.25, -0.2, yaw=0.3))
        cam = camera((0.3, -0.5, 1.2), (0.0, 0.0, 0.7))
        for noise in (NoiseModel(), NoiseModel.preset(NoiseLevel.MED)):
            a = render(scene, cam, INTR, noise, seed=9)
            b = render(scene, cam, INTR, noise, seed=9)
            self.assertEqual(len(a.detections), len(b.detections))
            for da, db in zip(a.detections, b.detections):
                self.assertTrue(np.array_equal(da.points_world, db.points_world))
                self.assertEqual(da.bbox, db.bbox)
            self.assertTrue(np.array_equal(a.desk_points, b.desk_points))
            self.assertTrue(np.array_equal(a.camera.translation, b.camera.translation))

    def test_noise_perturbs(self):
        scene = scene_of(cube(1, 0.0, 0.0))
        cam = camera((0.0, -0.4, 1.2), (0.0, 0.0, 0.7))
        clean = render(scene, cam, INTR)
        noisy = render(scene, cam, INTR, NoiseModel.preset('med'), seed=1)
        self.assertFalse(np.array_equal(clean.camera.translation, noisy.camera.translation))
        np.testing.assert_allclose(clean.camera.translation, cam.translation)

    def test_desk_contamination_adds_points(self):
        scene = scene_of(cube(1, 0.0, 0.0))
        cam = camera((0.0, -0.4, 1.2), (0.0, 0.0, 0.7))
        clean = render(scene, cam, INTR)
        dirty = render(scene, cam, INTR, NoiseModel(desk_contamination=0.5), seed=2)
        self.assertGreater(len(dirty.detections[0].points_world), len(clean.detections[0].points_world))
        self.assertLess(len(dirty.desk_points), len(clean.desk_points))

    def test_noise_presets(self):
        self.assertTrue(NoiseModel.preset('off').is_off)
        self.assertFalse(NoiseModel.preset('low').is_off)
        self.assertEqual(NoiseModel.preset(NoiseLevel.MED).dropout_prob, 0.05)
        with self.assertRaises(DomainException):
            NoiseModel(dropout_prob=1.5)


class TestPredictedVisibility(unittest.TestCase):

    def test_straight_above(self):
        est = estimate_of(cube(1, 0.0, 0.0))
        visible = predicted_visibility([est], camera((0.0, 0.0, 1.3), (0.0, 0.0, 0.7)), INTR)
        self.assertEqual(list(visible), [1])
        seen = visible[1]
        self.assertEqual(seen.r_iou, 0.0)
        self.assertTrue(seen.cells[Face.POS_Z].all())
        for face in Face:
            if face != Face.POS_Z:
                self.assertFalse(seen.cells[face].any())

    def test_full_occlusion(self):
        near, far = estimate_of(cube(1, 0.0, 0.0)), estimate_of(cube(2, 0.0, 0.3))
        visible = predicted_visibility([near, far], camera((0.0, -0.5, 0.75), (0.0, 0.3, 0.75)), INTR)
        self.assertIn(1, visible)
        self.assertTrue(2 not in visible or visible[2].n_cells == 0)
        cells = visible_cells(far, camera((0.0, -0.5, 0.75), (0.0, 0.3, 0.75)), INTR, [near, far])
        self.assertEqual(sum(int(m.sum()) for m in cells.values()), 0)

    def test_matches_visible_cells_per_estimate(self):
        ests = [estimate_of(cube(1, 0.0, 0.0)), estimate_of(cube(2, 0.0, 0.3)),
                estimate_of(cube(3, 0.15, 0.1, yaw=0.4)), estimate_of(cube(4, -0.2, 0.2, yaw=-0.2))]
        cam = camera((0.1, -0.5, 0.95), (0.0, 0.15, 0.75))
        visible = predicted_visibility(ests, cam, INTR)
        self.assertGreaterEqual(len(visible), 2)
        for est in ests:
            single = visible_cells(est, cam, INTR, ests)
            if est.id not in visible:
                self.assertFalse(any(m.any() for m in single.values()))
                continue
            for face in Face:
                np.testing.assert_array_equal(visible[est.id].cells[face], single[face])

    def test_r_iou_matches_rasterized_boxes(self):
        a, b = estimate_of(cube(1, 0.0, 0.0)), estimate_of(cube(2, 0.12, 0.06, yaw=0.3))
        cam = camera((0.35, -0.45, 1.05), (0.06, 0.03, 0.75))
        visible = predicted_visibility([a, b], cam, INTR)
        self.assertEqual(sorted(visible), [1, 2])

        boxes = [projected_bbox(e.pose, cam, INTR) for e in (a, b)]
        u, v = np.meshgrid(np.arange(INTR.width) + 0.5, np.arange(INTR.height) + 0.5)
        masks = [(u >= b0[0]) & (u < b0[2]) & (v >= b0[1]) & (v < b0[3]) for b0 in boxes]
        raster = np.count_nonzero(masks[0] & masks[1]) / np.count_nonzero(masks[0] | masks[1])
        self.assertAlmostEqual(visible[1].r_iou, raster, delta=0.02)
        self.assertAlmostEqual(visible[1].r_iou, visible[2].r_iou)

    def test_hemisphere_covers_every_cell(self):
        est = estimate_of(cube(1, 0.0, 0.0))
        union = {face: np.zeros(est.grids[face].status.size, dtype=bool) for face in Face}
        for view in candidate_views(BOUNDS, 0.7, 64, seed=0, targets=[est.pose.t], per_target=16):
            for face, mask in visible_cells(est, view.pose, INTR).items():
                union[face] |= mask
        for face in Face:
            self.assertTrue(union[face].all(), face)
