import math
import unittest

import numpy as np
from shapely.geometry import Polygon

from pyobjmap.util import (
    box_iou_2d, euler_derivatives, euler_to_matrix, fold_quarter, look_at_rotation, matrix_to_euler,
    ray_box_hits, ray_cylinder_hits, rectangle_corners, rotation_between, wrap_angle
)


class TestAngles(unittest.TestCase):

    def test_wrap_angle(self):
        self.assertAlmostEqual(wrap_angle(3 * math.pi / 2), -math.pi / 2)
        self.assertAlmostEqual(wrap_angle(-math.pi), math.pi)
        self.assertEqual(wrap_angle(math.pi), math.pi)
        self.assertAlmostEqual(wrap_angle(4 * math.pi + 0.1), 0.1)

    def test_fold_quarter(self):
        self.assertAlmostEqual(float(fold_quarter(math.radians(88))), math.radians(-2))
        self.assertAlmostEqual(float(fold_quarter(math.radians(-85))), math.radians(5))
        folded = fold_quarter(np.linspace(-10, 10, 101))
        self.assertTrue(np.all(folded >= -math.pi / 4) and np.all(folded < math.pi / 4))

    def test_euler_round_trip(self):
        theta = np.array([0.1, -0.2, 0.3])
        np.testing.assert_allclose(matrix_to_euler(euler_to_matrix(theta)), theta, atol=1e-12)

    def test_euler_derivatives(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            theta = rng.uniform(-1.0, 1.0, size=3)
            rot, d_rot = euler_derivatives(theta)
            np.testing.assert_allclose(rot, euler_to_matrix(theta), atol=1e-12)
            for j in range(3):
                step = np.zeros(3)
                step[j] = 1e-6
                numeric = (euler_to_matrix(theta + step) - euler_to_matrix(theta - step)) / 2e-6
                np.testing.assert_allclose(d_rot[j], numeric, atol=1e-8)

    def test_rotation_between(self):
        for a, b in [((0, 0, 1), (0, 1, 0)), ((1, 0, 0), (1, 0, 0)), ((0, 0, 1), (0, 0, -1))]:
            rot = rotation_between(a, b)
            np.testing.assert_allclose(rot @ np.asarray(a, dtype=float), b, atol=1e-12)
            self.assertAlmostEqual(np.linalg.det(rot), 1.0)


class TestLookAt(unittest.TestCase):

    def test_forward_points_at_target(self):
        rot = look_at_rotation((0.3, -0.4, 1.2), (0.0, 0.0, 0.7))
        forward = np.array([-0.3, 0.4, -0.5])
        np.testing.assert_allclose(rot[:, 2], forward / np.linalg.norm(forward), atol=1e-12)
        np.testing.assert_allclose(rot.T @ rot, np.eye(3), atol=1e-12)
        self.assertAlmostEqual(np.linalg.det(rot), 1.0)
        # image x stays horizontal
        self.assertAlmostEqual(rot[2, 0], 0.0)

    def test_straight_down(self):
        rot = look_at_rotation((0.0, 0.0, 1.3), (0.0, 0.0, 0.7))
        np.testing.assert_allclose(rot[:, 0], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(rot[:, 2], [0.0, 0.0, -1.0])
        self.assertAlmostEqual(np.linalg.det(rot), 1.0)


class TestPolygons(unittest.TestCase):

    def test_rectangle(self):
        corners = rectangle_corners((1.0, 2.0), (0.5, 0.25), 0.0)
        np.testing.assert_allclose(corners[0], [1.5, 2.25])
        self.assertAlmostEqual(Polygon(corners).area, 0.5)

    def test_rotated_rectangle_keeps_area(self):
        corners = rectangle_corners((0.0, 0.0), (0.5, 0.25), 0.7)
        self.assertAlmostEqual(Polygon(corners).area, 0.5)

    def test_box_iou_2d(self):
        self.assertEqual(box_iou_2d((0, 0, 10, 10), (20, 20, 30, 30)), 0.0)
        self.assertAlmostEqual(box_iou_2d((0, 0, 10, 10), (0, 0, 10, 10)), 1.0)
        self.assertAlmostEqual(box_iou_2d((0, 0, 10, 10), (5, 0, 15, 10)), 1.0 / 3.0)


class TestRays(unittest.TestCase):

    def test_box_hit_and_miss(self):
        origins = np.array([[0.0, 0.0, -1.0], [0.5, 0.0, -1.0]])
        dirs = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        hits = ray_box_hits(origins, dirs, (0, 0, 0), np.eye(3), (0.1, 0.1, 0.1), np.array([2.0, 2.0]))
        self.assertEqual(hits.tolist(), [True, False])

    def test_box_beyond_max_dist(self):
        hits = ray_box_hits(np.array([[0.0, 0.0, -1.0]]), np.array([[0.0, 0.0, 1.0]]), (0, 0, 0), np.eye(3),
                            (0.1, 0.1, 0.1), np.array([0.5]))
        self.assertFalse(hits[0])

    def test_cylinder(self):
        origins = np.array([[-1.0, 0.0, 0.0], [-1.0, 0.5, 0.0], [0.0, 0.0, 1.0]])
        dirs = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
        hits = ray_cylinder_hits(origins, dirs, (0, 0, 0), 0.1, 0.2, np.full(3, 5.0))
        self.assertEqual(hits.tolist(), [True, False, True])
