import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from phantomkit import geometry, kitti_io
from phantomkit.geometry import Box3D, ImageBBox

from conftest import random_cloud


def homogeneous_oracle(points, calib):
    """Independent projection: one precomposed 4x4 homogeneous product per point."""
    tr = np.eye(4)
    tr[:3, :] = calib.tr_velo_to_cam
    r0 = np.eye(4)
    r0[:3, :3] = calib.r0_rect
    p2 = np.vstack([calib.p2, [0, 0, 0, 1]])
    chain = p2 @ r0 @ tr
    out = []
    for p in points:
        y = chain @ np.array([p[0], p[1], p[2], 1.0])
        out.append((y[0] / y[2], y[1] / y[2], y[2]))
    return np.array(out)


def rect_oracle(points, calib):
    tr = np.eye(4)
    tr[:3, :] = calib.tr_velo_to_cam
    r0 = np.eye(4)
    r0[:3, :3] = calib.r0_rect
    chain = r0 @ tr
    return np.array([(chain @ np.array([*p, 1.0]))[:3] for p in points])


class TestTransforms:
    def test_identity_chain(self, identity_calib):
        out = geometry.lidar_to_rect(np.array([1.0, 2.0, 3.0]), identity_calib)
        assert np.allclose(out, [1, 2, 3], atol=0)

    def test_pure_translation(self):
        calib = kitti_io.parse_calibration(
            "P2: 1 0 0 0 0 1 0 0 0 0 1 0\n"
            "R0_rect: 1 0 0 0 1 0 0 0 1\n"
            "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0.27\n")
        out = geometry.lidar_to_rect(np.zeros(3), calib)
        assert np.allclose(out, [0, 0, 0.27], atol=1e-15)

    def test_1000_random_points_vs_homogeneous_oracle(self, kitti_calib):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-60, 60, (1000, 3))
        rect = geometry.lidar_to_rect(pts, kitti_calib)
        expected = rect_oracle(pts, kitti_calib)
        assert np.abs(rect - expected).max() <= 1e-9

    def test_rect_to_lidar_inverts(self, kitti_calib):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-60, 60, (200, 3))
        back = geometry.rect_to_lidar(geometry.lidar_to_rect(pts, kitti_calib), kitti_calib)
        assert np.abs(back - pts).max() <= 1e-9


class TestRectToImage:
    def test_principal_point_ray(self, pinhole_calib):
        u, v, depth = geometry.rect_to_image(np.array([0.0, 0.0, 10.0]), pinhole_calib)
        assert (u, v, depth) == (600.0, 180.0, 10.0)

    def test_hand_evaluated_offaxis(self, pinhole_calib):
        # u = 700*1/10 + 600 = 670
        u, v, depth = geometry.rect_to_image(np.array([1.0, 0.0, 10.0]), pinhole_calib)
        assert u == pytest.approx(670.0, abs=1e-12)
        assert v == pytest.approx(180.0, abs=1e-12)
        assert depth == 10.0

    def test_behind_camera_signal(self, pinhole_calib):
        _, _, depth = geometry.rect_to_image(np.array([0.0, 0.0, -5.0]), pinhole_calib)
        assert depth < 0

    def test_near_zero_depth_nan(self, pinhole_calib):
        u, v, depth = geometry.rect_to_image(np.array([1.0, 1.0, 0.0]), pinhole_calib)
        assert math.isnan(u) and math.isnan(v)

    def test_pinhole_scaling_invariance(self, pinhole_calib):
        # exact for a pure pinhole (zero offset column); KITTI's P2 carries a
        # stereo-baseline offset, so the ray law is stated on the pinhole
        rng = np.random.default_rng(3)
        for _ in range(100):
            p = rng.uniform(0.5, 30, 3) * np.array([1, 0.3, 1])
            p[2] = abs(p[2]) + 1.0
            lam = float(rng.uniform(0.2, 5.0))
            u1, v1, d1 = geometry.rect_to_image(p, pinhole_calib)
            u2, v2, d2 = geometry.rect_to_image(lam * p, pinhole_calib)
            assert abs(u1 - u2) <= 1e-9 * max(1.0, abs(u1))
            assert abs(v1 - v2) <= 1e-9 * max(1.0, abs(v1))
            assert abs(d2 - lam * d1) <= 1e-9 * max(1.0, abs(d1))


class TestProjectCloud:
    def test_empty(self, kitti_calib):
        out = geometry.project_cloud(kitti_io.PointCloud(np.zeros((0, 4), np.float32)),
                                     kitti_calib, (100, 100))
        assert len(out) == 0

    def test_behind_camera_flagged(self, identity_calib):
        pc = kitti_io.PointCloud(np.array([[0, 0, -5, 0.5]], dtype=np.float32))
        out = geometry.project_cloud(pc, identity_calib, (100, 100))
        assert not out.in_frustum[0]

    def test_agrees_with_pointwise_chain(self, kitti_calib, car_scene):
        pc = car_scene.cloud
        out = geometry.project_cloud(pc, kitti_calib, car_scene.image_size)
        # per-point scalar loop over the same public single-point operations
        width, height = car_scene.image_size
        n_in = 0
        for i in range(0, len(pc), 101):
            rect = geometry.lidar_to_rect(pc.xyz[i].astype(np.float64), kitti_calib)
            u, v, d = geometry.rect_to_image(rect, kitti_calib)
            flag = d > 0 and 0 <= u < width and 0 <= v < height
            assert flag == bool(out.in_frustum[i])
            if out.in_frustum[i]:
                assert u == pytest.approx(out.u[i], abs=0)
                n_in += 1
        assert n_in > 0


class TestBoxCorners:
    def test_unit_cube(self):
        b = Box3D((0, 0, 0), (1, 1, 1), 0.0)
        corners = geometry.box_corners(b)
        assert sorted(np.round(corners[:, 1], 9).tolist()) == [-1, -1, -1, -1, 0, 0, 0, 0]
        assert np.abs(corners[:, 0]).max() == pytest.approx(0.5)
        assert np.abs(corners[:, 2]).max() == pytest.approx(0.5)

    def test_quarter_turn_swaps_l_w(self):
        b = Box3D((0, 0, 0), (1.0, 2.0, 4.0), 0.0)
        r = Box3D((0, 0, 0), (1.0, 2.0, 4.0), math.pi / 2)
        cb, cr = geometry.box_corners(b), geometry.box_corners(r)
        assert np.abs(cb[:, 0]).max() == pytest.approx(2.0)   # l/2 along x
        assert np.abs(cb[:, 2]).max() == pytest.approx(1.0)   # w/2 along z
        assert np.abs(cr[:, 0]).max() == pytest.approx(1.0)
        assert np.abs(cr[:, 2]).max() == pytest.approx(2.0)

    def test_corner_set_invariant_under_full_turn(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            center = tuple(rng.uniform(-20, 20, 3))
            dims = tuple(rng.uniform(0.3, 5, 3))
            ry = float(rng.uniform(-np.pi, np.pi))
            c1 = geometry.box_corners(Box3D(center, dims, ry))
            c2 = geometry.box_corners(Box3D(center, dims, ry + 2 * math.pi))
            d = np.abs(np.sort(c1, axis=0) - np.sort(c2, axis=0)).max()
            assert d <= 1e-9


class TestBoxToImageBBox:
    def test_fully_behind(self, pinhole_calib):
        b = Box3D((0, 0, -20), (1, 1, 1), 0.0)
        assert geometry.box_to_image_bbox(b, pinhole_calib, (1242, 375)) is None

    def test_on_axis_symmetry(self, pinhole_calib):
        # centered on the optical axis: center_bottom y = h/2 puts the box
        # symmetric about the principal point (600, 180)
        b = Box3D((0.0, 0.75, 15.0), (1.5, 1.2, 1.2), 0.0)
        bbox = geometry.box_to_image_bbox(b, pinhole_calib, (1242, 375))
        assert (bbox.left + bbox.right) / 2 == pytest.approx(600.0, abs=1e-9)
        assert (bbox.top + bbox.bottom) / 2 == pytest.approx(180.0, abs=1e-9)

    def test_projected_corners_inside_bbox(self, kitti_calib):
        rng = np.random.default_rng(5)
        found = 0
        size = (1242, 375)
        while found < 100:
            b = Box3D((rng.uniform(-8, 8), rng.uniform(0.5, 2.0), rng.uniform(8, 50)),
                      tuple(rng.uniform(0.5, 4, 3)), float(rng.uniform(-np.pi, np.pi)))
            bbox = geometry.box_to_image_bbox(b, kitti_calib, size)
            if bbox is None:
                continue
            found += 1
            u, v, d = geometry.rect_to_image(geometry.box_corners(b), kitti_calib)
            ok = (d > 0) & (u >= 0) & (u < size[0]) & (v >= 0) & (v < size[1])
            eps = 1e-9
            assert np.all(u[ok] >= bbox.left - eps) and np.all(u[ok] <= bbox.right + eps)
            assert np.all(v[ok] >= bbox.top - eps) and np.all(v[ok] <= bbox.bottom + eps)

    def test_perspective_halving(self, pinhole_calib):
        # near-zero depth extent so the footprint does not skew the ratio
        size = (1242, 375)
        near = Box3D((0.0, 0.75, 12.0), (1.5, 1e-9, 2.0), 0.0)
        far = Box3D((0.0, 0.75, 24.0), (1.5, 1e-9, 2.0), 0.0)
        b1 = geometry.box_to_image_bbox(near, pinhole_calib, size)
        b2 = geometry.box_to_image_bbox(far, pinhole_calib, size)
        assert b2.width == pytest.approx(b1.width / 2, abs=1e-6)
        assert b2.height == pytest.approx(b1.height / 2, abs=1e-6)


def shapely_iou(a, b):
    pa = Polygon(geometry.box_corners(a)[:4][:, [0, 2]])
    pb = Polygon(geometry.box_corners(b)[:4][:, [0, 2]])
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return inter / union if union > 0 else 0.0


class TestBevIou:
    def test_identical(self):
        b = Box3D((3, 1, 20), (1.5, 1.8, 4.0), 0.7)
        assert geometry.bev_iou(b, b) == 1.0

    def test_disjoint(self):
        a = Box3D((0, 0, 10), (1, 1, 1), 0.0)
        b = Box3D((10, 0, 10), (1, 1, 1), 0.0)
        assert geometry.bev_iou(a, b) == 0.0

    def test_analytic_half_offset(self):
        a = Box3D((0, 0, 10), (1, 1, 1), 0.0)
        b = Box3D((0.5, 0, 10), (1, 1, 1), 0.0)
        assert geometry.bev_iou(a, b) == pytest.approx(1 / 3, abs=1e-9)

    def test_500_random_pairs_vs_shapely(self):
        rng = np.random.default_rng(6)
        for _ in range(500):
            a = Box3D((rng.uniform(-5, 5), 0, rng.uniform(-5, 5)),
                      tuple(rng.uniform(0.5, 4, 3)), float(rng.uniform(-np.pi, np.pi)))
            b = Box3D((rng.uniform(-5, 5), 0, rng.uniform(-5, 5)),
                      tuple(rng.uniform(0.5, 4, 3)), float(rng.uniform(-np.pi, np.pi)))
            assert geometry.bev_iou(a, b) == pytest.approx(shapely_iou(a, b), abs=1e-6)

    def test_symmetry_and_translation_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = Box3D((rng.uniform(-5, 5), 0, rng.uniform(-5, 5)),
                      tuple(rng.uniform(0.5, 4, 3)), float(rng.uniform(-np.pi, np.pi)))
            b = Box3D((rng.uniform(-5, 5), 0, rng.uniform(-5, 5)),
                      tuple(rng.uniform(0.5, 4, 3)), float(rng.uniform(-np.pi, np.pi)))
            assert geometry.bev_iou(a, b) == pytest.approx(geometry.bev_iou(b, a), abs=1e-12)
            dx, dz = rng.uniform(-30, 30, 2)
            a2 = Box3D((a.center_bottom[0] + dx, 0, a.center_bottom[2] + dz), a.dims, a.rotation_y)
            b2 = Box3D((b.center_bottom[0] + dx, 0, b.center_bottom[2] + dz), b.dims, b.rotation_y)
            assert geometry.bev_iou(a2, b2) == pytest.approx(geometry.bev_iou(a, b), abs=1e-9)


class TestPointsInBox:
    def test_empty_cloud(self, kitti_calib):
        pc = kitti_io.PointCloud(np.zeros((0, 4), np.float32))
        b = Box3D((0, 0, 10), (1, 1, 1), 0.0)
        assert len(geometry.points_in_box(pc, b, kitti_calib)) == 0

    def test_center_point_included(self, kitti_calib):
        center_rect = np.array([2.0, 1.0, 15.0])
        b = Box3D(tuple(center_rect), (1.6, 1.7, 4.0), 0.5)
        mid = center_rect + np.array([0.0, -0.8, 0.0])  # half height up
        p_lidar = geometry.rect_to_lidar(mid, kitti_calib)
        pc = kitti_io.PointCloud(np.array([[*p_lidar, 0.5]], dtype=np.float32))
        assert geometry.points_in_box(pc, b, kitti_calib).tolist() == [0]

    def test_against_inverse_rotation_oracle(self, kitti_calib):
        rng = np.random.default_rng(8)
        for _ in range(20):
            pc = random_cloud(rng, 400, x=(5, 30), y=(-10, 10), z=(-2, 1))
            b = Box3D((rng.uniform(-8, 8), rng.uniform(0, 2), rng.uniform(5, 28)),
                      tuple(rng.uniform(0.8, 4, 3)), float(rng.uniform(-np.pi, np.pi)))
            got = set(geometry.points_in_box(pc, b, kitti_calib).tolist())
            # oracle: explicit per-point loop, rotate into the box frame by the
            # transposed rotation built from scratch
            c, s = math.cos(b.rotation_y), math.sin(b.rotation_y)
            h, w, l = b.dims
            expected = set()
            rect = geometry.lidar_to_rect(pc.xyz, kitti_calib)
            for i, p in enumerate(rect):
                dx = p - np.asarray(b.center_bottom)
                lx = c * dx[0] - s * dx[2]
                lz = s * dx[0] + c * dx[2]
                if abs(lx) <= l / 2 and abs(lz) <= w / 2 and -h <= dx[1] <= 0:
                    expected.add(i)
            assert got == expected


class TestChainConsistency:
    def test_project_cloud_matches_composition(self, kitti_calib, car_scene):
        pc = car_scene.cloud
        out = geometry.project_cloud(pc, kitti_calib, car_scene.image_size)
        rect = geometry.lidar_to_rect(pc.xyz, kitti_calib)
        u, v, d = geometry.rect_to_image(rect, kitti_calib)
        ok = out.in_frustum
        assert np.array_equal(out.u[ok], u[ok])
        assert np.array_equal(out.v[ok], v[ok])
        assert np.array_equal(out.depth, d)


class TestWrapAngle:
    def test_range(self):
        for a in np.linspace(-12, 12, 500):
            w = geometry.wrap_angle(a)
            assert -math.pi < w <= math.pi
            assert math.cos(w) == pytest.approx(math.cos(a), abs=1e-12)
            assert math.sin(w) == pytest.approx(math.sin(a), abs=1e-12)
