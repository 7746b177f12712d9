import math

import numpy as np
import pytest

from pillarbridge.convert import ConversionError, convert_detections

from conftest import random_native_detection

# the attack toolkit is the consumer of these files; its parser is the contract
from phantomkit import geometry, kitti_io

IMAGE_SIZE = (1242, 375)


class TestConvert:
    def test_roundtrip_100_random(self, calib):
        rng = np.random.default_rng(0)
        dets = [random_native_detection(rng) for _ in range(100)]
        lines, dropped = convert_detections(dets, calib, IMAGE_SIZE)
        assert dropped == 0
        labels = kitti_io.parse_labels("\n".join(lines))
        assert len(labels) == 100
        for det, lab in zip(dets, labels):
            assert lab.class_name == det["class_name"]
            rect = calib.lidar_to_rect(det["location"])[0]
            assert np.allclose(lab.location, rect, atol=0.005)
            assert np.allclose(lab.dims, det["dims"], atol=0.005)
            ry = calib.yaw_to_rotation_y(det["yaw"])
            assert abs(math.atan2(math.sin(lab.rotation_y - ry),
                                  math.cos(lab.rotation_y - ry))) <= 0.005 * (1 + 2 * math.pi)
            assert lab.score == pytest.approx(det["score"], abs=0.005)

    def test_identity_with_toolkit_label(self, calib):
        # a native box at a labeled pose emits exactly that label plus a score
        from phantomkit import synthetic
        scene = synthetic.make_scene(
            "000001", seed=1,
            objects=[synthetic.ObjectSpec("Car", x=16.0, y=1.0, yaw=0.7, n_points=500)])
        gt = scene.labels[0]
        native = {
            "class_name": "Car",
            "location": (16.0, 1.0, synthetic.GROUND_Z),
            "dims": gt.dims,
            "yaw": 0.7,
            "score": 0.83,
        }
        lines, _ = convert_detections([native], calib, scene.image_size)
        expected = kitti_io.write_labels([kitti_io.ObjectLabel(
            class_name=gt.class_name, truncation=0.0, occlusion=0, alpha=gt.alpha,
            bbox2d=gt.bbox2d, dims=gt.dims, location=gt.location,
            rotation_y=gt.rotation_y, score=0.83)]).strip()
        assert lines[0] == expected

    def test_foreign_class_dropped(self, calib):
        rng = np.random.default_rng(1)
        det = random_native_detection(rng)
        det["class_name"] = "Trafficcone"
        lines, dropped = convert_detections([det], calib, IMAGE_SIZE)
        assert lines == []
        assert dropped == 1

    def test_missing_field_names_index(self, calib):
        rng = np.random.default_rng(2)
        good = random_native_detection(rng)
        bad = dict(good)
        del bad["dims"]
        with pytest.raises(ConversionError, match="detection 1"):
            convert_detections([good, bad], calib, IMAGE_SIZE)

    def test_lines_parse_via_toolkit(self, calib):
        rng = np.random.default_rng(3)
        dets = [random_native_detection(rng) for _ in range(20)]
        lines, _ = convert_detections(dets, calib, IMAGE_SIZE)
        labels = kitti_io.parse_labels("\n".join(lines))
        for lab in labels:
            assert lab.score is not None
            assert 0.0 <= lab.score <= 1.0
