import json
import math

import numpy as np
import pytest

from conftest import road_poses
from splat_autolabel.adaptor import AdaptorConfig
from splat_autolabel.errors import InvalidBox, InvalidConfig
from splat_autolabel.geometry import Pose, pose_compose, rotation_about_axis, yaw_rotation
from splat_autolabel.labeling import (
    Box2D,
    Box3D,
    LabelConfig,
    eval_ap_ad,
    generate_labeled_view,
    heading,
    label_boxes,
    load_annotations,
    match_boxes,
    project_box3d,
    save_annotations,
    transform_annotations,
    world_perturbation,
    wrap_angle,
)
from splat_autolabel.renderer import CameraView


def car(x, y, frame=0, category="car", yaw=0.0):
    return Box3D(np.array([x, y, 1.0]), (4.0, 2.0, 1.5), yaw, category, frame)


def test_wrap_angle():
    assert wrap_angle(0.5) == pytest.approx(0.5)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-3 * math.pi / 2) == pytest.approx(math.pi / 2)


def test_box3d_validation_and_corners():
    with pytest.raises(InvalidBox):
        Box3D(np.zeros(3), (1.0, -1.0, 1.0), 0.0, "car", 0)
    with pytest.raises(InvalidBox):
        Box3D(np.zeros(2), (1.0, 1.0, 1.0), 0.0, "car", 0)
    with pytest.raises(InvalidBox):
        Box3D(np.array([0.0, np.nan, 0.0]), (1.0, 1.0, 1.0), 0.0, "car", 0)
    box = Box3D(np.zeros(3), (4.0, 2.0, 1.0), 0.0, "car", 0)
    np.testing.assert_allclose(box.corners().max(axis=0), [2.0, 1.0, 0.5])
    np.testing.assert_allclose(box.corners().min(axis=0), [-2.0, -1.0, -0.5])
    turned = Box3D(np.zeros(3), (4.0, 2.0, 1.0), math.pi / 2, "car", 0)
    np.testing.assert_allclose(turned.corners().max(axis=0), [1.0, 2.0, 0.5], atol=1e-12)


def test_box3d_json_round_trip():
    box = car(3.0, -1.0, frame=4, yaw=0.3)
    again = Box3D.from_json(json.loads(json.dumps(box.to_json())))
    np.testing.assert_array_equal(again.center, box.center)
    assert (again.size, again.yaw, again.category, again.frame) == (box.size, box.yaw, "car", 4)


def test_box2d():
    with pytest.raises(InvalidBox):
        Box2D(1.0, 0.0, 1.0, 2.0, "car", 0)
    a = Box2D(0.0, 0.0, 2.0, 2.0, "car", 0)
    b = Box2D(1.0, 1.0, 3.0, 3.0, "car", 0)
    assert a.area == 4.0
    assert a.iou(b) == pytest.approx(1.0 / 7.0)
    assert a.iou(Box2D(5.0, 5.0, 6.0, 6.0, "car", 0)) == 0.0
    assert b.to_json() == {"frame": 0, "category": "car", "bbox": [1.0, 1.0, 2.0, 2.0]}


def test_label_config_validation():
    with pytest.raises(InvalidConfig):
        LabelConfig(ap_gate=0.0)
    with pytest.raises(InvalidConfig):
        LabelConfig(recall_points=1)


def test_moving_the_scene_matches_moving_the_camera(rng):
    p_ori = road_poses(3)[2]
    delta = Pose(yaw_rotation(0.08), np.array([1.5, -0.2, 0.4]))
    p_nov = pose_compose(p_ori, delta)
    w = world_perturbation(p_ori, delta)
    points = rng.normal(size=(20, 3)) * 5.0
    moved = points @ w.rotation.T + w.translation
    np.testing.assert_allclose(p_ori.world_to_camera(moved), p_nov.world_to_camera(points), atol=1e-10)

    boxes = [car(12.0, 1.0, yaw=0.2), car(20.0, -3.0)]
    for before, after in zip(boxes, transform_annotations(boxes, w)):
        assert after.size == before.size
        np.testing.assert_allclose(p_ori.world_to_camera(after.corners()), p_nov.world_to_camera(before.corners()), atol=1e-9)


def test_heading():
    assert heading(yaw_rotation(0.0)) == 0.0
    assert heading(rotation_about_axis((0.0, 0.0, 1.0), 0.7)) == pytest.approx(0.7)


def test_projection_of_a_centred_box_is_symmetric(intrinsics):
    camera = Pose.identity()
    box = Box3D(np.array([0.0, 0.0, 10.0]), (2.0, 2.0, 2.0), 0.0, "car", 0)
    pixels, box2d = project_box3d(box, camera, intrinsics)
    assert pixels.shape == (8, 2)
    assert box2d.u_min + box2d.u_max == pytest.approx(2 * intrinsics.cx)
    assert box2d.v_min + box2d.v_max == pytest.approx(2 * intrinsics.cy)
    # front face at depth 9: half width 20 / 9 pixels
    assert box2d.u_max - intrinsics.cx == pytest.approx(20.0 / 9.0)


def test_projection_clips_at_the_near_plane(intrinsics):
    camera = Pose.identity()
    behind = Box3D(np.array([0.0, 0.0, -10.0]), (2.0, 2.0, 2.0), 0.0, "car", 0)
    assert project_box3d(behind, camera, intrinsics) is None
    around = Box3D(np.zeros(3), (4.0, 4.0, 4.0), 0.0, "car", 0)
    pixels, box2d = project_box3d(around, camera, intrinsics)
    assert np.isnan(pixels).any()
    assert (box2d.u_min, box2d.v_min, box2d.u_max, box2d.v_max) == (0.0, 0.0, 16.0, 16.0)
    aside = Box3D(np.array([100.0, 0.0, 5.0]), (1.0, 1.0, 1.0), 0.0, "car", 0)
    assert project_box3d(aside, camera, intrinsics) is None


def test_label_boxes_drops_small_boxes(intrinsics):
    near = Box3D(np.array([0.0, 0.0, 4.0]), (2.0, 2.0, 2.0), 0.0, "car", 0)
    far = Box3D(np.array([0.0, 0.0, 200.0]), (2.0, 2.0, 2.0), 0.0, "car", 0)
    assert len(label_boxes([near, far], Pose.identity(), intrinsics, min_area=25.0)) == 1
    assert len(label_boxes([near, far], Pose.identity(), intrinsics, min_area=0.0)) == 2


def test_generate_labeled_view(rng, intrinsics):
    pose = road_poses(1)[0]
    view = CameraView(pose, intrinsics, 0.5, "frame_0003.ppm")
    anns = [car(8.0, 0.0, frame=3)]
    rendered = []

    def render(v):
        rendered.append(v)
        return np.zeros((v.intrinsics.height, v.intrinsics.width, 3))

    def shift(p):
        return Pose(p.rotation, p.translation + 1.0)

    cfg = AdaptorConfig()
    labeled = generate_labeled_view(3, view, anns, cfg, shift, render, rng)
    assert labeled.frame == 3
    assert labeled.pose_owcs.allclose(pose_compose(pose, labeled.perturbation))
    assert labeled.pose_ewcs.allclose(shift(labeled.pose_owcs))
    assert rendered[0].pose.allclose(labeled.pose_ewcs)
    assert rendered[0].name == "frame_0003.ppm~novel"
    assert labeled.image.shape == (16, 16, 3)
    assert labeled.boxes2d == label_boxes(anns, labeled.pose_owcs, intrinsics)
    assert len(labeled.boxes3d) == 1
    assert set(labeled.manifest()) == {"frame", "perturbation", "p_owcs", "p_ewcs", "boxes3d", "boxes2d"}

    skipped = generate_labeled_view(3, view, anns, cfg, shift, None, rng)
    assert skipped.image is None


def test_matching_respects_frame_category_and_gate():
    gt = [car(0.0, 0.0), car(10.0, 0.0)]
    pred = [car(10.5, 0.0), car(0.2, 0.0, frame=1), car(0.0, 0.3, category="truck"), car(0.0, 1.0)]
    assert match_boxes(gt, pred, gate=2.0) == [(1, 0, pytest.approx(0.5)), (0, 3, pytest.approx(1.0))]
    assert match_boxes(gt, pred, gate=0.4) == []


def test_matching_is_greedy_nearest_first():
    gt = [car(0.0, 0.0), car(1.0, 0.0)]
    pred = [car(0.9, 0.0)]
    assert [(i, j) for i, j, _ in match_boxes(gt, pred)] == [(1, 0)]


def test_ap_and_ad():
    gt = [car(0.0, 0.0)]
    assert eval_ap_ad(gt, gt) == (100.0, 0.0)
    assert eval_ap_ad([], gt) == (0.0, None)
    assert eval_ap_ad(gt, []) == (0.0, None)
    assert eval_ap_ad(gt, [car(5.0, 0.0)]) == (0.0, None)
    ap, ad = eval_ap_ad(gt, [car(0.5, 0.0), car(30.0, 0.0)])
    assert (ap, ad) == (100.0, pytest.approx(0.5))
    ap, _ = eval_ap_ad(gt, [car(30.0, 0.0), car(0.5, 0.0)])
    assert ap == pytest.approx(50.0)
    ap, _ = eval_ap_ad([car(0.0, 0.0), car(50.0, 0.0)], [car(0.0, 0.0)])
    assert ap == pytest.approx(100.0 * 51 / 101)


def test_annotations_file(tmp_path):
    boxes = [car(1.0, 2.0, frame=0), car(3.0, 4.0, frame=1, yaw=-0.5)]
    path = str(tmp_path / "labels.json")
    save_annotations(boxes, path)
    loaded = load_annotations(path)
    assert [(b.frame, b.yaw) for b in loaded] == [(0, 0.0), (1, -0.5)]
    (tmp_path / "bad.json").write_text('{"frame": 0}')
    with pytest.raises(InvalidConfig):
        load_annotations(str(tmp_path / "bad.json"))
    (tmp_path / "missing.json").write_text('[{"frame": 0}]')
    with pytest.raises(InvalidConfig):
        load_annotations(str(tmp_path / "missing.json"))
