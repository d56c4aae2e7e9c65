import numpy as np
import pytest

from conftest import random_pose
from splat_autolabel.adaptor import PosePair
from splat_autolabel.colmap import (
    SceneBundle,
    load_colmap_text,
    load_scene_dir,
    normalized_times,
    read_cameras_text,
    read_images_text,
    read_points3d_text,
    write_colmap_text,
    write_scene_dir,
)
from splat_autolabel.errors import CountMismatch, EmptySequence, MalformedLine, UnsupportedCameraModel
from splat_autolabel.geometry import Intrinsics, Pose
from splat_autolabel.labeling import Box3D
from splat_autolabel.renderer import CameraView

CAMERAS = """\
# Camera list with one line of data per camera:
1 PINHOLE 16 12 20.0 21.0 8.0 6.0
2 SIMPLE_PINHOLE 8 8 10.0 4.0 4.0
"""

IMAGES = """\
# Image list with two lines of data per image:
2 1 0 0 0 0 0 0 1 b.ppm
10 20 3

1 0 0 0 1 1 2 3 2 a.ppm

"""

POINTS = """\
1 0.5 1.5 2.5 255 0 51 0.1 1 2
2 -1 0 1 0 128 255 0.3
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_normalized_times():
    assert normalized_times(0) == []
    assert normalized_times(1) == [0.0]
    assert normalized_times(5) == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_read_cameras(tmp_path):
    cameras = read_cameras_text(write(tmp_path, "cameras.txt", CAMERAS))
    assert cameras[1] == Intrinsics(20.0, 21.0, 8.0, 6.0, 16, 12)
    assert cameras[2] == Intrinsics(10.0, 10.0, 4.0, 4.0, 8, 8)


@pytest.mark.parametrize(
    ("line", "error"),
    [
        ("1 OPENCV 16 12 20 20 8 6 0 0 0 0", UnsupportedCameraModel),
        ("1 PINHOLE 16 12 20 20 8", MalformedLine),
        ("1 PINHOLE 16", MalformedLine),
        ("x PINHOLE 16 12 20 20 8 6", MalformedLine),
    ],
)
def test_read_cameras_errors(tmp_path, line, error):
    with pytest.raises(error):
        read_cameras_text(write(tmp_path, "cameras.txt", line + "\n"))


def test_malformed_line_names_the_line(tmp_path):
    path = write(tmp_path, "cameras.txt", "# header\n1 PINHOLE 16\n")
    with pytest.raises(MalformedLine, match=":2"):
        read_cameras_text(path)


def test_read_images(tmp_path):
    images = read_images_text(write(tmp_path, "images.txt", IMAGES))
    assert [im.name for im in images] == ["b.ppm", "a.ppm"]
    np.testing.assert_allclose(images[0].pose().matrix(), Pose.identity().matrix())
    # 180 degrees about z, then translated
    a = images[1].pose()
    np.testing.assert_allclose(a.rotation, np.diag([-1.0, -1.0, 1.0]), atol=1e-12)
    np.testing.assert_allclose(a.center, [1.0, 2.0, -3.0], atol=1e-12)


def test_read_images_errors(tmp_path):
    with pytest.raises(MalformedLine):
        read_images_text(write(tmp_path, "images.txt", "1 1 0 0 0 0 0 0 1\n\n"))
    with pytest.raises(MalformedLine):
        read_images_text(write(tmp_path, "images.txt", "1 0 0 0 0 0 0 0 1 a.ppm\n\n"))


def test_read_points(tmp_path):
    xyz, rgb = read_points3d_text(write(tmp_path, "points3D.txt", POINTS))
    np.testing.assert_allclose(xyz, [[0.5, 1.5, 2.5], [-1.0, 0.0, 1.0]])
    np.testing.assert_allclose(rgb, [[1.0, 0.0, 0.2], [0.0, 128 / 255, 1.0]])
    with pytest.raises(MalformedLine):
        read_points3d_text(write(tmp_path, "bad.txt", "1 0 0 0 300 0 0 0.1\n"))
    empty, colors = read_points3d_text(write(tmp_path, "empty.txt", "# nothing\n"))
    assert empty.shape == (0, 3) and colors.shape == (0, 3)


def test_load_orders_by_name(tmp_path):
    write(tmp_path, "cameras.txt", CAMERAS)
    write(tmp_path, "images.txt", IMAGES)
    write(tmp_path, "points3D.txt", POINTS)
    bundle = load_colmap_text(str(tmp_path))
    assert [v.name for v in bundle.views] == ["a.ppm", "b.ppm"]
    assert [v.time for v in bundle.views] == [0.0, 1.0]
    assert bundle.views[0].intrinsics.width == 8
    write(tmp_path, "images.txt", "1 1 0 0 0 0 0 0 7 a.ppm\n\n")
    with pytest.raises(CountMismatch):
        load_colmap_text(str(tmp_path))


def test_bundle_counts():
    with pytest.raises(CountMismatch):
        SceneBundle([], np.zeros((2, 3)), np.zeros((1, 3)))
    view = CameraView(Pose.identity(), Intrinsics(1.0, 1.0, 0.5, 0.5, 1, 1))
    with pytest.raises(CountMismatch):
        SceneBundle([view], np.zeros((0, 3)), np.zeros((0, 3)), images=[])


def test_scene_dir_round_trip(tmp_path, rng):
    k = Intrinsics(20.0, 20.0, 8.0, 6.0, 16, 12)
    views = [CameraView(random_pose(rng), k, 0.0, f"frame_{i:04d}.ppm") for i in range(3)]
    images = [rng.integers(0, 256, size=(12, 16, 3)) / 255.0 for _ in views]
    points = rng.normal(size=(5, 3))
    colors = rng.integers(0, 256, size=(5, 3)) / 255.0
    pairs = [PosePair(i, v.pose, v.pose) for i, v in enumerate(views)]
    boxes = [Box3D(np.ones(3), (1.0, 1.0, 1.0), 0.2, "car", 1)]
    write_scene_dir(str(tmp_path), SceneBundle(views, points, colors, images, pairs, boxes))

    bundle = load_scene_dir(str(tmp_path))
    assert [v.name for v in bundle.views] == [v.name for v in views]
    assert [v.time for v in bundle.views] == [0.0, 0.5, 1.0]
    for a, b in zip(bundle.views, views):
        assert a.pose.allclose(b.pose, 1e-9)
        assert a.intrinsics == k
    np.testing.assert_allclose(bundle.points, points)
    np.testing.assert_allclose(bundle.colors, colors)
    for a, b in zip(bundle.images, images):
        np.testing.assert_array_equal(a, b)
    assert [p.frame for p in bundle.pairs] == [0, 1, 2]
    assert bundle.annotations[0].category == "car"

    without = load_scene_dir(str(tmp_path), with_images=False)
    assert without.images is None


def test_scene_dir_checks_image_sizes(tmp_path, rng):
    k = Intrinsics(20.0, 20.0, 8.0, 6.0, 16, 12)
    view = CameraView(Pose.identity(), k, 0.0, "a.ppm")
    write_scene_dir(str(tmp_path), SceneBundle([view], np.zeros((0, 3)), np.zeros((0, 3)), [np.zeros((6, 8, 3))]))
    with pytest.raises(CountMismatch):
        load_scene_dir(str(tmp_path))


def test_scene_dir_needs_views(tmp_path):
    write_colmap_text(str(tmp_path), [], np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(EmptySequence):
        load_scene_dir(str(tmp_path))
