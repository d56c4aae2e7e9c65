"""
COLMAP text models and scene directories.

A scene directory holds a sparse reconstruction in COLMAP's text layout plus
the frames and optional side files:

    cameras.txt  images.txt  points3D.txt
    images/<name>        frames named in images.txt
    pairs.json           optional pose pairs for the adaptor
    anns.json            optional 3D box annotations

images.txt stores world-to-camera rotations (as w, x, y, z quaternions) and
translations; they are inverted into camera-to-world poses on load. Frames
are ordered by image name and get timestamps evenly spaced over [0, 1].
"""

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from splat_autolabel.adaptor import PosePair, load_pairs, save_pairs
from splat_autolabel.errors import CountMismatch, EmptySequence, MalformedLine, UnsupportedCameraModel
from splat_autolabel.geometry import (
    Intrinsics,
    Pose,
    normalize_quaternions,
    pose_inverse,
    quaternion_to_rotation,
    rotation_to_quaternion,
)
from splat_autolabel.images import read_image, write_image
from splat_autolabel.labeling import Box3D, load_annotations, save_annotations
from splat_autolabel.renderer import CameraView
from splat_autolabel.util import atomic_write

SUPPORTED_MODELS = ("PINHOLE", "SIMPLE_PINHOLE")


@dataclass(frozen=True)
class ColmapImage:
    image_id: int
    rotation: np.ndarray  # world to camera
    translation: np.ndarray
    camera_id: int
    name: str

    def pose(self) -> Pose:
        return pose_inverse(Pose(self.rotation, self.translation))


@dataclass
class SceneBundle:
    views: List[CameraView]
    points: np.ndarray
    colors: np.ndarray
    images: Optional[List[np.ndarray]] = None
    pairs: Optional[List[PosePair]] = None
    annotations: Optional[List[Box3D]] = None
    names: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.points) != len(self.colors):
            msg = f"{len(self.points)} points but {len(self.colors)} colors"
            raise CountMismatch(msg)
        if self.images is not None and len(self.images) != len(self.views):
            msg = f"{len(self.views)} views but {len(self.images)} images"
            raise CountMismatch(msg)


def normalized_times(count: int) -> List[float]:
    if count <= 1:
        return [0.0] * count
    return [i / (count - 1) for i in range(count)]


def _data_lines(path: str) -> List[Tuple[int, str]]:
    with open(path) as f:
        return [(number, line.strip()) for number, line in enumerate(f, start=1)]


def read_cameras_text(path: str) -> Dict[int, Intrinsics]:
    cameras = {}
    for number, line in _data_lines(path):
        if not line or line.startswith("#"):
            continue
        elems = line.split()
        if len(elems) < 4:  # noqa: PLR2004
            raise MalformedLine(path, number, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]")
        model = elems[1]
        if model not in SUPPORTED_MODELS:
            msg = f"{path}:{number}: camera model {model} is not supported (only {', '.join(SUPPORTED_MODELS)})"
            raise UnsupportedCameraModel(msg)
        try:
            camera_id, width, height = int(elems[0]), int(elems[2]), int(elems[3])
            params = [float(x) for x in elems[4:]]
            if model == "SIMPLE_PINHOLE" and len(params) == 3:  # noqa: PLR2004
                f, cx, cy = params
                cameras[camera_id] = Intrinsics(f, f, cx, cy, width, height)
            elif model == "PINHOLE" and len(params) == 4:  # noqa: PLR2004
                fx, fy, cx, cy = params
                cameras[camera_id] = Intrinsics(fx, fy, cx, cy, width, height)
            else:
                raise MalformedLine(path, number, f"wrong parameter count for {model}")
        except ValueError as e:
            if isinstance(e, MalformedLine):
                raise
            raise MalformedLine(path, number, str(e)) from e
    return cameras


def read_images_text(path: str) -> List[ColmapImage]:
    """
    Two lines per image; the second (2D observations) is ignored and may be empty.
    """
    images = []
    lines = _data_lines(path)
    i = 0
    while i < len(lines):
        number, line = lines[i]
        i += 1
        if not line or line.startswith("#"):
            continue
        elems = line.split()
        if len(elems) != 10:  # noqa: PLR2004
            raise MalformedLine(path, number, "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME")
        try:
            q = np.array([float(x) for x in elems[1:5]])
            t = np.array([float(x) for x in elems[5:8]])
            if not np.linalg.norm(q) > 0:
                raise MalformedLine(path, number, "zero quaternion")
            rotation = quaternion_to_rotation(normalize_quaternions(q))
            image = ColmapImage(int(elems[0]), rotation, t, int(elems[8]), elems[9])
            image.pose()
            images.append(image)
        except ValueError as e:
            if isinstance(e, MalformedLine):
                raise
            raise MalformedLine(path, number, str(e)) from e
        i += 1  # observations line
    return images


def read_points3d_text(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Positions (N, 3) and colors (N, 3) scaled to [0, 1].
    """
    xyz = []
    rgb = []
    for number, line in _data_lines(path):
        if not line or line.startswith("#"):
            continue
        elems = line.split()
        if len(elems) < 8:  # noqa: PLR2004
            raise MalformedLine(path, number, "expected POINT3D_ID X Y Z R G B ERROR TRACK[]")
        try:
            point = [float(x) for x in elems[1:4]]
            color = [int(x) for x in elems[4:7]]
        except ValueError as e:
            raise MalformedLine(path, number, str(e)) from e
        if not np.all(np.isfinite(point)) or any(c < 0 or c > 255 for c in color):  # noqa: PLR2004
            raise MalformedLine(path, number, "non-finite position or color outside 0..255")
        xyz.append(point)
        rgb.append(color)
    return np.array(xyz, dtype=np.float64).reshape(-1, 3), np.array(rgb, dtype=np.float64).reshape(-1, 3) / 255.0


def load_colmap_text(directory: str) -> SceneBundle:
    cameras_path = os.path.join(directory, "cameras.txt")
    images_path = os.path.join(directory, "images.txt")
    cameras = read_cameras_text(cameras_path)
    images = sorted(read_images_text(images_path), key=lambda im: im.name)
    points, colors = read_points3d_text(os.path.join(directory, "points3D.txt"))
    views = []
    for image, time in zip(images, normalized_times(len(images))):
        if image.camera_id not in cameras:
            msg = f"{images_path}: image {image.name} refers to unknown camera {image.camera_id}"
            raise CountMismatch(msg)
        views.append(CameraView(image.pose(), cameras[image.camera_id], time, image.name))
    return SceneBundle(views, points, colors, names=[im.name for im in images])


def load_scene_dir(directory: str, *, with_images: bool = True) -> SceneBundle:
    bundle = load_colmap_text(directory)
    if not bundle.views:
        msg = f"{directory} has no images"
        raise EmptySequence(msg)
    if with_images:
        bundle.images = [read_image(os.path.join(directory, "images", name)) for name in bundle.names]
        for view, image in zip(bundle.views, bundle.images):
            if image.shape[:2] != (view.height, view.width):
                msg = f"image {view.name} is {image.shape[1]}x{image.shape[0]}, camera says {view.width}x{view.height}"
                raise CountMismatch(msg)
    pairs_path = os.path.join(directory, "pairs.json")
    if os.path.exists(pairs_path):
        bundle.pairs = load_pairs(pairs_path)
    anns_path = os.path.join(directory, "anns.json")
    if os.path.exists(anns_path):
        bundle.annotations = load_annotations(anns_path)
    return bundle


def _format(values: Sequence[float]) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_colmap_text(directory: str, views: Sequence[CameraView], points: np.ndarray, colors: np.ndarray) -> None:
    """
    Write cameras.txt (one PINHOLE camera per distinct intrinsics), images.txt
    and points3D.txt.
    """
    os.makedirs(directory, exist_ok=True)
    camera_ids: Dict[Intrinsics, int] = {}
    for view in views:
        camera_ids.setdefault(view.intrinsics, len(camera_ids) + 1)
    lines = ["# Camera list with one line of data per camera:", "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]"]
    for k, camera_id in camera_ids.items():
        lines.append(f"{camera_id} PINHOLE {k.width} {k.height} {_format([k.fx, k.fy, k.cx, k.cy])}")
    atomic_write(("\n".join(lines) + "\n").encode("utf8"), os.path.join(directory, "cameras.txt"))

    lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
    ]
    for i, view in enumerate(views, start=1):
        w2c = pose_inverse(view.pose)
        q = rotation_to_quaternion(w2c.rotation)
        lines.append(f"{i} {_format(q)} {_format(w2c.translation)} {camera_ids[view.intrinsics]} {view.name}")
        lines.append("")
    atomic_write(("\n".join(lines) + "\n").encode("utf8"), os.path.join(directory, "images.txt"))

    lines = ["# 3D point list with one line of data per point:", "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]"]
    rgb = np.round(np.clip(colors, 0.0, 1.0) * 255.0).astype(int)
    for i, (p, c) in enumerate(zip(points, rgb), start=1):
        lines.append(f"{i} {_format(p)} {c[0]} {c[1]} {c[2]} 0.0")
    atomic_write(("\n".join(lines) + "\n").encode("utf8"), os.path.join(directory, "points3D.txt"))


def write_scene_dir(directory: str, bundle: SceneBundle) -> None:
    write_colmap_text(directory, bundle.views, bundle.points, bundle.colors)
    if bundle.images is not None:
        os.makedirs(os.path.join(directory, "images"), exist_ok=True)
        for view, image in zip(bundle.views, bundle.images):
            write_image(os.path.join(directory, "images", view.name), image)
    if bundle.pairs is not None:
        save_pairs(bundle.pairs, os.path.join(directory, "pairs.json"))
    if bundle.annotations is not None:
        save_annotations(bundle.annotations, os.path.join(directory, "anns.json"))
