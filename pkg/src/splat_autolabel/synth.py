"""
Synthetic driving scenes with known ground truth.

A camera drives along a (possibly curving) road through blobs of Gaussians.
Static blobs sit beside the road; moving blobs travel with constant
velocities. Frames are rendered by the rasterizer from the true, original-frame
geometry. The estimated frame is a similarity transform of the original one,
optionally bent by a sinusoidal sideways warp along the road and jittered by
noise, standing in for what structure from motion would produce.
"""

import dataclasses
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np

from splat_autolabel.adaptor import PosePair
from splat_autolabel.colmap import SceneBundle, normalized_times, write_scene_dir
from splat_autolabel.errors import InvalidConfig, InvalidSpec
from splat_autolabel.geometry import Intrinsics, Pose, Similarity, look_at, rotation_about_axis
from splat_autolabel.labeling import Box3D
from splat_autolabel.renderer import CameraView, RenderConfig, Splats, render
from splat_autolabel.util import dataclass_from_dict, write_json

CAMERA_HEIGHT = 1.5


@dataclass(frozen=True)
class SynthSpec:
    frames: int = 30
    spacing: float = 1.0  # meters between frames
    frame_interval: float = 0.1  # seconds between frames
    curvature: float = 0.0  # heading change per meter of road, radians
    static_blobs: int = 20
    moving_blobs: int = 3
    # m/s in the original frame; empty means random speeds along the road
    velocities: Tuple[Tuple[float, float, float], ...] = ()
    gaussians_per_blob: int = 8
    blob_spread: float = 0.4
    gaussian_scale: float = 0.3
    points_per_gaussian: int = 2
    width: int = 64
    height: int = 48
    focal: float = 56.0
    ewcs_scale: float = 0.8
    ewcs_yaw_degrees: float = 20.0
    ewcs_translation: Tuple[float, float, float] = (2.0, -1.0, 0.5)
    warp_amplitude: float = 0.0  # meters
    warp_wavelength: float = 50.0  # meters of road
    pose_noise: float = 0.0  # meters, on camera centres
    point_noise: float = 0.0  # meters, on sparse points
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "velocities", tuple(tuple(float(x) for x in v) for v in self.velocities))
        object.__setattr__(self, "ewcs_translation", tuple(float(x) for x in self.ewcs_translation))
        problems = []
        if self.frames < 2:  # noqa: PLR2004
            problems.append("frames must be at least 2")
        if self.spacing < 0 or self.frame_interval <= 0:
            problems.append("spacing must be non-negative and frame_interval positive")
        if self.static_blobs < 0 or self.moving_blobs < 0 or self.gaussians_per_blob < 1:
            problems.append("blob counts must be non-negative with at least one Gaussian per blob")
        if self.velocities and len(self.velocities) != self.moving_blobs:
            problems.append(f"{self.moving_blobs} moving blobs but {len(self.velocities)} velocities")
        if any(len(v) != 3 for v in self.velocities):  # noqa: PLR2004
            problems.append("velocities must be 3-vectors")
        if self.blob_spread < 0 or self.gaussian_scale <= 0 or self.points_per_gaussian < 0:
            problems.append("blob spread, Gaussian scale and point counts must be positive")
        if self.width < 1 or self.height < 1 or self.focal <= 0:
            problems.append("image size and focal length must be positive")
        if self.ewcs_scale <= 0 or len(self.ewcs_translation) != 3:  # noqa: PLR2004
            problems.append("the estimated-frame similarity needs a positive scale and a 3-vector translation")
        if self.warp_amplitude < 0 or self.warp_wavelength <= 0:
            problems.append("warp amplitude must be non-negative and wavelength positive")
        if self.pose_noise < 0 or self.point_noise < 0:
            problems.append("noise levels must be non-negative")
        if problems:
            msg = f"invalid synthetic scene spec: {'; '.join(problems)}"
            raise InvalidSpec(msg)

    @classmethod
    def from_json(cls, rep: Mapping[str, Any]) -> "SynthSpec":
        try:
            return dataclass_from_dict(cls, rep, section="spec")
        except (InvalidConfig, TypeError) as e:
            msg = f"invalid synthetic scene spec: {e}"
            raise InvalidSpec(msg) from e

    def to_json(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(self.focal, self.focal, self.width / 2.0, self.height / 2.0, self.width, self.height)

    @property
    def similarity(self) -> Similarity:
        rotation = rotation_about_axis((0.0, 0.0, 1.0), math.radians(self.ewcs_yaw_degrees))
        return Similarity(self.ewcs_scale, rotation, np.asarray(self.ewcs_translation))


@dataclass
class Blob:
    offsets: np.ndarray  # (G, 3) Gaussian positions relative to the blob centre
    start: np.ndarray
    velocity: np.ndarray
    color: np.ndarray  # (G, 3)

    def center(self, seconds: float) -> np.ndarray:
        return self.start + self.velocity * seconds


@dataclass
class SynthScene:
    spec: SynthSpec
    bundle: SceneBundle  # estimated-frame views and points, ground-truth images
    owcs_views: List[CameraView]
    similarity: Similarity
    blobs: List[Blob]
    moving: List[int] = field(default_factory=list)

    @property
    def ewcs_poses(self) -> List[Pose]:
        return [v.pose for v in self.bundle.views]

    @property
    def images(self) -> List[np.ndarray]:
        assert self.bundle.images is not None  # noqa: S101
        return self.bundle.images

    def splats_at(self, seconds: float) -> Splats:
        return _splats(self.blobs, seconds, self.spec.gaussian_scale)


def _road(spec: SynthSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Camera centres (F, 3) and unit headings (F, 3) along the road.
    """
    arc = np.arange(spec.frames) * spec.spacing
    heading = spec.curvature * arc
    forward = np.stack([np.cos(heading), np.sin(heading), np.zeros_like(heading)], axis=1)
    centers = np.zeros((spec.frames, 3))
    centers[:, 2] = CAMERA_HEIGHT
    for i in range(1, spec.frames):
        centers[i] = centers[i - 1] + spec.spacing * forward[i - 1]
    return centers, forward


def _left(forward: np.ndarray) -> np.ndarray:
    return np.stack([-forward[..., 1], forward[..., 0], np.zeros(forward.shape[:-1])], axis=-1)


def _splats(blobs: List[Blob], seconds: float, scale: float) -> Splats:
    if not blobs:
        return Splats.empty()
    position = np.concatenate([b.center(seconds) + b.offsets for b in blobs])
    n = len(position)
    rotation = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    log_scale = np.full((n, 3), math.log(scale))
    return Splats(position, rotation, log_scale, np.full(n, 0.9), np.concatenate([b.color for b in blobs]))


def _make_blob(
    spec: SynthSpec, rng: np.random.Generator, anchor: np.ndarray, forward: np.ndarray, ahead: float, lateral: float
) -> Blob:
    start = anchor + ahead * forward + lateral * _left(forward)
    start[2] = rng.uniform(0.5, 2.0)
    offsets = rng.normal(0.0, spec.blob_spread, size=(spec.gaussians_per_blob, 3))
    base = rng.uniform(0.2, 1.0, size=3)
    color = np.clip(base + rng.normal(0.0, 0.05, size=(spec.gaussians_per_blob, 3)), 0.0, 1.0)
    return Blob(offsets, start, np.zeros(3), color)


def _warp(spec: SynthSpec, points: np.ndarray, centers: np.ndarray, forward: np.ndarray) -> np.ndarray:
    """
    Shift points sideways by amplitude * sin(2 pi s / wavelength), s being the
    road distance of the nearest camera.
    """
    if spec.warp_amplitude == 0 or len(points) == 0:
        return points
    nearest = np.argmin(np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2), axis=1)
    arc = nearest * spec.spacing
    shift = spec.warp_amplitude * np.sin(2.0 * math.pi * arc / spec.warp_wavelength)
    return points + shift[:, None] * _left(forward[nearest])


def synth_scene(spec: SynthSpec, render_cfg: RenderConfig = RenderConfig()) -> SynthScene:  # noqa: B008
    rng = np.random.default_rng(spec.seed)
    centers, forward = _road(spec)
    k = spec.intrinsics

    blobs: List[Blob] = []
    for _ in range(spec.static_blobs):
        j = int(rng.integers(spec.frames))
        side = 1.0 if rng.uniform() < 0.5 else -1.0  # noqa: PLR2004
        blobs.append(_make_blob(spec, rng, centers[j], forward[j], rng.uniform(6.0, 20.0), side * rng.uniform(2.0, 6.0)))
    moving = []
    for m in range(spec.moving_blobs):
        blob = _make_blob(spec, rng, centers[0], forward[0], rng.uniform(8.0, 14.0), rng.uniform(-2.0, 2.0))
        if spec.velocities:
            blob.velocity = np.asarray(spec.velocities[m])
        else:
            blob.velocity = rng.uniform(1.0, 3.0) * forward[0]
        moving.append(len(blobs))
        blobs.append(blob)

    times = normalized_times(spec.frames)
    owcs_views = []
    images = []
    for i in range(spec.frames):
        pose = look_at(centers[i], centers[i] + forward[i])
        view = CameraView(pose, k, times[i], f"frame_{i:04d}.ppm")
        owcs_views.append(view)
        image, _ = render(_splats(blobs, i * spec.frame_interval, spec.gaussian_scale), view, render_cfg)
        images.append(image.pixels)

    similarity = spec.similarity
    warped = _warp(spec, centers, centers, forward)
    noise = rng.normal(0.0, 1.0, size=centers.shape) * spec.pose_noise
    ewcs_views = []
    pairs = []
    for i, view in enumerate(owcs_views):
        moved = Pose(view.pose.rotation, warped[i] + noise[i])
        ewcs = similarity.apply_pose(moved)
        ewcs_views.append(CameraView(ewcs, k, view.time, view.name))
        pairs.append(PosePair(i, view.pose, ewcs))

    points = []
    colors = []
    for blob in blobs:
        for offset, color in zip(blob.offsets, blob.color):
            samples = blob.start + offset + rng.normal(0.0, 0.5 * spec.gaussian_scale, size=(spec.points_per_gaussian, 3))
            points.append(samples)
            colors.append(np.tile(color, (spec.points_per_gaussian, 1)))
    xyz = np.concatenate(points) if points else np.zeros((0, 3))
    rgb = np.concatenate(colors) if colors else np.zeros((0, 3))
    xyz = _warp(spec, xyz, centers, forward) + rng.normal(0.0, 1.0, size=xyz.shape) * spec.point_noise
    ewcs_points = similarity.apply(xyz) if len(xyz) else xyz

    half = spec.blob_spread * 2.0 + spec.gaussian_scale
    annotations = []
    for i in range(spec.frames):
        for index in moving:
            blob = blobs[index]
            v = blob.velocity
            yaw = math.atan2(v[1], v[0]) if np.hypot(v[0], v[1]) > 0 else 0.0
            size = (2.0 * half, 2.0 * half, 2.0 * half)
            annotations.append(Box3D(blob.center(i * spec.frame_interval), size, yaw, "car", i))

    bundle = SceneBundle(
        ewcs_views,
        ewcs_points,
        rgb,
        images=images,
        pairs=pairs,
        annotations=annotations,
        names=[v.name for v in ewcs_views],
    )
    return SynthScene(spec, bundle, owcs_views, similarity, blobs, moving)


def write_synth(directory: str, scene: SynthScene) -> None:
    """
    Write the scene directory plus truth.json with the generating spec, the
    similarity and the original-frame poses.
    """
    os.makedirs(directory, exist_ok=True)
    write_scene_dir(directory, scene.bundle)
    truth = {
        "spec": scene.spec.to_json(),
        "similarity": scene.similarity.to_json(),
        "intrinsics": scene.spec.intrinsics.to_json(),
        "p_owcs": [v.pose.to_list() for v in scene.owcs_views],
    }
    write_json(truth, os.path.join(directory, "truth.json"))
