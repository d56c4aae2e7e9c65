from typing import List

import numpy as np
import pytest

from splat_autolabel.geometry import Intrinsics, Pose, look_at
from splat_autolabel.renderer import CameraView, RenderConfig, Splats
from splat_autolabel.synth import SynthScene, SynthSpec, synth_scene


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def intrinsics() -> Intrinsics:
    return Intrinsics(20.0, 20.0, 8.0, 8.0, 16, 16)


@pytest.fixture
def view(intrinsics: Intrinsics) -> CameraView:
    return CameraView(Pose.identity(), intrinsics, 0.0, "front")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pose(rng: np.random.Generator, spread: float = 5.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-spread, spread, size=3))


def random_splats(rng: np.random.Generator, count: int = 6) -> Splats:
    """
    A handful of primitives in front of an identity camera.
    """
    position = np.column_stack(
        [rng.uniform(-0.6, 0.6, count), rng.uniform(-0.6, 0.6, count), rng.uniform(2.5, 4.0, count)]
    )
    rotation = rng.normal(size=(count, 4))
    rotation /= np.linalg.norm(rotation, axis=1, keepdims=True)
    log_scale = np.log(rng.uniform(0.1, 0.3, size=(count, 3)))
    opacity = rng.uniform(0.3, 0.9, size=(count, 1))
    color = rng.uniform(0.0, 1.0, size=(count, 3))
    return Splats(position, rotation, log_scale, opacity, color)


def road_poses(count: int, spacing: float = 1.0) -> List[Pose]:
    return [look_at((i * spacing, 0.0, 1.5), (i * spacing + 10.0, 0.0, 1.5)) for i in range(count)]


@pytest.fixture(scope="session")
def tiny_spec() -> SynthSpec:
    return SynthSpec(
        frames=8,
        static_blobs=4,
        moving_blobs=1,
        gaussians_per_blob=3,
        width=24,
        height=16,
        focal=20.0,
    )


@pytest.fixture(scope="session")
def tiny_scene(tiny_spec: SynthSpec) -> SynthScene:
    return synth_scene(tiny_spec, RenderConfig(tile_size=8))
