"""
Rigid and similarity transforms, pinhole projection, and positional encoding.

Conventions:

- A `Pose` is camera-to-world: the columns of its rotation are the camera axes
  expressed in world coordinates and its translation is the camera centre.
- Cameras look down +z with x to the right and y down.
- Quaternions are stored (w, x, y, z), the same order COLMAP uses.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Union

import numpy as np

from splat_autolabel.constants import DEPTH_EPSILON, ROTATION_TOLERANCE
from splat_autolabel.errors import BehindCamera, DegenerateConfiguration, InvalidPose, ShapeMismatch

ArrayLike = Union[np.ndarray, Sequence[float]]


def _frozen(array: ArrayLike, shape: Sequence[int]) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    if out.shape != tuple(shape):
        msg = f"expected shape {tuple(shape)}, got {out.shape}"
        raise ShapeMismatch(msg)
    out.setflags(write=False)
    return out


def check_rotation(rotation: np.ndarray, tolerance: float = ROTATION_TOLERANCE) -> None:
    """
    Raise InvalidPose unless rotation is orthonormal with determinant +1.
    """
    if not np.all(np.isfinite(rotation)):
        msg = "rotation has non-finite entries"
        raise InvalidPose(msg)
    error = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
    if error > tolerance:
        msg = f"rotation is not orthonormal (max |R^T R - I| = {error:.3g})"
        raise InvalidPose(msg)
    det = np.linalg.det(rotation)
    if abs(det - 1.0) > tolerance:
        msg = f"rotation has determinant {det:.6g}, expected +1"
        raise InvalidPose(msg)


@dataclass(frozen=True, eq=False)
class Pose:
    """
    A rigid camera-to-world transform, serialized as a row-major 3x4 matrix.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rotation = _frozen(self.rotation, (3, 3))
        translation = _frozen(self.translation, (3,))
        check_rotation(rotation)
        if not np.all(np.isfinite(translation)):
            msg = "translation has non-finite entries"
            raise InvalidPose(msg)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: ArrayLike) -> "Pose":
        """
        Build a pose from a 3x4 or 4x4 matrix.
        """
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape not in ((3, 4), (4, 4)):
            msg = f"pose matrix must be 3x4 or 4x4, got {m.shape}"
            raise ShapeMismatch(msg)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose":
        """
        Build a pose from 12 numbers, row-major 3x4.
        """
        if len(values) != 12:  # noqa: PLR2004
            msg = f"a pose needs 12 numbers, got {len(values)}"
            raise ShapeMismatch(msg)
        return cls.from_matrix(np.asarray(values, dtype=np.float64).reshape(3, 4))

    @classmethod
    def parse(cls, line: str) -> "Pose":
        """
        Parse a whitespace-separated line of 12 numbers.
        """
        return cls.from_list([float(x) for x in line.split()])

    def matrix(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation[:, None]], axis=1)

    def homogeneous(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_list(self) -> List[float]:
        return [float(x) for x in self.matrix().reshape(-1)]

    def format(self) -> str:
        return " ".join(repr(x) for x in self.to_list())

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """
        Express world points (N, 3) in this camera's frame.
        """
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol))


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            msg = f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}"
            raise ShapeMismatch(msg)
        if self.width < 1 or self.height < 1:
            msg = f"image size must be at least 1x1, got {self.width}x{self.height}"
            raise ShapeMismatch(msg)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def to_json(self) -> Dict[str, Any]:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, rep: Dict[str, Any]) -> "Intrinsics":
        try:
            return cls(
                float(rep["fx"]),
                float(rep["fy"]),
                float(rep["cx"]),
                float(rep["cy"]),
                int(rep["width"]),
                int(rep["height"]),
            )
        except (KeyError, TypeError) as e:
            msg = f"cannot parse intrinsics: {e}"
            raise ShapeMismatch(msg) from e


@dataclass(frozen=True)
class PixelPoint:
    u: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v])


@dataclass(frozen=True, eq=False)
class Similarity:
    """
    x -> scale * rotation @ x + translation.
    """

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        if not self.scale > 0:
            msg = f"similarity scale must be positive, got {self.scale}"
            raise InvalidPose(msg)
        rotation = _frozen(self.rotation, (3, 3))
        check_rotation(rotation)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> "Similarity":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_pose(self, pose: Pose) -> Pose:
        """
        Carry a camera-to-world pose into the target frame.

        The camera orientation rotates with the frame and its centre maps as a
        point; the scale does not affect orientation.
        """
        return Pose(self.rotation @ pose.rotation, self.apply(pose.translation[None, :])[0])

    def to_json(self) -> Dict[str, Any]:
        return {
            "scale": self.scale,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }


def pose_inverse(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def pose_compose(a: Pose, b: Pose) -> Pose:
    """
    Return a * b as 4x4 homogeneous transforms.
    """
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def ccm_relative_pose(p_nov: Pose, p_i: Pose) -> Pose:
    """
    Return the pose of frame i expressed in the camera frame of p_nov.
    """
    return pose_compose(pose_inverse(p_nov), p_i)


def project_points(points: np.ndarray, k: Intrinsics) -> np.ndarray:
    """
    Project camera-frame points (N, 3) to pixels (N, 2).

    Points at or behind the camera yield NaN rows; callers decide what that means.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = points[:, 2]
    valid = z > DEPTH_EPSILON
    safe_z = np.where(valid, z, 1.0)
    u = k.fx * points[:, 0] / safe_z + k.cx
    v = k.fy * points[:, 1] / safe_z + k.cy
    out = np.stack([u, v], axis=1)
    out[~valid] = np.nan
    return out


def ppm_project(relative: Pose, k: Intrinsics) -> PixelPoint:
    """
    Project the translation of a camera-relative pose through the pinhole model.
    """
    x, y, z = relative.translation
    if z <= DEPTH_EPSILON:
        msg = f"point at depth {z:.3g} is not in front of the camera"
        raise BehindCamera(msg)
    return PixelPoint(k.fx * x / z + k.cx, k.fy * y / z + k.cy)


def positional_encoding(value: Union[float, ArrayLike], bands: int) -> np.ndarray:
    """
    Encode each component v as (sin v, cos v, sin 2v, cos 2v, ...).

    Accepts a scalar, a vector, or a batch (..., D); the last axis grows from D
    to 2 * bands * D, grouped by component.
    """
    if bands < 1:
        msg = f"positional encoding needs at least one band, got {bands}"
        raise ShapeMismatch(msg)
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 0:
        v = v[None]
    freqs = 2.0 ** np.arange(bands)
    scaled = v[..., :, None] * freqs  # (..., D, bands)
    pairs = np.stack([np.sin(scaled), np.cos(scaled)], axis=-1)  # (..., D, bands, 2)
    return pairs.reshape(*v.shape[:-1], v.shape[-1] * bands * 2)


def umeyama_align(src: ArrayLike, dst: ArrayLike) -> Similarity:
    """
    Least-squares similarity taking src points onto dst points.

    Closed form from the SVD of the cross-covariance, with the sign correction
    that keeps the rotation proper.
    """
    a = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if a.shape != b.shape:
        msg = f"point lists differ in length: {len(a)} vs {len(b)}"
        raise ShapeMismatch(msg)
    n = len(a)
    if n < 3:  # noqa: PLR2004
        msg = f"need at least 3 correspondences, got {n}"
        raise DegenerateConfiguration(msg)
    mu_a = a.mean(axis=0)
    mu_b = b.mean(axis=0)
    xa = a - mu_a
    xb = b - mu_b
    for centered in (xa, xb):
        spread = np.linalg.svd(centered, compute_uv=False)
        if spread[0] <= 0.0 or spread[1] <= 1e-10 * spread[0]:
            msg = "points are collinear or coincident"
            raise DegenerateConfiguration(msg)
    var_a = np.sum(xa * xa) / n
    cov = xb.T @ xa / n
    u, d, vt = np.linalg.svd(cov)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    rotation = u @ np.diag(s) @ vt
    scale = float(np.sum(d * s) / var_a)
    translation = mu_b - scale * rotation @ mu_a
    return Similarity(scale, rotation, translation)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """
    Convert unit quaternions (..., 4) in (w, x, y, z) order to rotations (..., 3, 3).
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """
    Convert a rotation matrix to a unit quaternion (w, x, y, z) with w >= 0.
    """
    rxx, ryx, rzx, rxy, ryy, rzy, rxz, ryz, rzz = np.asarray(r, dtype=np.float64).flat
    k = (
        np.array(
            [
                [rxx - ryy - rzz, 0, 0, 0],
                [ryx + rxy, ryy - rxx - rzz, 0, 0],
                [rzx + rxz, rzy + ryz, rzz - rxx - ryy, 0],
                [ryz - rzy, rzx - rxz, rxy - ryx, rxx + ryy + rzz],
            ]
        )
        / 3.0
    )
    eigvals, eigvecs = np.linalg.eigh(k)
    q = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """
    Project (..., 3, 3) matrices onto the closest proper rotation (Frobenius norm).
    """
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    d = np.where(d == 0, 1.0, d)
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    return u @ vt


def rotation_about_axis(axis: ArrayLike, angle: float) -> np.ndarray:
    """
    Rodrigues rotation about a unit axis.
    """
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def yaw_rotation(angle: float) -> np.ndarray:
    """
    Rotation by angle about the camera's vertical (y) axis.
    """
    return rotation_about_axis((0.0, 1.0, 0.0), angle)


def look_at(center: ArrayLike, target: ArrayLike, up: ArrayLike = (0.0, 0.0, 1.0)) -> Pose:
    """
    Camera-to-world pose at center looking at target, with image y pointing away from up.
    """
    c = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - c
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-12:  # noqa: PLR2004
        msg = "look_at direction is parallel to up"
        raise DegenerateConfiguration(msg)
    right /= norm
    down = np.cross(forward, right)
    return Pose(np.stack([right, down, forward], axis=1), c)
