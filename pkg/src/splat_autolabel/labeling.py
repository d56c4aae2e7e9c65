"""
Annotation generation for novel rendered views, and its evaluation.

Boxes live in the original world frame with z up; yaw is the heading about z.
A novel view is a random camera-frame perturbation of a dataset frame. Its
image is rendered at the adaptor's estimate of the novel pose, and its labels
come from the original-frame geometry, where the annotations are exact.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from splat_autolabel.adaptor import AdaptorConfig, rpt_perturbation
from splat_autolabel.constants import AP_GATE, AP_RECALL_POINTS, MIN_BOX_AREA, NEAR_PLANE
from splat_autolabel.errors import InvalidBox, InvalidConfig
from splat_autolabel.geometry import Intrinsics, Pose, pose_compose, pose_inverse, project_points, rotation_about_axis
from splat_autolabel.renderer import CameraView
from splat_autolabel.util import write_json

# bottom face then top face, counter-clockwise seen from above
_UNIT_CORNERS = np.array(
    [
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, 1],
        [-1, 1, 1],
        [-1, -1, 1],
        [1, -1, 1],
    ],
    dtype=np.float64,
)
_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7))


def wrap_angle(angle: float) -> float:
    """
    Map an angle into (-pi, pi].
    """
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    return math.pi if wrapped <= -math.pi else wrapped


def heading(rotation: np.ndarray) -> float:
    """
    Rotation angle about the world z axis of a (nearly) z-axis rotation.
    """
    return math.atan2(rotation[1, 0], rotation[0, 0])


@dataclass(frozen=True, eq=False)
class Box3D:
    center: np.ndarray
    size: Tuple[float, float, float]  # length (along the heading), width, height
    yaw: float
    category: str
    frame: int

    def __post_init__(self) -> None:
        center = np.array(self.center, dtype=np.float64)
        if center.shape != (3,) or not np.all(np.isfinite(center)):
            msg = f"box center must be 3 finite numbers, got {self.center!r}"
            raise InvalidBox(msg)
        size = tuple(float(s) for s in self.size)
        if len(size) != 3 or min(size) <= 0:  # noqa: PLR2004
            msg = f"box sizes must be three positive numbers, got {self.size!r}"
            raise InvalidBox(msg)
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def corners(self) -> np.ndarray:
        """
        The 8 corners (8, 3) in world coordinates.
        """
        half = 0.5 * np.asarray(self.size)
        rotation = rotation_about_axis((0.0, 0.0, 1.0), self.yaw)
        return (_UNIT_CORNERS * half) @ rotation.T + self.center

    def to_json(self) -> Dict[str, Any]:
        return {
            "frame": self.frame,
            "category": self.category,
            "center": self.center.tolist(),
            "size": list(self.size),
            "yaw": self.yaw,
        }

    @classmethod
    def from_json(cls, rep: Dict[str, Any]) -> "Box3D":
        return cls(np.asarray(rep["center"]), tuple(rep["size"]), float(rep["yaw"]), str(rep["category"]), int(rep["frame"]))


@dataclass(frozen=True)
class Box2D:
    u_min: float
    v_min: float
    u_max: float
    v_max: float
    category: str
    frame: int

    def __post_init__(self) -> None:
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            msg = f"empty 2D box ({self.u_min}, {self.v_min}, {self.u_max}, {self.v_max})"
            raise InvalidBox(msg)

    @property
    def area(self) -> float:
        return (self.u_max - self.u_min) * (self.v_max - self.v_min)

    def iou(self, other: "Box2D") -> float:
        du = min(self.u_max, other.u_max) - max(self.u_min, other.u_min)
        dv = min(self.v_max, other.v_max) - max(self.v_min, other.v_min)
        if du <= 0 or dv <= 0:
            return 0.0
        inter = du * dv
        return inter / (self.area + other.area - inter)

    def to_json(self) -> Dict[str, Any]:
        # COCO order: x, y, width, height
        return {
            "frame": self.frame,
            "category": self.category,
            "bbox": [self.u_min, self.v_min, self.u_max - self.u_min, self.v_max - self.v_min],
        }


@dataclass(frozen=True)
class LabelConfig:
    ap_gate: float = AP_GATE
    min_box_area: float = MIN_BOX_AREA
    recall_points: int = AP_RECALL_POINTS

    def __post_init__(self) -> None:
        if self.ap_gate <= 0 or self.min_box_area < 0 or self.recall_points < 2:  # noqa: PLR2004
            msg = "ap_gate must be positive, min_box_area non-negative and recall_points at least 2"
            raise InvalidConfig(msg)


@dataclass
class LabeledView:
    frame: int
    perturbation: Pose
    pose_owcs: Pose
    pose_ewcs: Pose
    boxes3d: List[Box3D]
    boxes2d: List[Box2D]
    image: Optional[np.ndarray] = field(default=None, repr=False)

    def manifest(self) -> Dict[str, Any]:
        return {
            "frame": self.frame,
            "perturbation": self.perturbation.to_list(),
            "p_owcs": self.pose_owcs.to_list(),
            "p_ewcs": self.pose_ewcs.to_list(),
            "boxes3d": [b.to_json() for b in self.boxes3d],
            "boxes2d": [b.to_json() for b in self.boxes2d],
        }


def world_perturbation(p_ori: Pose, perturbation: Pose) -> Pose:
    """
    The world-frame rigid map that carries the perturbed camera back onto p_ori.

    Applying it to the scene makes the scene look, from p_ori, the way the
    unmoved scene looks from the perturbed camera.
    """
    return pose_compose(pose_compose(p_ori, pose_inverse(perturbation)), pose_inverse(p_ori))


def transform_annotations(anns: Sequence[Box3D], affine: Pose) -> List[Box3D]:
    """
    Move every box rigidly by affine; sizes are unchanged.
    """
    turn = heading(affine.rotation)
    out = []
    for box in anns:
        center = affine.rotation @ box.center + affine.translation
        out.append(Box3D(center, box.size, box.yaw + turn, box.category, box.frame))
    return out


def project_box3d(box: Box3D, camera_owcs: Pose, k: Intrinsics) -> Optional[Tuple[np.ndarray, Box2D]]:
    """
    Pixel corners (8, 2) and the clipped 2D hull of a box, or None if it is
    not visible.

    Corners at or behind the near plane come back as NaN. Edges crossing the
    near plane contribute their crossing point to the hull, so a box the
    camera sits inside of still gets a box.
    """
    local = camera_owcs.world_to_camera(box.corners())
    front = local[:, 2] > NEAR_PLANE
    if not np.any(front):
        return None
    pixels = project_points(local, k)
    pixels[~front] = np.nan
    hull = [local[front]]
    for a, b in _EDGES:
        if front[a] != front[b]:
            za, zb = local[a, 2], local[b, 2]
            s = (NEAR_PLANE - za) / (zb - za)
            crossing = local[a] + s * (local[b] - local[a])
            crossing[2] = NEAR_PLANE
            hull.append(crossing[None, :])
    points = project_points(np.concatenate(hull), k)
    points = points[np.all(np.isfinite(points), axis=1)]
    u_min, v_min = np.clip(points.min(axis=0), 0.0, [k.width, k.height])
    u_max, v_max = np.clip(points.max(axis=0), 0.0, [k.width, k.height])
    if not (u_min < u_max and v_min < v_max):
        return None
    return pixels, Box2D(float(u_min), float(v_min), float(u_max), float(v_max), box.category, box.frame)


def label_boxes(anns: Sequence[Box3D], camera_owcs: Pose, k: Intrinsics, min_area: float = MIN_BOX_AREA) -> List[Box2D]:
    boxes = []
    for box in anns:
        projected = project_box3d(box, camera_owcs, k)
        if projected is not None and projected[1].area >= min_area:
            boxes.append(projected[1])
    return boxes


def generate_labeled_view(
    frame: int,
    view: CameraView,
    anns: Sequence[Box3D],
    cfg: AdaptorConfig,
    adaptor: Callable[[Pose], Pose],
    render: Optional[Callable[[CameraView], np.ndarray]],
    rng: np.random.Generator,
    label_cfg: Optional[LabelConfig] = None,
) -> LabeledView:
    """
    Perturb a dataset view, render it at the adaptor's pose estimate, and label it.

    view.pose is the frame's original-frame pose. render maps an
    estimated-frame view to pixels; pass None to skip rendering.
    """
    label_cfg = label_cfg or LabelConfig()
    perturbation = rpt_perturbation(cfg, rng)
    p_nov = pose_compose(view.pose, perturbation)
    p_nov_s = adaptor(p_nov)
    image = None
    if render is not None:
        image = render(CameraView(p_nov_s, view.intrinsics, view.time, f"{view.name}~novel"))
    boxes3d = transform_annotations(anns, world_perturbation(view.pose, perturbation))
    boxes2d = label_boxes(anns, p_nov, view.intrinsics, label_cfg.min_box_area)
    return LabeledView(frame, perturbation, p_nov, p_nov_s, boxes3d, boxes2d, image)


def match_boxes(
    gt: Sequence[Box3D], pred: Sequence[Box3D], gate: float = AP_GATE
) -> List[Tuple[int, int, float]]:
    """
    Greedy nearest-first matching of boxes in the same frame and category.

    Returns (gt index, pred index, center distance) for every match within the gate.
    """
    candidates = []
    for i, g in enumerate(gt):
        for j, p in enumerate(pred):
            if g.frame != p.frame or g.category != p.category:
                continue
            d = float(np.linalg.norm(g.center - p.center))
            if d <= gate:
                candidates.append((d, i, j))
    candidates.sort()
    used_gt = set()
    used_pred = set()
    matches = []
    for d, i, j in candidates:
        if i in used_gt or j in used_pred:
            continue
        used_gt.add(i)
        used_pred.add(j)
        matches.append((i, j, d))
    return matches


def eval_ap_ad(
    gt: Sequence[Box3D],
    pred: Sequence[Box3D],
    gate: float = AP_GATE,
    recall_points: int = AP_RECALL_POINTS,
) -> Tuple[float, Optional[float]]:
    """
    AP in percent and the mean center distance of matched pairs in meters.

    Predictions all count as confidence 1, ranked in input order; precision is
    interpolated at evenly spaced recall levels. AD is None without matches.
    """
    if not gt or not pred:
        return 0.0, None
    matches = match_boxes(gt, pred, gate)
    hit = np.zeros(len(pred), dtype=bool)
    for _, j, _ in matches:
        hit[j] = True
    tp = np.cumsum(hit)
    precision = tp / np.arange(1, len(pred) + 1)
    recall = tp / len(gt)
    levels = np.linspace(0.0, 1.0, recall_points)
    interpolated = [float(precision[recall >= r].max()) if np.any(recall >= r) else 0.0 for r in levels]
    ap = 100.0 * float(np.mean(interpolated))
    ad = float(np.mean([d for _, _, d in matches])) if matches else None
    return ap, ad


def load_annotations(path: str) -> List[Box3D]:
    with open(path) as f:
        try:
            rep = json.load(f)
        except json.JSONDecodeError as e:
            msg = f'cannot parse annotations "{path}": {e}'
            raise InvalidConfig(msg) from e
    if not isinstance(rep, list):
        msg = f'"{path}" must hold a JSON array of boxes'
        raise InvalidConfig(msg)
    try:
        return [Box3D.from_json(item) for item in rep]
    except (KeyError, TypeError) as e:
        msg = f'"{path}": box is missing a field or has the wrong type ({e})'
        raise InvalidConfig(msg) from e


def save_annotations(boxes: Sequence[Box3D], path: str) -> None:
    write_json([b.to_json() for b in boxes], path)


def save_boxes2d(boxes: Sequence[Box2D], path: str) -> None:
    write_json([b.to_json() for b in boxes], path)
