"""
The pose adaptor: a network carrying camera poses from the original world
frame (where the dataset annotations live) into the frame estimated by
structure from motion (where the renderer lives).

Training pairs each frame's original pose with its estimated pose. Besides
fitting those pairs directly, every anchor frame is perturbed into a nearby
novel pose, and the novel pose's prediction is tied to the anchor's following
frames in two ways: through the pixels those frames' camera centres project
to, and through their relative poses.
"""

import json
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from splat_autolabel import nn
from splat_autolabel.constants import (
    ADAPTOR_BATCH,
    ADAPTOR_DECAY_FRACTION,
    ADAPTOR_DEPTH,
    ADAPTOR_EPOCHS,
    ADAPTOR_FOLLOWING,
    ADAPTOR_LR,
    ADAPTOR_W2_FLOOR,
    ADAPTOR_WEIGHTS,
    ADAPTOR_WIDTH,
    DEPTH_EPSILON,
    RPT_TRANSLATION,
    RPT_YAW_DEGREES,
)
from splat_autolabel.errors import (
    BehindCamera,
    DegenerateConfiguration,
    InvalidConfig,
    NoValidFrames,
    ShapeMismatch,
    TooFewPairs,
)
from splat_autolabel.geometry import (
    Intrinsics,
    PixelPoint,
    Pose,
    Similarity,
    ccm_relative_pose,
    nearest_rotation,
    pose_compose,
    ppm_project,
    umeyama_align,
    yaw_rotation,
)
from splat_autolabel.nn import Adam, Mlp, MlpSpec, Tensor, load_networks, save_networks
from splat_autolabel.util import QUIET, Tracer, write_json

Scalar = Union[float, Tensor]


@dataclass(frozen=True)
class PosePair:
    frame: int
    pose_owcs: Pose
    pose_ewcs: Pose

    def to_json(self) -> Dict[str, Any]:
        return {"frame": self.frame, "p_owcs": self.pose_owcs.to_list(), "p_ewcs": self.pose_ewcs.to_list()}

    @classmethod
    def from_json(cls, rep: Dict[str, Any]) -> "PosePair":
        return cls(int(rep["frame"]), Pose.from_list(rep["p_owcs"]), Pose.from_list(rep["p_ewcs"]))


@dataclass(frozen=True)
class AdaptorConfig:
    w1: float = ADAPTOR_WEIGHTS[0]
    w2: float = ADAPTOR_WEIGHTS[1]
    w3: float = ADAPTOR_WEIGHTS[2]
    following: int = ADAPTOR_FOLLOWING
    rpt_translation: Tuple[float, float, float] = RPT_TRANSLATION
    rpt_yaw_degrees: float = RPT_YAW_DEGREES
    epochs: int = ADAPTOR_EPOCHS
    batch: int = ADAPTOR_BATCH
    lr: float = ADAPTOR_LR
    width: int = ADAPTOR_WIDTH
    depth: int = ADAPTOR_DEPTH
    w2_floor: float = ADAPTOR_W2_FLOOR
    decay_fraction: float = ADAPTOR_DECAY_FRACTION
    # 0 means the bounding-box diagonal of the training trajectory
    translation_scale: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.w1, self.w2, self.w3) < 0:
            msg = f"loss weights must not be negative, got ({self.w1}, {self.w2}, {self.w3})"
            raise InvalidConfig(msg)
        if self.following < 1:
            msg = f"the number of following poses must be at least 1, got {self.following}"
            raise InvalidConfig(msg)
        if len(self.rpt_translation) != 3 or min(self.rpt_translation) < 0 or self.rpt_yaw_degrees < 0:  # noqa: PLR2004
            msg = "RPT ranges must be three non-negative translations and a non-negative yaw"
            raise InvalidConfig(msg)
        if self.epochs < 0 or self.batch < 1 or self.lr <= 0:
            msg = "epochs must be non-negative, batch positive and the learning rate positive"
            raise InvalidConfig(msg)
        if self.translation_scale < 0:
            msg = "translation_scale must not be negative"
            raise InvalidConfig(msg)

    @property
    def weights(self) -> Tuple[float, float, float]:
        return (self.w1, self.w2, self.w3)

    def w2_at(self, epoch: int) -> float:
        """
        w2 decays linearly to w2_floor * w2 over the first decay_fraction of training.
        """
        span = self.decay_fraction * self.epochs
        progress = 1.0 if span <= 0 else min(1.0, epoch / span)
        return self.w2 * (1.0 - (1.0 - self.w2_floor) * progress)


def trajectory_scale(poses: Sequence[Pose]) -> float:
    """
    Bounding-box diagonal of the camera centres, or 1 for a stationary camera.
    """
    centers = np.array([p.center for p in poses]).reshape(-1, 3)
    if len(centers) == 0:
        return 1.0
    diagonal = float(np.linalg.norm(centers.max(axis=0) - centers.min(axis=0)))
    return diagonal if diagonal > 0 else 1.0


def rpt_perturbation(cfg: AdaptorConfig, rng: np.random.Generator) -> Pose:
    """
    A random rigid motion in the camera frame: a bounded translation and a yaw
    about the camera's vertical axis.
    """
    bounds = np.asarray(cfg.rpt_translation, dtype=np.float64)
    offset = rng.uniform(-bounds, bounds)
    limit = math.radians(cfg.rpt_yaw_degrees)
    angle = float(rng.uniform(-limit, limit))
    return Pose(yaw_rotation(angle), offset)


def rpt_sample(p: Pose, cfg: AdaptorConfig, rng: np.random.Generator) -> Pose:
    """
    A novel pose near p.
    """
    return pose_compose(p, rpt_perturbation(cfg, rng))


def _rotation_op(m: Tensor) -> Tensor:
    """
    Project (B, 3, 3) matrices onto the nearest rotations, differentiably.
    """
    u, s, vt = np.linalg.svd(m.value)
    sign = np.sign(np.linalg.det(u @ vt))
    sign = np.where(sign == 0, 1.0, sign)
    u = u.copy()
    u[..., :, 2] *= sign[..., None]
    s = s.copy()
    s[..., 2] *= sign
    out = u @ vt

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        k = np.swapaxes(u, -1, -2) @ g @ np.swapaxes(vt, -1, -2)
        denom = s[..., :, None] + s[..., None, :]
        denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)  # noqa: PLR2004
        f = (k - np.swapaxes(k, -1, -2)) / denom
        return (u @ f @ vt,)

    return nn.custom(out, (m,), backward)


class Adaptor:
    """
    An MLP from a flattened 3x4 original-frame pose to an estimated-frame pose.

    Input translations are divided by scale_in and output translations are
    multiplied by scale_out. The output rotation block is projected onto the
    nearest rotation. The head's bias starts at the flattened identity pose.
    """

    def __init__(
        self,
        cfg: AdaptorConfig,
        rng: np.random.Generator,
        scale_in: float = 1.0,
        scale_out: float = 1.0,
        mlp: Optional[Mlp] = None,
    ) -> None:
        if scale_in <= 0 or scale_out <= 0:
            msg = f"translation scales must be positive, got {scale_in} and {scale_out}"
            raise InvalidConfig(msg)
        self.scale_in = scale_in
        self.scale_out = scale_out
        if mlp is None:
            spec = MlpSpec.uniform(12, cfg.width, cfg.depth, 12, final_scale=0.01)
            mlp = Mlp(spec, rng, "adaptor")
            mlp.biases[-1].assign(Pose.identity().matrix().reshape(-1))
        self.mlp = mlp

    def parameters(self) -> List[nn.Parameter]:
        return self.mlp.parameters()

    def encode(self, poses: Sequence[Pose]) -> np.ndarray:
        m = np.array([p.matrix() for p in poses]).reshape(-1, 3, 4)
        m[:, :, 3] /= self.scale_in
        return m.reshape(-1, 12)

    def forward(self, poses: Sequence[Pose]) -> Tuple[Tensor, Tensor]:
        """
        Rotations (B, 3, 3) and translations (B, 3) as graph nodes.
        """
        raw = nn.reshape(self.mlp(self.encode(poses)), (-1, 3, 4))
        rotation = _rotation_op(raw[:, :, :3])
        translation = raw[:, :, 3] * self.scale_out
        return rotation, translation

    def __call__(self, pose: Pose) -> Pose:
        return self.predict([pose])[0]

    def predict(self, poses: Sequence[Pose]) -> List[Pose]:
        if not poses:
            return []
        rotation, translation = self.forward(poses)
        return [Pose(nearest_rotation(r), t) for r, t in zip(rotation.value, translation.value)]

    def save(self, path: str, extra: Optional[Dict[str, Any]] = None) -> None:
        info = {"scale_in": self.scale_in, "scale_out": self.scale_out}
        info.update(extra or {})
        save_networks(path, {"adaptor": self.mlp}, info)

    @classmethod
    def load(cls, path: str) -> Tuple["Adaptor", Dict[str, Any]]:
        networks, extra = load_networks(path)
        if "adaptor" not in networks:
            msg = f"{path} does not contain an adaptor network"
            raise ShapeMismatch(msg)
        adaptor = cls(
            AdaptorConfig(),
            np.random.default_rng(0),
            float(extra.get("scale_in", 1.0)),
            float(extra.get("scale_out", 1.0)),
            mlp=networks["adaptor"],
        )
        return adaptor, extra


def adaptor_forward(adaptor: Adaptor, p: Pose) -> Pose:
    return adaptor(p)


def _matrix_op(rotation: Tensor, translation: Tensor) -> Tensor:
    return nn.concat([rotation, nn.reshape(translation, (3, 1))], axis=1)


def pose_loss_op(rotation: Tensor, translation: Tensor, target: Pose) -> Tensor:
    return nn.smooth_l1(_matrix_op(rotation, translation), target.matrix())


def _relative_translations(rotation: Tensor, translation: Tensor, following: Sequence[Pose]) -> Tensor:
    # row i is R^T (t_i - t) for the camera (R, t)
    centers = np.array([p.center for p in following]).reshape(-1, 3)
    return nn.matmul(nn.as_tensor(centers) - translation, rotation)


def projection_loss_op(
    rotation: Tensor,
    translation: Tensor,
    following: Sequence[Pose],
    targets: Sequence[Optional[PixelPoint]],
    k: Intrinsics,
) -> Tensor:
    """
    MSE between projected following-frame centres and target pixels, both
    divided by the image diagonal.

    Frames without a target, or at or behind the predicted camera, are left
    out; NoValidFrames if none remain.
    """
    if len(following) != len(targets):
        msg = f"{len(following)} following poses but {len(targets)} target pixels"
        raise ShapeMismatch(msg)
    relative = _relative_translations(rotation, translation, following)
    keep = [i for i, t in enumerate(targets) if t is not None and relative.value[i, 2] > DEPTH_EPSILON]
    if not keep:
        msg = "every following frame is behind the novel camera"
        raise NoValidFrames(msg)
    rows = np.asarray(keep)
    kept = relative[rows]
    z = kept[:, 2]
    diagonal = k.diagonal
    u = (kept[:, 0] * k.fx / z + k.cx) / diagonal
    v = (kept[:, 1] * k.fy / z + k.cy) / diagonal
    predicted = nn.concat([nn.reshape(u, (-1, 1)), nn.reshape(v, (-1, 1))], axis=1)
    target = np.array([[targets[i].u, targets[i].v] for i in keep]) / diagonal  # type: ignore[union-attr]
    return nn.mse(predicted, target)


def relative_loss_op(
    rotation: Tensor, translation: Tensor, following: Sequence[Pose], targets: Sequence[Pose]
) -> Tensor:
    """
    Mean smooth-L1 over the 12 entries of each relative pose.
    """
    if len(following) != len(targets):
        msg = f"{len(following)} following poses but {len(targets)} target poses"
        raise ShapeMismatch(msg)
    relative_t = _relative_translations(rotation, translation, following)
    # stacked R_i^T R is the transpose of each relative rotation R^T R_i
    stacked = np.concatenate([p.rotation.T for p in following], axis=0)
    relative_rt = nn.matmul(stacked, rotation)
    target_rt = np.concatenate([t.rotation.T for t in targets], axis=0)
    target_t = np.array([t.translation for t in targets])
    predicted = nn.concat([nn.reshape(relative_rt, (-1,)), nn.reshape(relative_t, (-1,))], axis=0)
    return nn.smooth_l1(predicted, np.concatenate([target_rt.reshape(-1), target_t.reshape(-1)]))


def _constant(pose: Pose) -> Tuple[Tensor, Tensor]:
    return nn.as_tensor(pose.rotation), nn.as_tensor(pose.translation)


def loss_pose(predicted: Pose, target: Pose) -> float:
    return float(pose_loss_op(*_constant(predicted), target).value)


def loss_proj(
    p_nov_pred: Pose, following_ewcs: Sequence[Pose], target_pixels: Sequence[Optional[PixelPoint]], k: Intrinsics
) -> float:
    return float(projection_loss_op(*_constant(p_nov_pred), following_ewcs, target_pixels, k).value)


def loss_3d(p_nov_pred: Pose, following_ewcs: Sequence[Pose], target_relatives: Sequence[Pose]) -> float:
    return float(relative_loss_op(*_constant(p_nov_pred), following_ewcs, target_relatives).value)


def loss_all(l_p: Scalar, l_3d: Scalar, l_proj: Scalar, weights: Tuple[float, float, float]) -> Scalar:
    w1, w2, w3 = weights
    return w1 * l_p + w2 * l_3d + w3 * l_proj


def projection_targets(p_nov: Pose, following_owcs: Sequence[Pose], k: Intrinsics) -> List[Optional[PixelPoint]]:
    """
    Where each following camera centre appears from the novel pose, on the
    original-frame side; None where it is behind the novel camera.
    """
    targets: List[Optional[PixelPoint]] = []
    for p in following_owcs:
        try:
            targets.append(ppm_project(ccm_relative_pose(p_nov, p), k))
        except BehindCamera:
            targets.append(None)
    return targets


def relative_targets(p_nov: Pose, following_owcs: Sequence[Pose], scale: float = 1.0) -> List[Pose]:
    """
    Relative poses seen from the novel pose, translations scaled into the
    estimated frame's units.
    """
    out = []
    for p in following_owcs:
        rel = ccm_relative_pose(p_nov, p)
        out.append(Pose(rel.rotation, rel.translation * scale))
    return out


def following_indices(n: int, count: int, following: int) -> List[int]:
    """
    Frames n+1..n+following, or the last following+1 frames without n for
    anchors too close to the end.
    """
    if n + following < count:
        return list(range(n + 1, n + following + 1))
    return [i for i in range(count - following - 1, count) if i != n]


def estimate_scale(pairs: Sequence[PosePair]) -> float:
    """
    Scale from the original frame's units to the estimated frame's.
    """
    src = [p.pose_owcs.center for p in pairs]
    dst = [p.pose_ewcs.center for p in pairs]
    try:
        return umeyama_align(src, dst).scale
    except DegenerateConfiguration:
        return trajectory_scale([p.pose_ewcs for p in pairs]) / trajectory_scale([p.pose_owcs for p in pairs])


class UmeyamaBaseline:
    """
    A single similarity fitted to the camera centres.
    """

    def __init__(self, similarity: Similarity) -> None:
        self.similarity = similarity

    @classmethod
    def fit(cls, pairs: Sequence[PosePair]) -> "UmeyamaBaseline":
        return cls(umeyama_align([p.pose_owcs.center for p in pairs], [p.pose_ewcs.center for p in pairs]))

    def __call__(self, pose: Pose) -> Pose:
        return self.similarity.apply_pose(pose)

    def predict(self, poses: Sequence[Pose]) -> List[Pose]:
        return [self(p) for p in poses]


def translation_error(predict: Callable[[Sequence[Pose]], List[Pose]], pairs: Sequence[PosePair]) -> float:
    """
    Mean distance between predicted and estimated-frame camera centres.
    """
    if not pairs:
        msg = "no pose pairs to evaluate"
        raise TooFewPairs(msg)
    predicted = predict([p.pose_owcs for p in pairs])
    return float(np.mean([np.linalg.norm(a.center - p.pose_ewcs.center) for a, p in zip(predicted, pairs)]))


def check_pairs(pairs: Sequence[PosePair], following: int) -> None:
    if len(pairs) < following + 1:
        msg = f"training needs at least {following + 1} pose pairs, got {len(pairs)}"
        raise TooFewPairs(msg)
    frames = [p.frame for p in pairs]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        msg = "pose pair frame indices must be strictly increasing"
        raise InvalidConfig(msg)


class AdaptorTrainer:
    """
    Minimizes the weighted sum of the pose, 3D and projection losses with Adam.
    """

    def __init__(self, pairs: Sequence[PosePair], k: Intrinsics, cfg: AdaptorConfig, tracer: Tracer = QUIET) -> None:
        check_pairs(pairs, cfg.following)
        self.pairs = list(pairs)
        self.k = k
        self.cfg = cfg
        self.tracer = tracer
        self.rng = np.random.default_rng(cfg.seed)
        owcs = [p.pose_owcs for p in self.pairs]
        ewcs = [p.pose_ewcs for p in self.pairs]
        scale_in = cfg.translation_scale or trajectory_scale(owcs)
        self.adaptor = Adaptor(cfg, self.rng, scale_in, trajectory_scale(ewcs))
        self.scale = estimate_scale(self.pairs)
        self.optimizer = Adam(self.adaptor.parameters(), cfg.lr)
        self.epoch = 0
        self.log: List[Dict[str, Any]] = []

    def batch_loss(self, anchors: Sequence[int], w2: float) -> Tuple[Tensor, Dict[str, float]]:
        cfg = self.cfg
        count = len(self.pairs)
        novel = [rpt_sample(self.pairs[n].pose_owcs, cfg, self.rng) for n in anchors]
        rotation, translation = self.adaptor.forward([self.pairs[n].pose_owcs for n in anchors] + novel)
        b = len(anchors)
        l_p: List[Tensor] = []
        l_3d: List[Tensor] = []
        l_proj: List[Tensor] = []
        for i, n in enumerate(anchors):
            l_p.append(pose_loss_op(rotation[i], translation[i], self.pairs[n].pose_ewcs))
            rows = following_indices(n, count, cfg.following)
            owcs = [self.pairs[j].pose_owcs for j in rows]
            ewcs = [self.pairs[j].pose_ewcs for j in rows]
            r_nov, t_nov = rotation[b + i], translation[b + i]
            l_3d.append(relative_loss_op(r_nov, t_nov, ewcs, relative_targets(novel[i], owcs, self.scale)))
            try:
                l_proj.append(projection_loss_op(r_nov, t_nov, ewcs, projection_targets(novel[i], owcs, self.k), self.k))
            except NoValidFrames:
                self.tracer.trace(f"anchor {self.pairs[n].frame}: no following frame in front of the novel pose")
        mean_p = nn.sum(nn.concat([nn.reshape(x, (1,)) for x in l_p], axis=0)) * (1.0 / b)
        mean_3d = nn.sum(nn.concat([nn.reshape(x, (1,)) for x in l_3d], axis=0)) * (1.0 / b)
        mean_proj: Scalar = 0.0
        if l_proj:
            mean_proj = nn.sum(nn.concat([nn.reshape(x, (1,)) for x in l_proj], axis=0)) * (1.0 / len(l_proj))
        total = loss_all(mean_p, mean_3d, mean_proj, (cfg.w1, w2, cfg.w3))
        assert isinstance(total, Tensor)  # noqa: S101
        parts = {
            "l_p": float(mean_p.value),
            "l_3d": float(mean_3d.value),
            "l_proj": float(mean_proj.value) if isinstance(mean_proj, Tensor) else 0.0,
        }
        return total, parts

    def train_epoch(self) -> Dict[str, Any]:
        cfg = self.cfg
        w2 = cfg.w2_at(self.epoch)
        order = self.rng.permutation(len(self.pairs))
        totals = {"loss": 0.0, "l_p": 0.0, "l_3d": 0.0, "l_proj": 0.0}
        batches = 0
        for start in range(0, len(order), cfg.batch):
            anchors = [int(n) for n in order[start : start + cfg.batch]]
            self.optimizer.zero_grad()
            loss, parts = self.batch_loss(anchors, w2)
            nn.backward(loss)
            self.optimizer.step()
            totals["loss"] += float(loss.value)
            for key, value in parts.items():
                totals[key] += value
            batches += 1
        self.epoch += 1
        record: Dict[str, Any] = {"epoch": self.epoch, "n": cfg.following, "w2": w2}
        record.update({key: value / batches for key, value in totals.items()})
        self.log.append(record)
        return record

    def train(self, epochs: Optional[int] = None, on_log: Optional[Callable[[Dict[str, Any]], None]] = None) -> Adaptor:
        epochs = self.cfg.epochs if epochs is None else epochs
        for step in range(epochs):
            record = self.train_epoch()
            if on_log is not None:
                on_log(record)
            self.tracer.progress("Training adaptor", step + 1, epochs)
        return self.adaptor


def train_adaptor(
    pairs: Sequence[PosePair],
    k: Intrinsics,
    cfg: AdaptorConfig,
    tracer: Tracer = QUIET,
    on_log: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> Tuple[Adaptor, List[Dict[str, Any]]]:
    trainer = AdaptorTrainer(pairs, k, cfg, tracer)
    adaptor = trainer.train(on_log=on_log)
    return adaptor, trainer.log


def load_pairs(path: str) -> List[PosePair]:
    with open(path) as f:
        try:
            rep = json.load(f)
        except json.JSONDecodeError as e:
            msg = f'cannot parse pose pairs "{path}": {e}'
            raise InvalidConfig(msg) from e
    if not isinstance(rep, list):
        msg = f'"{path}" must hold a JSON array of pose pairs'
        raise InvalidConfig(msg)
    try:
        return [PosePair.from_json(item) for item in rep]
    except (KeyError, TypeError) as e:
        msg = f'"{path}": pose pair is missing a field or has the wrong type ({e})'
        raise InvalidConfig(msg) from e


def save_pairs(pairs: Sequence[PosePair], path: str) -> None:
    write_json([p.to_json() for p in pairs], path)
