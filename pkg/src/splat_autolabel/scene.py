"""
The store of 3D Gaussians and their lifecycle.

A scene holds one row per primitive in each attribute array. Trainable
attributes are `nn.Parameter`s so the optimizer can update them in place;
densification and pruning replace whole arrays and bump `version`, which
invalidates any compositing record or tape recorded before the change.
"""

import json
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from splat_autolabel.constants import (
    CHECKPOINT_VERSION,
    INITIAL_OPACITY,
    OPACITY_LOGITS_DIM,
    PERCENT_DENSE,
    PRUNE_OPACITY,
    RESET_OPACITY,
    SPLIT_COUNT,
    SPLIT_SCALE_DIVISOR,
    STATE_DIM,
    STATE_INIT_STD,
)
from splat_autolabel.errors import CountMismatch, EmptyPointCloud, InvalidConfig, MalformedHeader
from splat_autolabel.geometry import normalize_quaternions, quaternion_to_rotation
from splat_autolabel.nn import Parameter
from splat_autolabel.util import atomic_write, write_json

MIN_INITIAL_SCALE = 1e-7
SINGLE_POINT_SCALE = 0.01


@dataclass(frozen=True)
class SceneConfig:
    densification_interval: int = 100
    opacity_reset_interval: int = 1000
    densify_from: int = 100
    densify_until: int = 1500
    densify_grad_threshold: float = 0.0002
    warm_up: int = 300
    images_per_group: int = 8
    valid_distance: float = 8.0
    overlap_count: int = 2
    state_dim: int = STATE_DIM
    opacity_logits_dim: int = OPACITY_LOGITS_DIM
    percent_dense: float = PERCENT_DENSE

    def __post_init__(self) -> None:
        if self.densify_from > self.densify_until:
            msg = f"densify_from ({self.densify_from}) must not exceed densify_until ({self.densify_until})"
            raise InvalidConfig(msg)
        if self.images_per_group < 1:
            msg = "images_per_group must be at least 1"
            raise InvalidConfig(msg)
        if self.valid_distance <= 0:
            msg = "valid_distance must be positive"
            raise InvalidConfig(msg)
        if self.densification_interval < 1 or self.opacity_reset_interval < 1:
            msg = "densification and opacity reset intervals must be positive"
            raise InvalidConfig(msg)
        if self.overlap_count < 0:
            msg = "overlap_count must not be negative"
            raise InvalidConfig(msg)

    def densify_due(self, iteration: int) -> bool:
        return (
            self.densify_from <= iteration <= self.densify_until
            and iteration % self.densification_interval == 0
        )

    def reset_due(self, iteration: int) -> bool:
        return 0 < iteration <= self.densify_until and iteration % self.opacity_reset_interval == 0


class OpacityCodec(Protocol):
    """
    Maps opacity logits to decoded opacities, and back under a ceiling.
    """

    def decode(self, logits: np.ndarray) -> np.ndarray: ...

    def limit(self, logits: np.ndarray, ceiling: float) -> np.ndarray: ...


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


class SigmoidCodec:
    """
    Decoded opacity is the sigmoid of the first logit component.
    """

    def decode(self, logits: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-logits[:, 0]))

    def limit(self, logits: np.ndarray, ceiling: float) -> np.ndarray:
        out = np.array(logits)
        out[:, 0] = np.minimum(out[:, 0], logit(ceiling))
        return out


_ATTRIBUTES = ("position", "rotation", "log_scale", "opacity_logits", "color", "state")


@dataclass
class DensifyReport:
    cloned: int = 0
    split: int = 0
    pruned: int = 0
    source_rows: Optional[np.ndarray] = None

    @property
    def changed(self) -> bool:
        return self.source_rows is not None


class GaussianScene:
    """
    Per-primitive attribute arrays plus group ids and densification statistics.
    """

    def __init__(
        self,
        position: np.ndarray,
        rotation: np.ndarray,
        log_scale: np.ndarray,
        opacity_logits: np.ndarray,
        color: np.ndarray,
        state: np.ndarray,
        group_ids: Optional[np.ndarray] = None,
        extent: float = 1.0,
    ) -> None:
        n = len(position)
        arrays = {
            "position": (position, 3),
            "rotation": (rotation, 4),
            "log_scale": (log_scale, 3),
            "opacity_logits": (opacity_logits, None),
            "color": (color, 3),
            "state": (state, None),
        }
        for name, (value, width) in arrays.items():
            value = np.asarray(value, dtype=np.float64)
            if value.ndim != 2 or len(value) != n or (width is not None and value.shape[1] != width):  # noqa: PLR2004
                msg = f"attribute {name} has shape {value.shape}, expected ({n}, {width or 'k'})"
                raise CountMismatch(msg)
        self.position = Parameter(position, "position")
        self.rotation = Parameter(normalize_quaternions(np.asarray(rotation, dtype=np.float64)), "rotation")
        self.log_scale = Parameter(log_scale, "log_scale")
        self.opacity_logits = Parameter(opacity_logits, "opacity_logits")
        self.color = Parameter(color, "color")
        self.state = Parameter(state, "state")
        if group_ids is None:
            group_ids = np.zeros(n, dtype=np.int64)
        self.group_ids = np.asarray(group_ids, dtype=np.int64)
        if self.group_ids.shape != (n,):
            msg = f"{len(self.group_ids)} group ids for {n} primitives"
            raise CountMismatch(msg)
        self.extent = float(extent)
        self.version = 0
        self._grad_accum = np.zeros(n)
        self._grad_count = np.zeros(n)

    def __len__(self) -> int:
        return len(self.position.value)

    def parameters(self) -> List[Parameter]:
        return [getattr(self, name) for name in _ATTRIBUTES]

    def touch(self) -> None:
        """
        Record that attributes changed outside of a structural edit.
        """
        self.version += 1

    def renormalize(self) -> None:
        """
        Project rotations back onto unit quaternions after an optimizer step.
        """
        self.rotation.value = normalize_quaternions(self.rotation.value)
        self.touch()

    def group_rows(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.group_ids == group)

    def copy(self) -> "GaussianScene":
        out = GaussianScene(
            *(np.array(getattr(self, name).value) for name in _ATTRIBUTES),
            group_ids=np.array(self.group_ids),
            extent=self.extent,
        )
        out._grad_accum = np.array(self._grad_accum)
        out._grad_count = np.array(self._grad_count)
        return out

    def set_extent_from_cameras(self, centers: np.ndarray) -> None:
        """
        Scene extent is 1.1 times the largest camera distance from their centroid.
        """
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        radius = float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()) if len(centers) else 0.0
        self.extent = 1.1 * radius if radius > 0 else 1.0

    def add_densification_stats(self, rows: np.ndarray, grad_norms: np.ndarray) -> None:
        """
        Accumulate screen-space positional gradient norms for visible primitives.
        """
        rows = np.asarray(rows, dtype=np.int64)
        np.add.at(self._grad_accum, rows, grad_norms)
        np.add.at(self._grad_count, rows, 1.0)

    def mean_position_gradients(self) -> np.ndarray:
        out = np.zeros(len(self))
        seen = self._grad_count > 0
        out[seen] = self._grad_accum[seen] / self._grad_count[seen]
        return out

    def reset_densification_stats(self) -> None:
        self._grad_accum = np.zeros(len(self))
        self._grad_count = np.zeros(len(self))

    def densify_and_prune(
        self,
        position_gradients: np.ndarray,
        cfg: SceneConfig,
        opacity: np.ndarray,
        rng: np.random.Generator,
        *,
        prune_unassigned: bool = False,
    ) -> DensifyReport:
        """
        Clone small and split large high-gradient primitives, then drop faint ones.

        `opacity` is the decoded opacity per primitive. The returned report's
        source_rows maps each new row to the row it was kept from, or -1 for a
        newly created primitive, so optimizer moments can follow the edit.
        """
        n = len(self)
        position_gradients = np.asarray(position_gradients, dtype=np.float64)
        opacity = np.asarray(opacity, dtype=np.float64)
        if position_gradients.shape != (n,) or opacity.shape != (n,):
            msg = f"expected {n} gradients and opacities, got {position_gradients.shape} and {opacity.shape}"
            raise CountMismatch(msg)
        selected = position_gradients > cfg.densify_grad_threshold
        small = np.exp(self.log_scale.value).max(axis=1) < cfg.percent_dense * self.extent
        clone = np.flatnonzero(selected & small)
        split = np.flatnonzero(selected & ~small)
        keep = np.setdiff1d(np.arange(n), split)

        values = {name: getattr(self, name).value for name in _ATTRIBUTES}
        parts: Dict[str, List[np.ndarray]] = {name: [values[name][keep], values[name][clone]] for name in _ATTRIBUTES}
        groups = [self.group_ids[keep], self.group_ids[clone]]
        sources = [keep, np.full(len(clone), -1)]
        parents = [keep, clone]

        if len(split):
            scales = np.exp(values["log_scale"][split])
            rot = quaternion_to_rotation(values["rotation"][split])
            repeated = np.repeat(split, SPLIT_COUNT)
            samples = rng.normal(0.0, 1.0, size=(len(repeated), 3)) * np.repeat(scales, SPLIT_COUNT, axis=0)
            offsets = np.einsum("nij,nj->ni", np.repeat(rot, SPLIT_COUNT, axis=0), samples)
            for name in _ATTRIBUTES:
                parts[name].append(values[name][repeated])
            parts["position"][-1] = values["position"][repeated] + offsets
            parts["log_scale"][-1] = np.log(np.repeat(scales, SPLIT_COUNT, axis=0) / SPLIT_SCALE_DIVISOR)
            groups.append(self.group_ids[repeated])
            sources.append(np.full(len(repeated), -1))
            parents.append(repeated)

        parent_rows = np.concatenate(parents)
        alive = opacity[parent_rows] >= PRUNE_OPACITY
        new_groups = np.concatenate(groups)
        if prune_unassigned:
            alive &= new_groups != 0
        source_rows = np.concatenate(sources)[alive]
        report = DensifyReport(
            cloned=len(clone),
            split=len(split),
            pruned=int((~alive).sum()),
        )
        if len(clone) == 0 and len(split) == 0 and alive.all():
            self.reset_densification_stats()
            return report
        for name in _ATTRIBUTES:
            getattr(self, name).assign(np.concatenate(parts[name])[alive])
        self.group_ids = new_groups[alive]
        self.reset_densification_stats()
        self.touch()
        report.source_rows = source_rows
        return report

    def opacity_reset(self, codec: OpacityCodec) -> None:
        """
        Lower every decoded opacity to at most the reset ceiling.
        """
        above = codec.decode(self.opacity_logits.value) > RESET_OPACITY
        if not above.any():
            return
        logits = np.array(self.opacity_logits.value)
        logits[above] = codec.limit(logits[above], RESET_OPACITY)
        self.opacity_logits.assign(logits)
        self.touch()

    def assign_group_ids(self, camera_groups: Sequence[np.ndarray], valid_distance: float) -> None:
        """
        Label primitives near each group's cameras with the 1-based group index.

        Groups are visited in order, so a primitive near several groups keeps
        the last one. Primitives near no camera are left unassigned (0).
        """
        ids = np.zeros(len(self), dtype=np.int64)
        for index, centers in enumerate(camera_groups, start=1):
            centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
            if len(centers) == 0 or len(self) == 0:
                continue
            distances, _ = cKDTree(centers).query(self.position.value, distance_upper_bound=valid_distance)
            ids[distances < valid_distance] = index
        self.group_ids = ids
        self.touch()

    def save(self, directory: str) -> None:
        """
        Write scene.json (manifest) and scene.bin (little-endian blocks).
        """
        blocks = []
        chunks = []
        offset = 0
        for name, value, dtype in self._blocks():
            data = np.ascontiguousarray(value, dtype=dtype).tobytes()
            blocks.append({"name": name, "dtype": dtype, "shape": list(value.shape), "offset": offset})
            chunks.append(data)
            offset += len(data)
        manifest = {
            "version": CHECKPOINT_VERSION,
            "count": len(self),
            "extent": self.extent,
            "blocks": blocks,
        }
        atomic_write(b"".join(chunks), os.path.join(directory, "scene.bin"))
        write_json(manifest, os.path.join(directory, "scene.json"))

    def _blocks(self) -> List[Tuple[str, np.ndarray, str]]:
        out = [(name, getattr(self, name).value, "<f8") for name in _ATTRIBUTES]
        out.append(("group_ids", self.group_ids, "<i8"))
        return out

    @classmethod
    def load(cls, directory: str) -> "GaussianScene":
        manifest_path = os.path.join(directory, "scene.json")
        with open(manifest_path) as f:
            manifest: Dict[str, Any] = json.load(f)
        if manifest.get("version") != CHECKPOINT_VERSION:
            msg = f"{manifest_path}: expected scene version {CHECKPOINT_VERSION}, got {manifest.get('version')}"
            raise MalformedHeader(msg)
        with open(os.path.join(directory, "scene.bin"), "rb") as f:
            data = f.read()
        arrays: Dict[str, np.ndarray] = {}
        for block in manifest["blocks"]:
            shape = tuple(block["shape"])
            dtype = np.dtype(block["dtype"])
            size = int(np.prod(shape)) * dtype.itemsize
            raw = data[block["offset"] : block["offset"] + size]
            if len(raw) != size:
                msg = f"{directory}/scene.bin is truncated at block {block['name']}"
                raise MalformedHeader(msg)
            arrays[block["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        missing = [name for name in (*_ATTRIBUTES, "group_ids") if name not in arrays]
        if missing:
            msg = f"{manifest_path} is missing blocks: {', '.join(missing)}"
            raise MalformedHeader(msg)
        scene = cls.__new__(cls)
        GaussianScene.__init__(
            scene,
            *(arrays[name] for name in _ATTRIBUTES),
            group_ids=arrays["group_ids"],
            extent=float(manifest.get("extent", 1.0)),
        )
        # keep stored quaternions bit-exact
        scene.rotation.value = arrays["rotation"]
        return scene


def covariance3d(rotation: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    """
    Sigma = R S S^T R^T with S = diag(exp(s)), batched over leading axes.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    log_scale = np.asarray(log_scale, dtype=np.float64)
    r = quaternion_to_rotation(normalize_quaternions(rotation))
    m = r * np.exp(log_scale)[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def initial_scales(points: np.ndarray) -> np.ndarray:
    """
    Mean distance from each point to its three nearest neighbours.
    """
    n = len(points)
    if n < 2:  # noqa: PLR2004
        return np.full(n, SINGLE_POINT_SCALE)
    k = min(3, n - 1)
    distances, _ = cKDTree(points).query(points, k=k + 1)
    return np.maximum(np.asarray(distances).reshape(n, -1)[:, 1:].mean(axis=1), MIN_INITIAL_SCALE)


def init_from_points(
    points: np.ndarray,
    colors: np.ndarray,
    rng: np.random.Generator,
    cfg: Optional[SceneConfig] = None,
) -> GaussianScene:
    """
    One isotropic primitive per point, opacity about 0.1, small random state.
    """
    cfg = cfg or SceneConfig()
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        msg = "cannot initialize a scene from an empty point cloud"
        raise EmptyPointCloud(msg)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if len(colors) != len(points):
        msg = f"{len(points)} points but {len(colors)} colors"
        raise CountMismatch(msg)
    n = len(points)
    rotation = np.zeros((n, 4))
    rotation[:, 0] = 1.0
    log_scale = np.repeat(np.log(initial_scales(points))[:, None], 3, axis=1)
    opacity_logits = np.full((n, cfg.opacity_logits_dim), logit(INITIAL_OPACITY))
    state = rng.normal(0.0, STATE_INIT_STD, size=(n, cfg.state_dim))
    scene = GaussianScene(points, rotation, log_scale, opacity_logits, np.clip(colors, 0.0, 1.0), state)
    centered = points - points.mean(axis=0)
    radius = float(np.linalg.norm(centered, axis=1).max())
    scene.extent = 1.1 * radius if radius > 0 else 1.0
    return scene
