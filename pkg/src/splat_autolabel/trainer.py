"""
Grouped training of a deformable Gaussian scene.

The image sequence is cut into consecutive groups. Every primitive is tagged
with the last group that has a camera within the valid distance of it, and
each group is rendered with its own primitives only. One iteration renders
one sampled view per group, accumulates all the gradients, and then takes a
single optimizer step, after which the densification schedule runs.
"""

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from splat_autolabel import nn
from splat_autolabel.deformation import DeformableModel, ModelConfig
from splat_autolabel.errors import EmptySequence, InvalidConfig, NoVisiblePrimitives
from splat_autolabel.metrics import psnr, render_loss_op, ssim
from splat_autolabel.nn import Adam, load_networks, save_networks
from splat_autolabel.renderer import CameraView, RenderConfig, RenderedImage, Splats, render, render_op
from splat_autolabel.scene import GaussianScene, SceneConfig
from splat_autolabel.util import QUIET, Tracer, dataclass_from_dict, write_json


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    position_lr: float = 1.6e-4
    rotation_lr: float = 1e-3
    scale_lr: float = 5e-3
    opacity_lr: float = 5e-2
    color_lr: float = 1e-2
    state_lr: float = 1e-3
    network_lr: float = 8e-4
    ssim_weight: float = 0.2
    test_every: int = 8
    checkpoint_every: int = 0
    use_groups: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 0:
            msg = "iterations must not be negative"
            raise InvalidConfig(msg)
        if self.test_every < 0:
            msg = "test_every must not be negative"
            raise InvalidConfig(msg)


@dataclass
class Frame:
    view: CameraView
    image: np.ndarray


@dataclass
class ImageGroup:
    index: int
    views: List[Frame]
    held_out: List[Frame] = field(default_factory=list)

    def centers(self) -> np.ndarray:
        return np.array([f.view.center for f in self.views + self.held_out]).reshape(-1, 3)


@dataclass
class TrainState:
    iteration: int
    seed: int
    rng: np.random.Generator
    optimizer: Adam


def group_images(frames: Sequence[Frame], per_group: int, *, test_every: int = 0) -> List[ImageGroup]:
    """
    Consecutive slices of per_group frames; the last group may be short.
    """
    if per_group < 1:
        msg = f"images per group must be at least 1, got {per_group}"
        raise InvalidConfig(msg)
    if len(frames) == 0:
        msg = "cannot group an empty image sequence"
        raise EmptySequence(msg)
    groups = []
    for i in range(0, len(frames), per_group):
        chunk = list(frames[i : i + per_group])
        if test_every > 0:
            offset = i
            train = [f for j, f in enumerate(chunk) if (offset + j) % test_every != 0]
            test = [f for j, f in enumerate(chunk) if (offset + j) % test_every == 0]
            if not train:
                train, test = chunk, []
        else:
            train, test = chunk, []
        groups.append(ImageGroup(len(groups) + 1, train, test))
    return groups


def per_group_for(count: int, groups: int) -> int:
    """
    Images per group that yields the requested number of groups.
    """
    if groups < 1:
        msg = f"group count must be at least 1, got {groups}"
        raise InvalidConfig(msg)
    return max(1, math.ceil(count / groups))


def sample_training_view(group: int, groups: Sequence[ImageGroup], overlap: int, rng: np.random.Generator) -> Frame:
    """
    Uniform over group j's views plus the last `overlap` views of group j - 1.
    """
    candidates = candidate_views(group, groups, overlap)
    return candidates[int(rng.integers(len(candidates)))]


def candidate_views(group: int, groups: Sequence[ImageGroup], overlap: int) -> List[Frame]:
    candidates = list(groups[group - 1].views)
    if group > 1 and overlap > 0:
        candidates = list(groups[group - 2].views[-overlap:]) + candidates
    return candidates


def view_rows(scene: GaussianScene, frame_index: int, per_group: int, *, use_groups: bool = True) -> np.ndarray:
    """
    Rows a view of the given sequence position renders with: its group's
    primitives, or every primitive when training was ungrouped.
    """
    if not use_groups:
        return np.arange(len(scene))
    return scene.group_rows(frame_index // per_group + 1)


def render_frame(
    model: DeformableModel, view: CameraView, rows: Optional[np.ndarray] = None, cfg: Optional[RenderConfig] = None
) -> RenderedImage:
    g2 = model.snapshot(view.time, view.center, rows)
    splats = Splats(g2.position.value, g2.rotation.value, g2.log_scale.value, g2.opacity.value, g2.color.value)
    image, _ = render(splats, view, cfg)
    return image


class Trainer:
    """
    Runs grouped training iterations over a DeformableModel.
    """

    def __init__(
        self,
        model: DeformableModel,
        groups: Sequence[ImageGroup],
        scene_cfg: SceneConfig,
        train_cfg: TrainConfig,
        render_cfg: Optional[RenderConfig] = None,
        tracer: Tracer = QUIET,
    ) -> None:
        if not groups:
            msg = "training needs at least one image group"
            raise EmptySequence(msg)
        self.model = model
        self.scene_cfg = scene_cfg
        self.train_cfg = train_cfg
        self.render_cfg = render_cfg or RenderConfig()
        self.tracer = tracer
        if train_cfg.use_groups:
            self.groups = list(groups)
        else:
            frames = [f for g in groups for f in g.views]
            held_out = [f for g in groups for f in g.held_out]
            self.groups = [ImageGroup(1, frames, held_out)]
        self.state = TrainState(0, train_cfg.seed, np.random.default_rng(train_cfg.seed), self._make_optimizer())
        self.log: List[Dict[str, Any]] = []
        self.visits: Dict[int, np.ndarray] = {}

    def _make_optimizer(self) -> Adam:
        scene = self.model.scene
        cfg = self.train_cfg
        lrs = {
            scene.position.name: cfg.position_lr * scene.extent,
            scene.rotation.name: cfg.rotation_lr,
            scene.log_scale.name: cfg.scale_lr,
            scene.opacity_logits.name: cfg.opacity_lr,
            scene.color.name: cfg.color_lr,
            scene.state.name: cfg.state_lr,
        }
        return Adam(scene.parameters() + self.model.network_parameters(), cfg.network_lr, eps=1e-15, lrs=lrs)

    @property
    def scene(self) -> GaussianScene:
        return self.model.scene

    def assign_groups(self) -> None:
        """
        Tag primitives by group; without grouping every primitive joins group 1.
        """
        scene = self.scene
        if self.train_cfg.use_groups:
            scene.assign_group_ids([g.centers() for g in self.groups], self.scene_cfg.valid_distance)
        else:
            scene.group_ids = np.ones(len(scene), dtype=np.int64)
            scene.touch()

    @property
    def warm(self) -> bool:
        return self.state.iteration < self.scene_cfg.warm_up

    def group_step(self, group: ImageGroup) -> Dict[str, Any]:
        """
        Forward and backward for one sampled view of a group, accumulating gradients.
        """
        scene = self.scene
        rows = scene.group_rows(group.index)
        if len(rows) == 0:
            raise NoVisiblePrimitives(group.index)
        frame = sample_training_view(group.index, self.groups, self.scene_cfg.overlap_count, self.state.rng)
        view = frame.view
        g2 = self.model.deformed(view.time, view.center, rows, warm=self.warm)
        result = render_op(g2.position, g2.rotation, g2.log_scale, g2.opacity, g2.color, view, self.render_cfg, scene)
        loss = render_loss_op(result.image, frame.image, self.train_cfg.ssim_weight)
        nn.backward(loss)
        grads = result.gradients
        if grads is not None:
            visible = np.flatnonzero(grads.visible)
            scene.add_densification_stats(rows[visible], grads.mean2d_norm[visible])
            self.visits[group.index] = rows[visible]
        return {
            "iter": self.state.iteration + 1,
            "group": group.index,
            "loss": float(loss.value),
            "psnr": psnr(result.rendered.pixels, frame.image),
        }

    def train_iteration(self) -> List[Dict[str, Any]]:
        """
        One view per group, one optimizer step, then the densification hooks.
        """
        optimizer = self.state.optimizer
        optimizer.zero_grad()
        records = [self.group_step(group) for group in self.groups]
        optimizer.step()
        self.scene.renormalize()
        self.state.iteration += 1
        self._densify(self.state.iteration)
        self.log.extend(records)
        return records

    def _densify(self, iteration: int) -> None:
        scene = self.scene
        cfg = self.scene_cfg
        optimizer = self.state.optimizer
        if cfg.densify_due(iteration):
            report = scene.densify_and_prune(
                scene.mean_position_gradients(),
                cfg,
                self.model.decoded_opacity(),
                self.state.rng,
                prune_unassigned=self.train_cfg.use_groups,
            )
            if report.source_rows is not None:
                for param in scene.parameters():
                    optimizer.remap_rows(param, report.source_rows)
            self.tracer.trace(
                f"iteration {iteration}: cloned {report.cloned}, split {report.split}, "
                f"pruned {report.pruned}, {len(scene)} primitives",
            )
        if cfg.reset_due(iteration):
            scene.opacity_reset(self.model.decoder)
            optimizer.remap_rows(scene.opacity_logits, np.full(len(scene), -1))
            self.tracer.trace(f"iteration {iteration}: opacity reset")

    def train(
        self,
        iterations: int,
        on_log: Optional[Callable[[Dict[str, Any]], None]] = None,
        on_checkpoint: Optional[Callable[[int], None]] = None,
    ) -> List[Dict[str, Any]]:
        for step in range(iterations):
            for record in self.train_iteration():
                if on_log is not None:
                    on_log(record)
            done = self.state.iteration
            self.tracer.progress("Training", step + 1, iterations)
            every = self.train_cfg.checkpoint_every
            if on_checkpoint is not None and every > 0 and done % every == 0:
                on_checkpoint(done)
        return self.log

    def evaluate(self, held_out: bool = True) -> Dict[str, Any]:
        """
        PSNR and SSIM per group and overall on held-out (or training) views.
        """
        per_group = []
        values: List[Tuple[float, float]] = []
        for group in self.groups:
            frames = group.held_out if held_out else group.views
            if not frames:
                continue
            rows = self.scene.group_rows(group.index)
            scores = []
            for frame in frames:
                image = render_frame(self.model, frame.view, rows, self.render_cfg)
                scores.append((psnr(image.pixels, frame.image), ssim(image.pixels, frame.image)))
            values.extend(scores)
            per_group.append(
                {
                    "group": group.index,
                    "views": len(frames),
                    "psnr": float(np.mean([s[0] for s in scores])),
                    "ssim": float(np.mean([s[1] for s in scores])),
                }
            )
        return {
            "groups": per_group,
            "psnr": float(np.mean([v[0] for v in values])) if values else None,
            "ssim": float(np.mean([v[1] for v in values])) if values else None,
        }


def train(
    model: DeformableModel,
    groups: Sequence[ImageGroup],
    scene_cfg: SceneConfig,
    train_cfg: TrainConfig,
    iterations: Optional[int] = None,
    render_cfg: Optional[RenderConfig] = None,
    tracer: Tracer = QUIET,
) -> Trainer:
    """
    Run the configured number of iterations; groups must already be assigned.
    """
    trainer = Trainer(model, groups, scene_cfg, train_cfg, render_cfg, tracer)
    trainer.train(train_cfg.iterations if iterations is None else iterations)
    return trainer


def save_renderer(directory: str, model: DeformableModel, config: Optional[Dict[str, Any]] = None) -> None:
    """
    Write scene.json/bin, networks.json/bin and config.json into directory.
    """
    os.makedirs(directory, exist_ok=True)
    model.scene.save(directory)
    save_networks(
        os.path.join(directory, "networks"),
        model.networks(),
        {"model": dataclasses.asdict(model.cfg)},
    )
    write_json(config or {}, os.path.join(directory, "config.json"))


def load_renderer(directory: str) -> Tuple[DeformableModel, Dict[str, Any]]:
    scene = GaussianScene.load(directory)
    networks, extra = load_networks(os.path.join(directory, "networks"))
    cfg = dataclass_from_dict(ModelConfig, extra.get("model", {}), section="model")
    model = DeformableModel(scene, cfg, np.random.default_rng(0))
    model.load_networks(networks)
    config_path = os.path.join(directory, "config.json")
    config: Dict[str, Any] = {}
    if os.path.exists(config_path):
        with open(config_path) as f:
            config = json.load(f)
    return model, config
