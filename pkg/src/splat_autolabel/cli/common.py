import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import splat_autolabel
from splat_autolabel.adaptor import AdaptorConfig
from splat_autolabel.deformation import ModelConfig
from splat_autolabel.errors import InvalidConfig
from splat_autolabel.labeling import LabelConfig
from splat_autolabel.renderer import RenderConfig
from splat_autolabel.scene import SceneConfig
from splat_autolabel.trainer import TrainConfig
from splat_autolabel.util import Config, Level, Tracer, sha256_file, stdout, write_json

MANIFEST = "manifest.json"

SECTIONS = {
    "scene": SceneConfig,
    "render": RenderConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "adaptor": AdaptorConfig,
    "label": LabelConfig,
}

# schedules for the full-size datasets; the built-in defaults are desk scale
PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "kitti": {
        "scene": {
            "warm_up": 3000,
            "densification_interval": 100,
            "opacity_reset_interval": 3000,
            "densify_from": 500,
            "densify_until": 15000,
            "densify_grad_threshold": 0.0002,
        },
        "train": {"iterations": 40000, "test_every": 10},
    },
    "nuscenes-s": {
        "scene": {
            "warm_up": 3000,
            "densification_interval": 100,
            "opacity_reset_interval": 3000,
            "densify_from": 500,
            "densify_until": 15000,
            "densify_grad_threshold": 0.0002,
        },
        "train": {"iterations": 40000, "test_every": 4},
    },
    "nuscenes-d": {
        "scene": {
            "warm_up": 30000,
            "densification_interval": 300,
            "opacity_reset_interval": 6000,
            "densify_from": 5000,
            "densify_until": 100000,
            "densify_grad_threshold": 0.0001,
        },
        "train": {"iterations": 200000, "test_every": 5},
    },
}


class UsageError(Exception):
    """
    Missing or conflicting command-line arguments; reported with exit status 2.
    """


@dataclass(frozen=True)
class Settings:
    scene: SceneConfig
    render: RenderConfig
    model: ModelConfig
    train: TrainConfig
    adaptor: AdaptorConfig
    label: LabelConfig

    def to_json(self) -> Dict[str, Any]:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}


def resolve_config(
    preset: Optional[str] = None,
    config_path: Optional[str] = None,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> Config:
    """
    Defaults, then the preset, then the config file, then explicit overrides.
    """
    config = Config()
    for name, cls in SECTIONS.items():
        config.set_dataclass(name, cls())
    if preset is not None:
        if preset not in PRESETS:
            msg = f"unknown preset '{preset}' (choose from {', '.join(sorted(PRESETS))})"
            raise InvalidConfig(msg)
        for name, values in PRESETS[preset].items():
            config.update(name, values)
    if config_path is not None:
        loaded = Config(config_path)
        for name in loaded.to_json()["sections"]:
            if name not in SECTIONS:
                msg = f'unknown config section "{name}" in {config_path}'
                raise InvalidConfig(msg)
            config.update(name, loaded.section(name))
    for name, values in (overrides or {}).items():
        config.update(name, {k: v for k, v in values.items() if v is not None})
    return config


def config_from_json(rep: Mapping[str, Any]) -> Config:
    config = Config()
    sections = rep.get("sections", {})
    if not isinstance(sections, Mapping):
        msg = "saved config has no sections"
        raise InvalidConfig(msg)
    for name, values in sections.items():
        if name in SECTIONS:
            config.update(name, values)
    return config


def settings_from(config: Config) -> Settings:
    values = {name: config.get_dataclass(name, cls) for name, cls in SECTIONS.items()}
    settings = Settings(**values)
    scene, model = settings.scene, settings.model
    if (model.state_dim, model.opacity_logits_dim) != (scene.state_dim, scene.opacity_logits_dim):
        model = dataclasses.replace(model, state_dim=scene.state_dim, opacity_logits_dim=scene.opacity_logits_dim)
        settings = dataclasses.replace(settings, model=model)
    return settings


def make_tracer(verbose: bool, quiet: bool) -> Tracer:
    if verbose:
        return Tracer(Level.DEBUG)
    if quiet:
        return Tracer(Level.ERROR)
    return Tracer(Level.INFO)


class OutputDirectory:
    """
    The single directory a command may write to; every path handed out is
    checked to stay inside it.
    """

    def __init__(self, path: str) -> None:
        self.root = os.path.realpath(path)
        os.makedirs(self.root, exist_ok=True)

    def path(self, *parts: str) -> str:
        full = os.path.realpath(os.path.join(self.root, *parts))
        if os.path.commonpath([self.root, full]) != self.root:
            msg = f"refusing to write {full} outside the output directory {self.root}"
            raise InvalidConfig(msg)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def files(self) -> List[str]:
        """
        Every file under the directory except the manifest, relative and sorted.
        """
        found = []
        for dirpath, _, filenames in os.walk(self.root):
            for name in filenames:
                rel = os.path.relpath(os.path.join(dirpath, name), self.root)
                if rel != MANIFEST:
                    found.append(rel)
        return sorted(found)


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seed: int
    version: str = splat_autolabel.__version__
    started: float = field(default_factory=time.time)
    arguments: Dict[str, Any] = field(default_factory=dict)

    def finish(self, out: OutputDirectory, extra: Optional[Dict[str, Any]] = None) -> None:
        """
        Hash every recorded output and write manifest.json atomically.
        """
        hashes = {rel: sha256_file(os.path.join(out.root, rel)) for rel in out.files()}
        rep = {
            "command": self.command,
            "version": self.version,
            "seed": self.seed,
            "arguments": self.arguments,
            "config": self.config,
            "wall_clock_seconds": round(time.time() - self.started, 3),
            "outputs": hashes,
        }
        rep.update(extra or {})
        write_json(rep, out.path(MANIFEST))


def print_json(data: Any) -> None:
    stdout(json.dumps(data, indent=2, sort_keys=True) + "\n")
