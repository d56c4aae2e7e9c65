import argparse
import dataclasses
import json
import os
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import splat_autolabel
from splat_autolabel import nn
from splat_autolabel.adaptor import (
    Adaptor,
    AdaptorTrainer,
    PosePair,
    UmeyamaBaseline,
    load_pairs,
    translation_error,
)
from splat_autolabel.cli.common import (
    PRESETS,
    OutputDirectory,
    RunManifest,
    Settings,
    UsageError,
    config_from_json,
    make_tracer,
    print_json,
    resolve_config,
    settings_from,
)
from splat_autolabel.colmap import SceneBundle, load_scene_dir
from splat_autolabel.deformation import DeformableModel
from splat_autolabel.errors import DegenerateConfiguration, InvalidConfig, SplatError, TooSmall
from splat_autolabel.geometry import Intrinsics, Pose
from splat_autolabel.images import read_image, write_image
from splat_autolabel.labeling import (
    Box2D,
    Box3D,
    eval_ap_ad,
    generate_labeled_view,
    load_annotations,
    save_annotations,
    save_boxes2d,
)
from splat_autolabel.metrics import psnr, ssim
from splat_autolabel.renderer import CameraView, RenderConfig, render_op
from splat_autolabel.scene import init_from_points
from splat_autolabel.synth import SynthSpec, synth_scene, write_synth
from splat_autolabel.trainer import (
    Frame,
    Trainer,
    group_images,
    load_renderer,
    render_frame,
    save_renderer,
    view_rows,
)
from splat_autolabel.util import Level, Tracer, stderr, stdout, write_json

Command = Callable[[argparse.Namespace, Settings, Dict[str, Any], Tracer], None]


def main() -> None:
    """
    Main entry point for the splat-autolabel program.
    """
    sys.exit(dispatch(sys.argv[1:]))


def dispatch(argv: Sequence[str]) -> int:
    """
    Run one subcommand and return the process exit status.

    0 on success, 1 on any runtime failure, 2 on a usage error.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    tracer = make_tracer(args.verbose, args.quiet)
    try:
        config = resolve_config(args.preset, args.config, overrides(args))
        settings = settings_from(config)
        if args.print_config:
            print_json(config.to_json())
            return 0
        COMMANDS[args.command](args, settings, config.to_json(), tracer)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        stderr(f"error: {e}\n")
        return 2
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    except KeyboardInterrupt:
        tracer.trace("interrupted", Level.ERROR)
        return 1
    except (SplatError, OSError) as e:
        tracer.trace(str(e), Level.ERROR)
        return 1
    except Exception:
        if tracer.verbosity >= Level.DEBUG:
            raise
        tracer.trace("unexpected exception (run with -v for details)", Level.ERROR)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="JSON config file with named sections")
    common.add_argument("--preset", type=str, choices=sorted(PRESETS), help="dataset schedule preset")
    common.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("--threads", type=int, help="render worker threads (default: all cores)")
    common.add_argument("--seed", type=int, help="random seed")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="print debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="print errors only")

    parser = argparse.ArgumentParser(prog="splat-autolabel")
    parser.add_argument("--version", action="version", version=f"%(prog)s {splat_autolabel.__version__}")
    subparsers = parser.add_subparsers()
    subparsers.required = True
    subparsers.dest = "command"

    p = subparsers.add_parser("synth", parents=[common], help="generate a synthetic driving scene")
    p.add_argument("--spec", type=str, help="JSON file with synthetic scene parameters")
    p.add_argument("--out", type=str, help="output scene directory")

    p = subparsers.add_parser("train", parents=[common], help="train a deformable renderer on a scene")
    p.add_argument("--scene", type=str, help="scene directory")
    p.add_argument("--out", type=str, help="output directory")
    p.add_argument("--iterations", type=int, help="training iterations")
    p.add_argument("--test-every", type=int, help="hold out every k-th frame (0: none)")
    p.add_argument("--images-per-group", type=int, help="images per group")
    p.add_argument("--no-groups", action="store_true", help="train every primitive on every image")
    p.add_argument("--no-deform", action="store_true", help="disable the deformation field")
    p.add_argument("--no-dem", action="store_true", help="disable the deformation enhancement module")
    p.add_argument("--no-oem", action="store_true", help="replace the opacity decoder with a plain sigmoid")

    p = subparsers.add_parser("render", parents=[common], help="render dataset views from a trained renderer")
    p.add_argument("--scene", type=str, help="scene directory")
    p.add_argument("--renderer", type=str, help="renderer directory written by train")
    p.add_argument("--out", type=str, help="output directory")
    p.add_argument("--views", choices=["all", "test"], default="all", help="which views to render")
    p.add_argument("--png", action="store_true", help="write PNG instead of PPM")

    p = subparsers.add_parser("metrics", parents=[common], help="PSNR and SSIM between images or directories")
    p.add_argument("--a", type=str, help="image file or directory")
    p.add_argument("--b", type=str, help="image file or directory")
    p.add_argument("--out", type=str, help="also write metrics.json into this directory")

    p = subparsers.add_parser("train-adaptor", parents=[common], help="train the pose adaptor")
    p.add_argument("--pairs", type=str, help="pairs.json (default: the scene's)")
    p.add_argument("--scene", type=str, help="scene directory supplying intrinsics and pairs")
    p.add_argument("--intrinsics", type=str, help="fx,fy,cx,cy,width,height when no scene is given")
    p.add_argument("--out", type=str, help="output directory")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--batch", type=int, help="anchors per batch")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--n", type=int, help="following frames per anchor")
    p.add_argument("--w", type=str, help="loss weights w1,w2,w3")
    p.add_argument("--holdout-every", type=int, default=0, help="evaluate on every k-th pair only (0: none)")

    p = subparsers.add_parser("transform-pose", parents=[common], help="map one original-frame pose")
    p.add_argument("--adaptor", type=str, help="adaptor checkpoint (path prefix or .json)")
    p.add_argument("--baseline", choices=["umeyama"], help="use a fitted similarity instead")
    p.add_argument("--pairs", type=str, help="pairs.json for the baseline")
    p.add_argument("--pose", type=float, nargs=12, metavar="V", help="row-major 3x4 camera-to-world matrix")

    p = subparsers.add_parser("label", parents=[common], help="generate labeled novel views")
    p.add_argument("--scene", type=str, help="scene directory with pairs.json and anns.json")
    p.add_argument("--adaptor", type=str, help="adaptor checkpoint")
    p.add_argument("--renderer", type=str, help="renderer directory written by train")
    p.add_argument("--count", type=int, default=10, help="number of novel views")
    p.add_argument("--gate", type=float, help="center distance gate in meters for matching")
    p.add_argument("--no-images", action="store_true", help="skip rendering, labels only")
    p.add_argument("--out", type=str, help="output directory")

    p = subparsers.add_parser("eval-labels", parents=[common], help="AP and AD of 3D boxes against ground truth")
    p.add_argument("--gt", type=str, help="ground-truth boxes JSON")
    p.add_argument("--pred", type=str, help="predicted boxes JSON")
    p.add_argument("--gate", type=float, help="center distance gate in meters")

    p = subparsers.add_parser("bench", parents=[common], help="time rendering on a scene")
    p.add_argument("--scene", type=str, help="scene directory")
    p.add_argument("--renderer", type=str, help="renderer directory (default: untrained model)")
    p.add_argument("--frames", type=int, default=5, help="number of views to time")

    return parser


def _weights(text: Optional[str]) -> Dict[str, Optional[float]]:
    if text is None:
        return {}
    try:
        values = [float(x) for x in text.split(",")]
    except ValueError as e:
        msg = f"--w expects three comma-separated numbers, got '{text}'"
        raise UsageError(msg) from e
    if len(values) != 3:  # noqa: PLR2004
        msg = f"--w expects three comma-separated numbers, got '{text}'"
        raise UsageError(msg)
    return dict(zip(("w1", "w2", "w3"), values))


def overrides(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """
    Config values set by command-line flags; None means not given.
    """

    def flag(name: str) -> Any:
        return getattr(args, name, None)

    def disabled(name: str) -> Optional[bool]:
        return False if flag(name) else None

    return {
        "scene": {"images_per_group": flag("images_per_group")},
        "render": {"threads": flag("threads")},
        "model": {"use_deform": disabled("no_deform"), "use_dem": disabled("no_dem"), "use_oem": disabled("no_oem")},
        "train": {
            "iterations": flag("iterations"),
            "test_every": flag("test_every"),
            "use_groups": disabled("no_groups"),
            "seed": flag("seed"),
        },
        "adaptor": {
            "epochs": flag("epochs"),
            "batch": flag("batch"),
            "lr": flag("lr"),
            "following": flag("n"),
            "seed": flag("seed"),
            **_weights(flag("w")),
        },
        "label": {"ap_gate": flag("gate")},
    }


def require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{name.replace('_', '-')}" for name in names if getattr(args, name, None) is None]
    if missing:
        msg = f"{args.command} requires {', '.join(missing)}"
        raise UsageError(msg)


def _arguments(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if v is not None and k != "print_config"}


def _seed(args: argparse.Namespace, default: int) -> int:
    return default if args.seed is None else args.seed


def synth(args: argparse.Namespace, settings: Settings, config: Dict[str, Any], tracer: Tracer) -> None:
    require(args, "out")
    spec = SynthSpec()
    if args.spec is not None:
        with open(args.spec) as f:
            try:
                spec = SynthSpec.from_json(json.load(f))
            except json.JSONDecodeError as e:
                msg = f'cannot parse spec file "{args.spec}": {e}'
                raise InvalidConfig(msg) from e
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    manifest = RunManifest("synth", config, spec.seed, arguments=_arguments(args))
    out = OutputDirectory(args.out)
    tracer.trace(f"generating {spec.frames} frames at {spec.width}x{spec.height}", Level.INFO)
    scene = synth_scene(spec, settings.render)
    write_synth(out.root, scene)
    manifest.finish(out, {"spec": spec.to_json()})
    tracer.trace(f"wrote scene to {out.root}", Level.INFO)


def _build_model(bundle: SceneBundle, settings: Settings, rng: np.random.Generator) -> DeformableModel:
    scene = init_from_points(bundle.points, bundle.colors, rng, settings.scene)
    scene.set_extent_from_cameras(np.array([v.center for v in bundle.views]))
    return DeformableModel(scene, settings.model, rng)


def train(args: argparse.Namespace, settings: Settings, config: Dict[str, Any], tracer: Tracer) -> None:
    require(args, "scene", "out")
    train_cfg = settings.train
    bundle = load_scene_dir(args.scene)
    assert bundle.images is not None  # noqa: S101
    frames = [Frame(view, image) for view, image in zip(bundle.views, bundle.images)]
    rng = np.random.default_rng(train_cfg.seed)
    model = _build_model(bundle, settings, rng)
    per_group = settings.scene.images_per_group if train_cfg.use_groups else len(frames)
    groups = group_images(frames, per_group, test_every=train_cfg.test_every)
    tracer.trace(f"{len(model.scene)} primitives, {len(groups)} groups, {len(frames)} frames", Level.INFO)

    manifest = RunManifest("train", config, train_cfg.seed, arguments=_arguments(args))
    out = OutputDirectory(args.out)
    trainer = Trainer(model, groups, settings.scene, train_cfg, settings.render, tracer)
    trainer.assign_groups()

    log_lines: List[str] = []

    def on_log(record: Dict[str, Any]) -> None:
        log_lines.append(json.dumps(record, sort_keys=True))

    def on_checkpoint(iteration: int) -> None:
        save_renderer(out.path("checkpoints", f"{iteration:06d}"), model, config)
        held_out = trainer.evaluate(held_out=True)
        tracer.trace(f"iteration {iteration}: held-out PSNR {held_out['psnr']}", Level.INFO)

    trainer.train(train_cfg.iterations, on_log, on_checkpoint)
    with open(out.path("train_log.jsonl"), "w") as f:
        f.writelines(line + "\n" for line in log_lines)
    save_renderer(out.path("renderer"), model, config)
    evaluation = {
        "held_out": trainer.evaluate(held_out=True),
        "train": trainer.evaluate(held_out=False),
        "primitives": len(model.scene),
        "iterations": trainer.state.iteration,
    }
    write_json(evaluation, out.path("eval.json"))
    manifest.finish(out)
    print_json({"held_out": evaluation["held_out"]["psnr"], "train": evaluation["train"]["psnr"]})


def _load_trained(directory: str) -> Tuple[DeformableModel, Optional[Settings]]:
    model, saved = load_renderer(directory)
    saved_settings = settings_from(config_from_json(saved)) if saved else None
    return model, saved_settings


def render(args: argparse.Namespace, settings: Settings, config: Dict[str, Any], tracer: Tracer) -> None:
    require(args, "scene", "renderer", "out")
    model, saved = _load_trained(args.renderer)
    trained = saved or settings
    bundle = load_scene_dir(args.scene, with_images=False)
    test_every = trained.train.test_every
    indices = list(range(len(bundle.views)))
    if args.views == "test":
        if test_every <= 0:
            msg = "the renderer was trained without held-out views"
            raise InvalidConfig(msg)
        indices = [i for i in indices if i % test_every == 0]
    manifest = RunManifest("render", config, settings.train.seed, arguments=_arguments(args))
    out = OutputDirectory(args.out)
    extension = ".png" if args.png else ".ppm"
    for done, i in enumerate(indices, start=1):
        view = bundle.views[i]
        rows = view_rows(model.scene, i, trained.scene.images_per_group, use_groups=trained.train.use_groups)
        image = render_frame(model, view, rows, settings.render)
        write_image(out.path("images", os.path.splitext(view.name)[0] + extension), image.pixels)
        tracer.progress("Rendering", done, len(indices))
    manifest.finish(out, {"views": [bundle.views[i].name for i in indices]})


def _pair_scores(a: np.ndarray, b: np.ndarray) -> Dict[str, Optional[float]]:
    try:
        similarity: Optional[float] = ssim(a, b)
    except TooSmall:
        similarity = None
    return {"psnr": psnr(a, b), "ssim": similarity}


def metrics(args: argparse.Namespace, settings: Settings, config: Dict[str, Any], tracer: Tracer) -> None:
    require(args, "a", "b")
    if os.path.isdir(args.a) != os.path.isdir(args.b):
        msg = "--a and --b must both be files or both be directories"
        raise UsageError(msg)
    if not os.path.isdir(args.a):
        result: Dict[str, Any] = _pair_scores(read_image(args.a), read_image(args.b))
    else:
        names = sorted(set(os.listdir(args.a)) & set(os.listdir(args.b)))
        if not names:
            msg = f"{args.a} and {args.b} have no image names in common"
            raise InvalidConfig(msg)
        views = []
        for name in names:
            scores = _pair_scores(read_image(os.path.join(args.a, name)), read_image(os.path.join(args.b, name)))
            views.append({"name": name, **scores})
        ssims = [v["ssim"] for v in views if v["ssim"] is not None]
        result = {
            "views": views,
            "psnr": float(np.mean([v["psnr"] for v in views])),
            "ssim": float(np.mean(ssims)) if ssims else None,
        }
    if args.out is not None:
        write_json(result, OutputDirectory(args.out).path("metrics.json"))
    print_json(result)


def _intrinsics(args: argparse.Namespace) -> Intrinsics:
    if args.intrinsics is not None:
        try:
            fx, fy, cx, cy, width, height = (float(x) for x in args.intrinsics.split(","))
        except ValueError as e:
            msg = f"--intrinsics expects fx,fy,cx,cy,width,height, got '{args.intrinsics}'"
            raise UsageError(msg) from e
        return Intrinsics(fx, fy, cx, cy, int(width), int(height))
    if args.scene is None:
        msg = "train-adaptor requires --scene or --intrinsics"
        raise UsageError(msg)
    return load_scene_dir(args.scene, with_images=False).views[0].intrinsics


def _pairs(args: argparse.Namespace) -> List[PosePair]:
    if args.pairs is not None:
        return load_pairs(args.pairs)
    if args.scene is None:
        msg = f"{args.command} requires --pairs or --scene"
        raise UsageError(msg)
    return load_pairs(os.path.join(args.scene, "pairs.json"))


def train_adaptor(args: argparse.Namespace, settings: Settings, config: Dict[str, Any], tracer: Tracer) -> None:
    require(args, "out")
    cfg = settings.adaptor
    pairs = _pairs(args)
    k = _intrinsics(args)
    every = args.holdout_every
    if every < 0:
        msg = "--holdout-every must not be negative"
        raise UsageError(msg)
    train_pairs = [p for i, p in enumerate(pairs) if every == 0 or i % every != 0]
    held_out = [p for i, p in enumerate(pairs) if every > 0 and i % every == 0]

    manifest = RunManifest("train-adaptor", config, cfg.seed, arguments=_arguments(args))
    out = OutputDirectory(args.out)
    trainer = AdaptorTrainer(train_pairs, k, cfg, tracer)
    log_lines: List[str] = []
    adaptor = trainer.train(on_log=lambda record: log_lines.append(json.dumps(record, sort_keys=True)))
    with open(out.path("adaptor_log.jsonl"), "w") as f:
        f.writelines(line + "\n" for line in log_lines)
    adaptor.save(out.path("adaptor"), {"config": dataclasses.asdict(cfg), "intrinsics": k.to_json()})

    try:
        baseline: Optional[UmeyamaBaseline] = UmeyamaBaseline.fit(train_pairs)
    except DegenerateConfiguration as e:
        tracer.trace(f"no similarity baseline: {e}", Level.INFO)
        baseline = None

    def errors(subset: List[PosePair]) -> Dict[str, Optional[float]]:
        return {
            "adaptor": translation_error(adaptor.predict, subset),
            "umeyama": None if baseline is None else translation_error(baseline.predict, subset),
        }

    evaluation: Dict[str, Any] = {
        "train": errors(train_pairs),
        "pairs": {"train": len(train_pairs), "held_out": len(held_out)},
    }
    if held_out:
        evaluation["held_out"] = errors(held_out)
    write_json(evaluation, out.path("eval.json"))
    manifest.finish(out)
    print_json(evaluation)


def _adaptor_path(path: str) -> str:
    return path[: -len(".json")] if path.endswith(".json") else path


def transform_pose(args: argparse.Namespace, settings: Settings, config: Dict[str, Any], tracer: Tracer) -> None:
    require(args, "pose")
    pose = Pose.from_list(args.pose)
    if args.baseline == "umeyama":
        result = UmeyamaBaseline.fit(_pairs(args))(pose)
    elif args.adaptor is not None:
        adaptor, _ = Adaptor.load(_adaptor_path(args.adaptor))
        result = adaptor(pose)
    else:
        msg = "transform-pose requires --adaptor or --baseline"
        raise UsageError(msg)
    stdout(result.format() + "\n")


def _frame_renderer(
    model: DeformableModel, trained: Settings, frame: int, cfg: RenderConfig
) -> Callable[[CameraView], np.ndarray]:
    rows = view_rows(model.scene, frame, trained.scene.images_per_group, use_groups=trained.train.use_groups)
    return lambda novel: render_frame(model, novel, rows, cfg).pixels


def label(args: argparse.Namespace, settings: Settings, config: Dict[str, Any], tracer: Tracer) -> None:
    require(args, "scene", "adaptor", "out")
    if args.renderer is None and not args.no_images:
        msg = "label requires --renderer unless --no-images is given"
        raise UsageError(msg)
    bundle = load_scene_dir(args.scene, with_images=False)
    if not bundle.pairs:
        msg = f"{args.scene} has no pairs.json"
        raise InvalidConfig(msg)
    annotations: List[Box3D] = bundle.annotations or []
    adaptor, _ = Adaptor.load(_adaptor_path(args.adaptor))
    loaded: Optional[Tuple[DeformableModel, Settings]] = None
    if not args.no_images:
        model, trained = _load_trained(args.renderer)
        loaded = (model, trained or settings)
    seed = _seed(args, settings.adaptor.seed)
    rng = np.random.default_rng(seed)

    manifest = RunManifest("label", config, seed, arguments=_arguments(args))
    out = OutputDirectory(args.out)
    views = []
    boxes3d: List[Box3D] = []
    boxes2d: List[Box2D] = []
    for j in range(args.count):
        pair = bundle.pairs[int(rng.integers(len(bundle.pairs)))]
        if not 0 <= pair.frame < len(bundle.views):
            msg = f"pair frame {pair.frame} is outside the scene's {len(bundle.views)} views"
            raise InvalidConfig(msg)
        dataset_view = bundle.views[pair.frame]
        view = CameraView(pair.pose_owcs, dataset_view.intrinsics, dataset_view.time, dataset_view.name)
        render_fn = None if loaded is None else _frame_renderer(*loaded, pair.frame, settings.render)
        anns = [box for box in annotations if box.frame == pair.frame]
        labeled = generate_labeled_view(pair.frame, view, anns, settings.adaptor, adaptor, render_fn, rng, settings.label)
        entry = {"index": j, **labeled.manifest()}
        if labeled.image is not None:
            name = f"novel_{j:04d}.ppm"
            write_image(out.path("images", name), labeled.image)
            entry["image"] = f"images/{name}"
        views.append(entry)
        # labels are keyed by novel view index
        boxes3d.extend(dataclasses.replace(box, frame=j) for box in labeled.boxes3d)
        boxes2d.extend(dataclasses.replace(box, frame=j) for box in labeled.boxes2d)
        tracer.progress("Labeling", j + 1, args.count)
    write_json({"views": views}, out.path("views.json"))
    save_annotations(boxes3d, out.path("labels3d.json"))
    save_boxes2d(boxes2d, out.path("labels2d.json"))
    manifest.finish(out)


def eval_labels(args: argparse.Namespace, settings: Settings, config: Dict[str, Any], tracer: Tracer) -> None:
    require(args, "gt", "pred")
    gate = settings.label.ap_gate
    ap, ad = eval_ap_ad(load_annotations(args.gt), load_annotations(args.pred), gate, settings.label.recall_points)
    print_json({"ap": ap, "ad": ad, "gate": gate})


def bench(args: argparse.Namespace, settings: Settings, config: Dict[str, Any], tracer: Tracer) -> None:
    require(args, "scene")
    bundle = load_scene_dir(args.scene, with_images=False)
    if args.renderer is not None:
        model, _ = load_renderer(args.renderer)
    else:
        model = _build_model(bundle, settings, np.random.default_rng(_seed(args, settings.train.seed)))
    views = bundle.views[: max(args.frames, 1)]
    rows = np.arange(len(model.scene))
    forward = []
    backward = []
    for i, view in enumerate(views, start=1):
        start = time.perf_counter()
        render_frame(model, view, rows, settings.render)
        forward.append(time.perf_counter() - start)

        start = time.perf_counter()
        g2 = model.deformed(view.time, view.center, rows)
        result = render_op(g2.position, g2.rotation, g2.log_scale, g2.opacity, g2.color, view, settings.render)
        nn.Tape(nn.sum(result.image)).backward()
        backward.append(time.perf_counter() - start)
        tracer.progress("Timing", i, len(views))
    for param in model.scene.parameters() + model.network_parameters():
        param.zero_grad()
    print_json(
        {
            "frames": len(views),
            "primitives": len(model.scene),
            "resolution": [views[0].width, views[0].height],
            "threads": settings.render.threads,
            "forward_ms": 1000.0 * float(np.mean(forward)),
            "forward_backward_ms": 1000.0 * float(np.mean(backward)),
        }
    )


COMMANDS: Dict[str, Command] = {
    "synth": synth,
    "train": train,
    "render": render,
    "metrics": metrics,
    "train-adaptor": train_adaptor,
    "transform-pose": transform_pose,
    "label": label,
    "eval-labels": eval_labels,
    "bench": bench,
}
