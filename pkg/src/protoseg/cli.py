"""Command-line entry point: ``protoseg <command> [options]``.

Every command writes its outputs atomically (temp file, then rename) and
drops a ``<output>.manifest.json`` run record beside the primary output.
Passing that manifest back through ``--config`` replays the run.

Exit codes: 0 success, 1 bad input or usage, 2 internal invariant failure.
Logging verbosity comes from the ``SAIS_LOG`` environment variable
(``error``, ``info`` or ``debug``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .assignment import build_targets, fcos_levels, summarize
from .errors import (
    ConfigurationError,
    InputError,
    InvariantError,
    SchemaError,
    TrainingDivergedError,
)
from .evaluation import EvalConfig, evaluate, parse_predictions, predictions_to_json
from .geometry import Scene, mask_iou
from .ingest import _load_json, import_coco_subset, parse_scene_file, write_scene_file
from .prototypes import PrototypeStack, fit_coefficients, fit_residual, gt_basis, reconstruct, smooth_basis
from .synth import SynthConfig, gen_occlusion_case, gen_scenes, render_image, to_pgm
from .toy import ModelConfig, PredictParams, TrainHyper, init_model, model_from_json, model_to_json, predict, train
from .toy.training import curve_to_csv

logger = logging.getLogger("protoseg")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises on bad usage instead of exiting with argparse's status 2."""

    def error(self, message):
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


# --------------------------------------------------------------------------
# file helpers


def read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _stage(path: str, data) -> str:
    """Write ``data`` to a temp file beside ``path`` and return the temp path."""
    target = Path(path)
    if not target.parent.is_dir():
        raise InputError(f"output directory {target.parent} does not exist")
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        # mkstemp creates 0600 files; give the result the usual umask-derived mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
    except BaseException:
        os.unlink(tmp)
        raise
    return tmp


def write_outputs(outputs: dict[str, object]) -> None:
    """Stage every ``path -> payload`` pair, then rename them all into place.

    Nothing is renamed unless every payload was staged successfully.
    """
    staged = []
    try:
        for path, data in outputs.items():
            staged.append((_stage(path, data), path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def load_scenes(path: str, num_classes: Optional[int] = None) -> list[Scene]:
    return parse_scene_file(read_bytes(path), num_classes)


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        values = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _str_list(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _by_id(scenes: Sequence[Scene]) -> list[Scene]:
    return sorted(scenes, key=lambda s: s.id)


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands; each returns (outputs, stdout text, manifest extras)


def cmd_gen_scenes(args):
    cfg = SynthConfig(
        width=args.width,
        height=args.height,
        instance_count=(args.min_instances, args.max_instances),
        shape_kinds=tuple(args.shapes),
        size_range=(args.size_min, args.size_max),
        num_classes=args.num_classes,
        seed=args.seed,
    )
    scenes = gen_scenes(cfg, args.count, args.start)
    total = sum(len(s) for s in scenes)
    return {args.output: write_scene_file(scenes)}, f"scenes\t{len(scenes)}\ninstances\t{total}\n", {}


def cmd_gen_occlusion(args):
    scenes = [
        gen_occlusion_case(args.seed + i, args.width, args.height, scene_id=f"occ-{args.seed + i}")
        for i in range(args.count)
    ]
    return {args.output: write_scene_file(scenes)}, f"scenes\t{len(scenes)}\n", {}


def cmd_ingest_coco(args):
    res = import_coco_subset(read_bytes(args.input), args.classes or None)
    for w in res.warnings:
        logger.info("%s", w)
    counts = {
        "scenes": len(res.scenes),
        "instances": sum(len(s) for s in res.scenes),
        "skipped_rle": res.skipped_rle,
        "skipped_crowd": res.skipped_crowd,
        "skipped_bbox": res.skipped_bbox,
        "skipped_class": res.skipped_class,
    }
    text = "".join(f"{k}\t{v}\n" for k, v in counts.items())
    return {args.output: write_scene_file(res.scenes)}, text, {"categories": res.categories, "counts": counts}


def _levels(n: int):
    return fcos_levels(n)


def _assign_one(job):
    scene, mode, n_levels = job
    levels = _levels(n_levels)
    tmap = build_targets(scene, levels, mode)
    return {"scene_id": scene.id, "targets": tmap.to_dict(), "summary": summarize(scene, levels)}


def cmd_assign(args):
    scenes = _by_id(load_scenes(args.scenes))
    if args.scene_id:
        scenes = [s for s in scenes if s.id == args.scene_id]
        if not scenes:
            raise InputError(f"no scene with id {args.scene_id!r}")
    results = _map(_assign_one, [(s, args.mode, args.levels) for s in scenes], args.jobs)
    rows = []
    for r in results:
        s = r["summary"]
        rows.append([r["scene_id"], s["instances"], ";".join(map(str, s["positives_area"])),
                     ";".join(map(str, s["positives_center"])), s["center_steal"]])
    table = _csv(rows, ["scene_id", "instances", "positives_area", "positives_center", "center_steal"])
    doc = {"mode": args.mode, "scenes": results}
    outputs = {args.output: json.dumps(doc, separators=(",", ":"))}
    if args.stats:
        outputs[args.stats] = table
    if args.plot and scenes:
        from .plotting import assignment_png

        levels = _levels(args.levels)
        first = scenes[0]
        outputs[args.plot] = assignment_png(
            first, build_targets(first, levels, "area"), build_targets(first, levels, "center"), args.plot_level
        )
    steal = sum(r["summary"]["center_steal"] for r in results)
    return outputs, table, {"center_steal_total": steal}


def _load_prototypes(path: str) -> PrototypeStack:
    doc = _load_json(read_bytes(path))
    if not isinstance(doc, dict) or "shape" not in doc or "values" not in doc:
        raise SchemaError("prototype file needs 'shape' [h, w, k] and row-major 'values'")
    shape = tuple(int(v) for v in doc["shape"])
    values = np.array([float(v) for v in doc["values"]], dtype=np.float64)
    if len(shape) != 3 or values.size != int(np.prod(shape)):
        raise SchemaError(f"prototype file: {values.size} values do not fill shape {list(shape)}")
    return PrototypeStack(values.reshape(shape))


def _fit_scene(job):
    scene, basis, ks, seed, max_freq, protos, ridge = job
    fits = []
    masks = [inst.mask for inst in scene.instances]
    if not masks:
        return {"scene_id": scene.id, "fits": fits}
    if basis == "gt":
        stacks = [(len(masks), gt_basis(masks))]
    else:
        full = protos if protos is not None else smooth_basis(scene.height, scene.width, max(ks), seed, max_freq)
        if (full.h, full.w) != (scene.height, scene.width):
            raise InputError(f"prototypes are {full.w}x{full.h}, scene {scene.id!r} is {scene.width}x{scene.height}")
        if max(ks) > full.k:
            raise InputError(f"k={max(ks)} exceeds the {full.k} available prototypes")
        stacks = [(k, full.first(k)) for k in ks]
    for k, P in stacks:
        for i, m in enumerate(masks):
            C = fit_coefficients(P, m, ridge)
            fits.append({
                "instance": i,
                "k": k,
                "residual": fit_residual(P, m, C),
                "iou": mask_iou(reconstruct(P, C), m),
            })
    return {"scene_id": scene.id, "fits": fits}


def cmd_fit_masks(args):
    scenes = _by_id(load_scenes(args.scenes))
    protos = _load_prototypes(args.prototypes) if args.prototypes else None
    if args.basis == "gt" and protos is not None:
        raise ConfigurationError("--prototypes applies to the random basis only")
    ks = sorted(set(args.k))
    if min(ks) < 1:
        raise ConfigurationError("k values must be >= 1")
    jobs = [(s, args.basis, ks, args.seed, args.max_freq, protos, args.ridge) for s in scenes]
    results = _map(_fit_scene, jobs, args.jobs)
    by_k: dict[int, list[float]] = {}
    for r in results:
        for f in r["fits"]:
            by_k.setdefault(f["k"], []).append(f["iou"])
    rows = [{"k": k, "mean_iou": float(np.mean(v)), "min_iou": float(np.min(v)), "count": len(v)}
            for k, v in sorted(by_k.items())]
    table = _csv([[r["k"], repr(r["mean_iou"]), repr(r["min_iou"]), r["count"]] for r in rows],
                 ["k", "mean_iou", "min_iou", "count"])
    doc = {"basis": args.basis, "seed": args.seed, "scenes": results, "summary": rows}
    outputs = {args.output: json.dumps(doc, separators=(",", ":"))}
    if args.table:
        outputs[args.table] = table
    if args.plot:
        from .plotting import iou_vs_k_png

        outputs[args.plot] = iou_vs_k_png(rows, f"{args.basis} basis")
    return outputs, table, {}


def cmd_train_toy(args):
    if args.scenes:
        scenes = load_scenes(args.scenes, args.classes)
    else:
        scenes = gen_scenes(SynthConfig(num_classes=args.classes, seed=args.seed), args.synth)
    config = ModelConfig(
        c=args.classes,
        k=args.k,
        trunk_channels=tuple(args.trunk),
        head_channels=args.head_channels,
        head_stride=args.head_stride,
        proto_stride=args.proto_stride,
        fuse_branches=not args.no_fusion,
        seed=args.seed,
    )
    hyper = TrainHyper(
        lr=args.lr,
        epochs=args.epochs,
        momentum=args.momentum,
        seed=args.seed,
        mode=args.mode,
        clip_norm=args.clip_norm,
        lr_decay_epochs=tuple(args.lr_decay_epochs or ()),
        lr_decay=args.lr_decay,
    )
    model, curve = train(init_model(config), scenes, hyper,
                         progress=lambda rec: logger.info("epoch %d loss %.6f", rec.epoch, rec.mean_total))
    table = curve_to_csv(curve)
    outputs = {args.output: model_to_json(model)}
    if args.curve:
        outputs[args.curve] = table
    if args.plot:
        from .plotting import loss_curve_png

        outputs[args.plot] = loss_curve_png(curve)
    first, last = curve[0].mean_total if curve else None, curve[-1].mean_total if curve else None
    return outputs, table, {"first_epoch_loss": first, "last_epoch_loss": last, "parameters": model.num_parameters()}


def _infer_one(job):
    model, scene, params = job
    return scene.id, predict(model, render_image(scene), params)


def cmd_infer(args):
    model = model_from_json(read_bytes(args.model))
    scenes = _by_id(load_scenes(args.scenes))
    params = PredictParams(args.score_thr, args.nms_iou, args.top, args.mask_thr)
    results = _map(_infer_one, [(model, s, params) for s in scenes], args.jobs)
    preds = dict(results)
    text = "".join(f"{sid}\t{len(d)}\n" for sid, d in results)
    return {args.output: predictions_to_json(preds, args.mask_thr)}, text, {}


def _eval_one(job):
    preds, scenes, config = job
    return evaluate(preds, scenes, config)


def cmd_eval(args):
    scenes = _by_id(load_scenes(args.scenes))
    preds = parse_predictions(read_bytes(args.predictions), scenes)
    kinds = ["box", "mask"] if args.kind == "both" else [args.kind]
    configs = [EvalConfig(kind=k, max_dets=args.max_dets, mask_threshold=args.mask_thr) for k in kinds]
    reports = dict(zip(kinds, _map(_eval_one, [(preds, scenes, c) for c in configs], args.jobs)))
    fields = ["mAP", "AP50", "AP75", "APS", "APM", "APL"]
    rows = [[k] + ["" if getattr(r, f) is None else repr(getattr(r, f)) for f in fields] for k, r in reports.items()]
    table = _csv(rows, ["kind"] + fields)
    doc = {k: r.to_dict() for k, r in reports.items()}
    outputs = {args.output: json.dumps(doc, separators=(",", ":"))}
    if args.plot:
        from .plotting import pr_curves_png

        outputs[args.plot] = pr_curves_png(reports)
    return outputs, table, {}


def cmd_render(args):
    scenes = load_scenes(args.scenes)
    if args.scene_id is not None:
        match = [s for s in scenes if s.id == args.scene_id]
        if not match:
            raise InputError(f"no scene with id {args.scene_id!r}")
        scene = match[0]
    else:
        if not 0 <= args.index < len(scenes):
            raise InputError(f"scene index {args.index} out of range for {len(scenes)} scenes")
        scene = scenes[args.index]
    if args.what == "image":
        img = render_image(scene)
    elif args.what == "masks":
        img = np.zeros((scene.height, scene.width))
        n = len(scene.instances)
        for i, inst in enumerate(scene.instances):
            img[inst.mask.bits] = (i + 1) / n
    else:
        levels = _levels(args.levels)
        lv = build_targets(scene, levels, args.mode).levels[args.level]
        s = lv.level.stride
        grid = np.kron(lv.owner + 1, np.ones((s, s)))[: scene.height, : scene.width]
        img = grid / max(1, len(scene.instances))
    return {args.output: to_pgm(img)}, f"{scene.id}\t{args.what}\n", {}


# --------------------------------------------------------------------------
# parser


def _common(p, output_required=True):
    p.add_argument("-o", "--output", required=output_required, help="primary output file")
    p.add_argument("--config", help="JSON of option values (or a run manifest); explicit flags win")
    p.add_argument("--json-errors", action="store_true", help="report errors as JSON on stderr")


def _jobs(p):
    p.add_argument("--jobs", type=int, default=1, help="worker processes; output order does not depend on it")


def build_parser() -> _Parser:
    parser = _Parser(prog="protoseg", description="Anchor-free instance segmentation toolkit.")
    parser.add_argument("--version", action="version", version=f"protoseg {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")

    p = sub.add_parser("gen-scenes", help="generate synthetic scenes")
    _common(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--start", type=int, default=0, help="index of the first scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--min-instances", type=int, default=1)
    p.add_argument("--max-instances", type=int, default=4)
    p.add_argument("--num-classes", type=int, default=1)
    p.add_argument("--shapes", type=_str_list, default=["rectangle", "ellipse"])
    p.add_argument("--size-min", type=float, default=0.15)
    p.add_argument("--size-max", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("gen-occlusion", help="generate contested-center fixtures")
    _common(p)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.set_defaults(func=cmd_gen_occlusion)

    p = sub.add_parser("ingest-coco", help="convert a COCO polygon subset to a scene file")
    _common(p)
    p.add_argument("input")
    p.add_argument("--classes", type=_str_list, default=None, help="comma-separated category names to keep")
    p.set_defaults(func=cmd_ingest_coco)

    p = sub.add_parser("assign", help="build assignment targets and compare rules")
    _common(p)
    _jobs(p)
    p.add_argument("scenes")
    p.add_argument("--mode", choices=["area", "center"], default="center")
    p.add_argument("--levels", type=int, default=5, help="number of pyramid levels (1-5)")
    p.add_argument("--scene-id")
    p.add_argument("--stats", help="CSV of per-scene summary statistics")
    p.add_argument("--plot", help="PNG of both rules' owner maps for the first scene")
    p.add_argument("--plot-level", type=int, default=0)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("fit-masks", help="fit coefficients against a prototype basis")
    _common(p)
    _jobs(p)
    p.add_argument("scenes")
    p.add_argument("--basis", choices=["gt", "random"], default="random")
    p.add_argument("--k", type=_int_list, default=[1, 2, 4, 8, 16, 32], help="comma-separated k sweep")
    p.add_argument("--prototypes", help="JSON tensor {shape: [h, w, k], values} used instead of the random basis")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-freq", type=int, default=6)
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--table", help="CSV of IoU against k")
    p.add_argument("--plot", help="PNG of IoU against k")
    p.set_defaults(func=cmd_fit_masks)

    p = sub.add_parser("train-toy", help="train the toy head with SGD")
    _common(p)
    p.add_argument("--scenes", help="scene file; synthetic scenes are generated when omitted")
    p.add_argument("--synth", type=int, default=300, help="number of synthetic scenes when --scenes is omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--mode", choices=["area", "center"], default="center")
    p.add_argument("--classes", type=int, default=1)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--trunk", type=_int_list, default=[8, 16, 32])
    p.add_argument("--head-channels", type=int, default=32)
    p.add_argument("--head-stride", type=int, default=8)
    p.add_argument("--proto-stride", type=int, default=4)
    p.add_argument("--no-fusion", action="store_true", help="coefficients from the classification branch only")
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--lr-decay-epochs", type=_int_list, default=None)
    p.add_argument("--lr-decay", type=float, default=0.1)
    p.add_argument("--curve", help="CSV of per-epoch mean losses")
    p.add_argument("--plot", help="PNG of the loss curve")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("infer", help="predict detections with a trained model")
    _common(p)
    _jobs(p)
    p.add_argument("model")
    p.add_argument("scenes")
    p.add_argument("--score-thr", type=float, default=0.05)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--top", type=int, default=100)
    p.add_argument("--mask-thr", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="COCO-style AP of predictions against scenes")
    _common(p)
    _jobs(p)
    p.add_argument("predictions")
    p.add_argument("scenes")
    p.add_argument("--kind", choices=["box", "mask", "both"], default="both")
    p.add_argument("--max-dets", type=int, default=100)
    p.add_argument("--mask-thr", type=float, default=0.5)
    p.add_argument("--plot", help="PNG of precision/recall curves at IoU 0.5")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="write an image, mask or assignment map as PGM")
    _common(p)
    p.add_argument("scenes")
    p.add_argument("--what", choices=["image", "masks", "assign"], default="image")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--scene-id")
    p.add_argument("--mode", choices=["area", "center"], default="center")
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--level", type=int, default=0)
    p.set_defaults(func=cmd_render)
    return parser


# --------------------------------------------------------------------------
# config files and manifests

_NOT_CONFIGURABLE = {"func", "command", "config", "json_errors", "help", "version"}


def _subparser(parser: _Parser, command: str) -> _Parser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise InvariantError("parser has no subcommands")


def _config_defaults(sub: _Parser, path: str, command: str) -> dict:
    doc = _load_json(read_bytes(path))
    if isinstance(doc, dict) and "command" in doc and isinstance(doc.get("config"), dict):
        if doc["command"] != command:
            raise ConfigurationError(f"manifest records command {doc['command']!r}, not {command!r}")
        doc = doc["config"]
    if not isinstance(doc, dict):
        raise SchemaError("config file must hold a JSON object")
    actions = {a.dest: a for a in sub._actions}
    out = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest in _NOT_CONFIGURABLE:
            continue
        action = actions.get(dest)
        if action is None:
            raise ConfigurationError(f"config key {key!r} is not an option of {command}")
        if value is not None and action.type is not None:
            try:
                value = action.type(value if not isinstance(value, (list, tuple)) else list(value))
            except (argparse.ArgumentTypeError, TypeError, ValueError) as exc:
                raise ConfigurationError(f"config key {key!r}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise ConfigurationError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
        out[dest] = value
    return out


def _prescan(argv: Sequence[str]) -> tuple[Optional[str], Optional[str]]:
    command = next((a for a in argv if not a.startswith("-")), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def _parse(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    command, config = _prescan(argv)
    if config and command:
        try:
            sub = _subparser(parser, command)
        except KeyError:
            sub = None  # argparse reports the unknown command below
        if sub is not None:
            defaults = _config_defaults(sub, config, command)
            sub.set_defaults(**defaults)
            # options and positionals supplied by the config become optional on the command line
            for action in sub._actions:
                if action.dest in defaults:
                    action.required = False
                    action.default = defaults[action.dest]
                    if not action.option_strings:
                        action.nargs = "?"
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip() + "\nprotoseg: error: a command is required")
    return args


def _manifest(args, outputs: dict, wall: float, extras: dict) -> str:
    config = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIGURABLE}
    inputs = [v for k, v in config.items() if k in ("scenes", "input", "model", "predictions", "prototypes") and v]
    doc = {
        "command": args.command,
        "config": config,
        "inputs": inputs,
        "outputs": list(outputs),
        "seed": config.get("seed"),
        "version": __version__,
        "wall_time_s": round(wall, 6),
    }
    if extras:
        doc["results"] = extras
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _configure_logging() -> None:
    level_name = os.environ.get("SAIS_LOG", "error").strip().lower() or "error"
    if level_name not in LOG_LEVELS:
        raise ConfigurationError(f"SAIS_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
    root = logging.getLogger("protoseg")
    for h in list(root.handlers):
        root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(LOG_LEVELS[level_name])
    root.propagate = False


def _error_payload(exc: BaseException, code: int) -> dict:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("line", "column", "offset", "scene_id", "instance_index", "epoch", "step"):
        if getattr(exc, attr, None) is not None:
            doc[attr] = getattr(exc, attr)
    return doc


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (InputError, TrainingDivergedError)):
        return 1
    return 2


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    try:
        _configure_logging()
        args = _parse(argv)
        start = time.perf_counter()
        outputs, text, extras = args.func(args)
        wall = time.perf_counter() - start
        outputs[str(args.output) + ".manifest.json"] = _manifest(args, outputs, wall, extras)
        write_outputs(outputs)
        if text:
            sys.stdout.write(text)
        return 0
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except BaseException as exc:  # noqa: BLE001
        if isinstance(exc, KeyboardInterrupt):
            raise
        code = _exit_code(exc)
        if code == 2:
            logger.debug("internal failure", exc_info=True)
        if json_errors:
            sys.stderr.write(json.dumps(_error_payload(exc, code)) + "\n")
        else:
            sys.stderr.write(f"{exc}\n" if isinstance(exc, UsageError) else f"protoseg: {type(exc).__name__}: {exc}\n")
        return code


def main() -> None:
    sys.exit(run())
