"""Command-line interface: evaluation, statistics, synthesis, training,
gradient verification.

Reports go to stdout as JSON; diagnostics go to stderr.  Exit codes: 0 on
success, 1 on validation failure, 2 on unexpected runtime errors.  The
``VSOR_THREADS`` environment variable caps per-frame parallelism (0 or unset
means auto).
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from .dataset import (
    AnnotationError,
    PgmError,
    SynthConfig,
    annotation_to_rank_map,
    compute_stats,
    compute_video_stats,
    list_sequences,
    load_annotations,
    save_sequence,
    synth_generate,
)
from .gradcheck import run_suite
from .metrics import InstanceMask, mae, sa_sor
from .model import save_model_params
from .pgm import write_pgm16
from .trainer import ModelConfig, build_dataset, train

__all__ = ["main"]


class CliError(Exception):
    """Input validation failure; maps to exit code 1."""


def _worker_count() -> int:
    raw = os.environ.get("VSOR_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        raise CliError(f"VSOR_THREADS must be an integer, got {raw!r}")
    if value < 0:
        raise CliError(f"VSOR_THREADS must be >= 0, got {value}")
    return value if value > 0 else (os.cpu_count() or 1)


def _emit(payload) -> None:
    json.dump(payload, sys.stdout)
    sys.stdout.write("\n")


# -- config files -------------------------------------------------------------


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def load_config_file(path) -> dict:
    """Read a config as JSON (leading '{') or line-based key=value pairs."""
    with open(path, encoding="utf-8") as f:
        content = f.read()
    stripped = content.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(content)
        if not isinstance(doc, dict):
            raise CliError(f"{path}: top-level JSON value must be an object")
        return doc
    config = {}
    for line_no, line in enumerate(content.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        config[key.strip()] = _parse_scalar(value.strip())
    return config


_MODEL_KEYS = ("variant", "C", "H", "W", "T", "margin", "learning_rate",
               "iterations", "seed", "momentum", "weight_decay")
_SYNTH_KEYS = ("rank_swap_prob", "noise_level")
_DATA_KEYS = ("train_sequences", "eval_sequences", "out_dir",
              "K_min", "K_max", "frame_height", "frame_width")


def _train_settings(config: dict, overrides: dict) -> tuple[ModelConfig, SynthConfig, dict]:
    merged = dict(config)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "rank_loss.margin" in merged:
        merged.setdefault("margin", merged.pop("rank_loss.margin"))

    known = set(_MODEL_KEYS) | set(_SYNTH_KEYS) | set(_DATA_KEYS) | {"K_range", "frame_resolution"}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")

    model_kwargs = {k: merged[k] for k in _MODEL_KEYS if k in merged}
    try:
        model = ModelConfig(**model_kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad model config: {exc}")

    k_range = merged.get("K_range", (merged.get("K_min", 3), merged.get("K_max", 3)))
    resolution = merged.get(
        "frame_resolution",
        (merged.get("frame_height", 64), merged.get("frame_width", 64)),
    )
    try:
        synth = SynthConfig(
            T=model.T, C=model.C, H=model.H, W=model.W,
            K_range=tuple(int(k) for k in k_range),
            frame_resolution=tuple(int(r) for r in resolution),
            rank_swap_prob=float(merged.get("rank_swap_prob", 0.1)),
            noise_level=float(merged.get("noise_level", 0.5)),
        )
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad generator config: {exc}")

    data = {
        "train_sequences": int(merged.get("train_sequences", 200)),
        "eval_sequences": int(merged.get("eval_sequences", 50)),
        "out_dir": merged.get("out_dir"),
    }
    if data["train_sequences"] < 1 or data["eval_sequences"] < 1:
        raise CliError("train_sequences and eval_sequences must be positive")
    return model, synth, data


# -- subcommands ---------------------------------------------------------------


def _annotation_instances(annotation) -> list[tuple[InstanceMask, int]]:
    return [
        (InstanceMask(annotation.instance_map == i, i), annotation.ranks[i])
        for i in annotation.object_ids()
    ]


def _eval_frame(task):
    name, idx, gt_ann, pred_ann, iou_threshold = task
    correlation = sa_sor(
        _annotation_instances(gt_ann), _annotation_instances(pred_ann), iou_threshold
    )
    error = mae(annotation_to_rank_map(pred_ann), annotation_to_rank_map(gt_ann))
    return {
        "sequence": name,
        "frame": idx,
        "sa_sor": correlation,
        "mae": error,
    }


def cmd_eval(args) -> int:
    sequences = list_sequences(args.gt)
    if not sequences:
        raise CliError(f"{args.gt}: no sequences found")
    tasks = []
    missing = []
    dumps = []
    for name in sequences:
        gt_frames = load_annotations(os.path.join(args.gt, name))
        pred_dir = os.path.join(args.pred, name)
        if not os.path.isfile(os.path.join(pred_dir, "manifest.json")):
            missing.extend((name, idx) for idx, _ in gt_frames)
            continue
        pred_frames = dict(load_annotations(pred_dir))
        for idx, gt_ann in gt_frames:
            if idx not in pred_frames:
                missing.append((name, idx))
                continue
            tasks.append((name, idx, gt_ann, pred_frames[idx], args.iou))
    if missing:
        listed = ", ".join(f"{name}/{idx}" for name, idx in sorted(missing))
        raise CliError(f"missing predictions for frames: {listed}")

    tasks.sort(key=lambda task: (task[0], task[1]))
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        frames = list(pool.map(_eval_frame, tasks))

    if args.dump_maps:
        os.makedirs(args.dump_maps, exist_ok=True)
        for name, idx, gt_ann, pred_ann, _ in tasks:
            for tag, ann in (("gt", gt_ann), ("pred", pred_ann)):
                path = os.path.join(args.dump_maps, f"{name}_{idx}_{tag}.pgm")
                write_pgm16(path, np.round(annotation_to_rank_map(ann) * 65535).astype(np.uint16))

    defined = [f["sa_sor"] for f in frames if f["sa_sor"] is not None]
    aggregate = {
        "sa_sor": float(np.mean(defined)) if defined else None,
        "sa_sor_undefined_count": sum(1 for f in frames if f["sa_sor"] is None),
        "mae": float(np.mean([f["mae"] for f in frames])) if frames else None,
        "frame_count": len(frames),
    }
    _emit({"frames": frames, "aggregate": aggregate})
    return 0


def cmd_stats(args) -> int:
    sequences = list_sequences(args.data)
    if not sequences:
        raise CliError(f"{args.data}: no sequences found")
    per_sequence = [
        [ann for _, ann in load_annotations(os.path.join(args.data, name))]
        for name in sequences
    ]
    if args.per == "video":
        stats = compute_video_stats(per_sequence)
    else:
        stats = compute_stats([ann for seq in per_sequence for ann in seq])
    payload = asdict(stats)
    payload["per"] = args.per
    _emit(payload)
    return 0


def cmd_synth(args) -> int:
    config = load_config_file(args.config) if args.config else {}
    known = {"T", "C", "H", "W", "K_min", "K_max", "K_range",
             "frame_height", "frame_width", "frame_resolution",
             "rank_swap_prob", "noise_level"}
    unknown = sorted(set(config) - known)
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")
    k_range = config.get("K_range", (config.get("K_min", 3), config.get("K_max", 3)))
    resolution = config.get(
        "frame_resolution",
        (config.get("frame_height", 64), config.get("frame_width", 64)),
    )
    try:
        synth = SynthConfig(
            T=int(config.get("T", 3)),
            C=int(config.get("C", 16)),
            H=int(config.get("H", 7)),
            W=int(config.get("W", 7)),
            K_range=tuple(int(k) for k in k_range),
            frame_resolution=tuple(int(r) for r in resolution),
            rank_swap_prob=float(config.get("rank_swap_prob", 0.1)),
            noise_level=float(config.get("noise_level", 0.5)),
        )
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad generator config: {exc}")

    os.makedirs(args.out, exist_ok=True)
    names = []
    for i in range(args.sequences):
        sample = synth_generate(synth, args.seed + i)
        name = f"seq_{i:04d}"
        save_sequence(os.path.join(args.out, name), sample)
        names.append(name)
    _emit({"out": args.out, "seed": args.seed, "sequences": names})
    return 0


def cmd_train(args) -> int:
    config = load_config_file(args.config) if args.config else {}
    overrides = {
        "variant": args.variant,
        "C": args.C, "H": args.H, "W": args.W, "T": args.T,
        "margin": args.margin,
        "learning_rate": args.learning_rate,
        "iterations": args.iterations,
        "seed": args.seed,
        "momentum": args.momentum,
        "weight_decay": args.weight_decay,
        "train_sequences": args.train_sequences,
        "eval_sequences": args.eval_sequences,
        "noise_level": args.noise_level,
        "rank_swap_prob": args.rank_swap_prob,
        "out_dir": args.out_dir,
    }
    model_config, synth_config, data = _train_settings(config, overrides)

    train_set = build_dataset(synth_config, data["train_sequences"], seed=model_config.seed)
    eval_set = build_dataset(synth_config, data["eval_sequences"],
                             seed=model_config.seed + 1_000_003)
    params, report = train(model_config, train_set, eval_set)

    params_dir = None
    if data["out_dir"]:
        params_dir = data["out_dir"]
        save_model_params(params_dir, params, model_config)

    _emit({
        "variant": model_config.variant,
        "iterations": model_config.iterations,
        "train_sequences": data["train_sequences"],
        "eval_sequences": data["eval_sequences"],
        "loss_curve": report.loss_curve,
        "eval_sa_sor": report.eval_sa_sor,
        "eval_mae": report.eval_mae,
        "eval_undefined_count": report.eval_undefined_count,
        "wall_clock_s": report.wall_clock_s,
        "params_dir": params_dir,
    })
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed, corrupt=args.corrupt)
    all_passed = all(r.passed for r in results)
    _emit({
        "checks": [asdict(r) for r in results],
        "all_passed": all_passed,
    })
    if not all_passed:
        print("gradient checks failed", file=sys.stderr)
        return 1
    return 0


# -- entry point ----------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vsorank",
        description="Video saliency ranking toolkit: evaluate, analyze, synthesize, train.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="score predicted rank annotations against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth dataset directory")
    p.add_argument("--pred", required=True, help="predicted dataset directory")
    p.add_argument("--iou", type=float, default=0.5, help="instance matching IoU threshold")
    p.add_argument("--dump-maps", default=None, metavar="DIR",
                   help="also write rank maps as 16-bit PGM files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="object-count statistics of a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--per", choices=("frame", "video"), default="frame")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate synthetic sequences")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sequences", type=int, default=1, help="number of sequences")
    p.add_argument("--config", default=None, help="generator config file (JSON or key=value)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on synthetic sequences and report metrics")
    p.add_argument("--config", default=None, help="config file (JSON or key=value)")
    p.add_argument("--variant", choices=("basic", "spatial", "temporal", "full"), default=None)
    p.add_argument("--C", type=int, default=None)
    p.add_argument("--H", type=int, default=None)
    p.add_argument("--W", type=int, default=None)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--train-sequences", type=int, default=None)
    p.add_argument("--eval-sequences", type=int, default=None)
    p.add_argument("--noise-level", type=float, default=None)
    p.add_argument("--rank-swap-prob", type=float, default=None)
    p.add_argument("--out-dir", default=None, help="where to save trained parameters")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true",
                   help="negative control: corrupt one backward pass")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, AnnotationError, PgmError,
            FileNotFoundError, NotADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # last-resort diagnostic; includes divergence
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
