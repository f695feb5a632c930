"""Command-line entry point: synth, ingest, train, predict, score, ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
All outputs are written via a temp file plus rename, so a failed command
never leaves a partially written artifact.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from . import pipeline
from .ingest import build_index, load_image, load_truth
from .metrics import ConfusionMatrix, accumulate_confusion, merge_confusion, report_from_confusion
from .model import load_checkpoint
from .pipeline import TrainConfig, read_mask_png, write_mask_png
from .synth import SyntheticSpec, generate_synthetic, write_json_atomic
from .types import NUM_CLASSES, ImagePair

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the usage-error contract here is 1
    def error(self, message):
        raise CliError(EXIT_USAGE, f"{self.prog}: error: {message}")


def _write_text_atomic(text: str, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _load_json_file(path: str, what: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CliError(EXIT_DATA, f"cannot read {what} {path}: {e}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise CliError(EXIT_USAGE, f"{what} {path} is not valid JSON: {e}") from None


def _build_split_index(data_root: str, split: str):
    try:
        index = build_index(data_root, split)
    except (FileNotFoundError, OSError) as e:
        raise CliError(EXIT_DATA, f"cannot index split {split!r}: {e}") from None
    if len(index) == 0:
        raise CliError(EXIT_DATA, f"split {split!r} under {data_root} has no complete scenes")
    return index


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec.from_dict(_load_json_file(args.spec, "synthetic spec"))
    except (ValueError, TypeError) as e:
        raise CliError(EXIT_USAGE, f"bad synthetic spec: {e}") from None
    try:
        manifest = generate_synthetic(spec, args.out)
    except OSError as e:
        raise CliError(EXIT_DATA, f"cannot write dataset under {args.out}: {e}") from None
    print(f"wrote {spec.num_scenes} scenes under {args.out}")
    for split, info in sorted(manifest["splits"].items()):
        print(f"  {split}: {len(info['scene_ids'])} scenes, class pixels {info['class_pixels']}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    index = _build_split_index(args.data, args.split)
    out = Path(args.out)
    try:
        for entry in index.entries:
            write_mask_png(load_truth(entry), out / f"{entry.scene_id}_truth.png")
    except OSError as e:
        raise CliError(EXIT_DATA, f"cannot write masks under {args.out}: {e}") from None
    except ValueError as e:
        raise CliError(EXIT_DATA, f"bad label data: {e}") from None
    print(f"indexed {len(index)} scenes in split {args.split!r}")
    if index.skipped:
        print(f"  skipped {len(index.skipped)} incomplete: {', '.join(index.skipped)}")
    print(f"wrote truth masks to {out}")
    return EXIT_OK


def _load_train_config(path: str) -> TrainConfig:
    try:
        return TrainConfig.from_dict(_load_json_file(path, "train config"))
    except (ValueError, TypeError) as e:
        raise CliError(EXIT_USAGE, f"bad train config: {e}") from None


def cmd_train(args) -> int:
    config = _load_train_config(args.config)
    train_index = _build_split_index(args.data, "train")
    val_index = _build_split_index(args.data, "val")
    try:
        result = pipeline.train(
            config, train_index, val_index, out_dir=args.out, single_thread=args.single_thread
        )
    except ValueError as e:
        raise CliError(EXIT_DATA, str(e)) from None
    last = result.log[-1] if result.log else None
    if last is not None:
        print(
            f"epoch {last['epoch']}: loss {last['train_loss']:.4f}, "
            f"val overall {last['val_overall_f1']:.4f}, collapsed={str(last['collapsed']).lower()}"
        )
    print(f"best epoch {result.best_epoch} (val overall {result.best_overall:.4f})")
    print(f"artifacts written to {args.out}")
    if result.diverged:
        raise CliError(EXIT_RUNTIME, "training diverged (non-finite loss); kept last good checkpoint")
    if result.collapsed:
        print("collapse guard fired; training halted early")
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as e:
        raise CliError(EXIT_DATA, f"cannot load checkpoint {args.checkpoint}: {e}") from None
    if args.single_thread:
        torch.set_num_threads(1)
    needs_pre = model.config.uses_pre_image
    if needs_pre and args.pre is None:
        raise CliError(
            EXIT_USAGE, f"--pre is required for fusion mode {model.config.fusion!r}"
        )
    try:
        post = load_image(args.post)
        pre = load_image(args.pre) if args.pre is not None else None
    except (OSError, ValueError) as e:
        raise CliError(EXIT_DATA, f"cannot load input image: {e}") from None
    if pre is not None and pre.shape != post.shape:
        raise CliError(
            EXIT_DATA,
            f"pre image {pre.shape[:2]} and post image {post.shape[:2]} differ in size",
        )
    pair = ImagePair(
        scene_id=Path(args.post).stem,
        pre=pre if pre is not None else np.zeros_like(post),
        post=post,
    )
    try:
        mask = pipeline.predict_scene(model, pair, tile=not args.no_tile)
    except ValueError as e:
        raise CliError(EXIT_DATA, str(e)) from None
    try:
        write_mask_png(mask, args.out)
    except OSError as e:
        raise CliError(EXIT_DATA, f"cannot write {args.out}: {e}") from None
    values, counts = np.unique(mask, return_counts=True)
    summary = ", ".join(f"{v}: {c}" for v, c in zip(values.tolist(), counts.tolist()))
    print(f"wrote {args.out} ({mask.shape[1]}x{mask.shape[0]}, class pixels {{{summary}}})")
    return EXIT_OK


def _mask_scene_id(path: Path) -> str:
    stem = path.stem
    for suffix in ("_prediction", "_truth"):
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def _read_mask_dir(dir_path: str, what: str) -> dict[str, Path]:
    d = Path(dir_path)
    if not d.is_dir():
        raise CliError(EXIT_DATA, f"{what} directory {dir_path} does not exist")
    return {_mask_scene_id(p): p for p in sorted(d.glob("*.png"))}


def cmd_score(args) -> int:
    pred_files = _read_mask_dir(args.pred, "prediction")
    truth_files = _read_mask_dir(args.truth, "truth")
    missing = sorted(set(truth_files) - set(pred_files))
    extra = sorted(set(pred_files) - set(truth_files))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing predictions for: {', '.join(missing)}")
        if extra:
            parts.append(f"predictions without truth: {', '.join(extra)}")
        raise CliError(EXIT_DATA, "scene sets differ; " + "; ".join(parts))
    if not pred_files:
        raise CliError(EXIT_DATA, "no mask files to score")

    cm = ConfusionMatrix.zeros(NUM_CLASSES)
    for scene_id in sorted(pred_files):
        try:
            pred = read_mask_png(pred_files[scene_id])
            truth = read_mask_png(truth_files[scene_id])
            cm = merge_confusion(cm, accumulate_confusion(pred, truth, NUM_CLASSES))
        except ValueError as e:
            raise CliError(EXIT_DATA, f"scene {scene_id!r}: {e}") from None
    report = report_from_confusion(cm)
    _write_text_atomic(report.to_json() + "\n", Path(args.out))
    print(
        f"overall {report.overall_f1:.4f} / localization {report.localization_f1:.4f} "
        f"/ damage {report.damage_f1:.4f}"
    )
    print(f"metrics written to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _load_train_config(args.config)
    train_index = _build_split_index(args.data, "train")
    val_index = _build_split_index(args.data, "val")
    rows = pipeline.run_ablation(config, train_index, val_index, single_thread=args.single_thread)
    csv_text = pipeline.ablation_to_csv(rows)
    try:
        _write_text_atomic(csv_text, Path(args.out))
    except OSError as e:
        raise CliError(EXIT_DATA, f"cannot write {args.out}: {e}") from None
    print(csv_text, end="")
    print(f"ablation table written to {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="damagemap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--spec", required=True, help="synthetic spec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="index a split and export rasterized truth masks")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--split", default="train", help="split name (default: train)")
    p.add_argument("--out", required=True, help="output directory for truth masks")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a dataset with train/val splits")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--config", required=True, help="train config JSON file")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--single-thread", action="store_true", help="force bitwise determinism")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict a damage mask for one scene")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--pre", help="pre-disaster PNG (optional for mono-post checkpoints)")
    p.add_argument("--post", required=True, help="post-disaster PNG")
    p.add_argument("--out", required=True, help="output mask PNG")
    p.add_argument("--no-tile", action="store_true", help="forward the full image instead of quadrants")
    p.add_argument("--single-thread", action="store_true", help="force bitwise determinism")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="score prediction masks against truth masks")
    p.add_argument("--pred", required=True, help="directory of prediction mask PNGs")
    p.add_argument("--truth", required=True, help="directory of truth mask PNGs")
    p.add_argument("--out", required=True, help="output metrics JSON")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ablate", help="run the fusion x weighting ablation grid")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--config", required=True, help="base train config JSON file")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--single-thread", action="store_true", help="force bitwise determinism")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as e:
        print(e.message, file=sys.stderr)
        return e.code
    except Exception as e:  # noqa: BLE001  (runtime-failure exit contract)
        print(f"damagemap: runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
