"""Training with a collapse guard, evaluation, and the fusion/weighting ablation grid.

The loop is plain momentum SGD. Losses are computed by the numpy routines in
`loss` (which also supply the analytic gradient with respect to the logits),
and that gradient is injected into the torch graph, so the gradient-checked
code path is exactly the one used for training. Batches are quadrant tiles
shuffled across scenes with a seeded generator; a single-thread mode exists
for bitwise reproducibility.
"""

from __future__ import annotations

import copy
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .ingest import load_pair
from .loss import (
    ClassWeights,
    frequencies_from_masks,
    inverse_frequency_weights,
    ordinal_cross_entropy,
    weighted_cross_entropy,
)
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    accumulate_confusion,
    merge_confusion,
    report_from_confusion,
)
from .model import (
    DamageNet,
    ModelConfig,
    NonFiniteLogits,
    forward_pair,
    init_model,
    predict,
    save_checkpoint,
)
from .synth import SyntheticSpec, generate_synthetic, write_json_atomic  # noqa: F401  (generator lives with the pipeline API)
from .tiling import merge_quadrants, split_quadrants
from .types import IGNORE, NUM_CLASSES, DatasetIndex, ImagePair

LOSS_KINDS = ("weighted-ce", "ce", "ordinal-ce")

CHECKPOINT_NAME = "checkpoint.npz"
LOG_NAME = "log.ndjson"
RUN_CONFIG_NAME = "config.json"


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 0.01
    momentum: float = 0.9
    loss: str = "weighted-ce"
    tile: bool = True
    seed: int = 0
    # guard fires when the fraction of non-background predicted pixels on the
    # validation split drops strictly below this
    collapse_threshold: float = 0.001

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if not (0.0 <= self.collapse_threshold <= 1.0):
            raise ValueError(f"collapse_threshold must be in [0, 1], got {self.collapse_threshold}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        d = dict(d)
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


def detect_collapse(val_predictions: list[np.ndarray], threshold: float) -> bool:
    """True iff the fraction of predicted non-background pixels is strictly below threshold."""
    if not val_predictions:
        raise ValueError("detect_collapse needs at least one prediction")
    total = sum(int(p.size) for p in val_predictions)
    nonzero = sum(int((p != 0).sum()) for p in val_predictions)
    return nonzero / total < threshold


def predict_scene(model: DamageNet, pair: ImagePair, tile: bool = True) -> np.ndarray:
    """Tile, forward, argmax, and merge one scene into a damage mask."""
    if not tile:
        return predict(forward_pair(model, pair))
    pre_tiles = split_quadrants(pair.pre)
    post_tiles = split_quadrants(pair.post)
    pred_tiles = []
    for pre_t, post_t in zip(pre_tiles, post_tiles):
        tile_pair = ImagePair(scene_id=pair.scene_id, pre=pre_t, post=post_t)
        pred_tiles.append(predict(forward_pair(model, tile_pair)))
    return merge_quadrants(pred_tiles)


def _scene_confusion(model: DamageNet, pair: ImagePair, tile: bool) -> tuple[ConfusionMatrix, np.ndarray]:
    pred = predict_scene(model, pair, tile=tile)
    return accumulate_confusion(pred, pair.truth, NUM_CLASSES), pred


def evaluate(model: DamageNet, index: DatasetIndex, tile: bool = True) -> MetricsReport:
    """Pooled confusion matrix over a split, reduced to the metrics report."""
    pairs = (load_pair(index, sid) for sid in index.scene_ids)
    return evaluate_pairs(model, pairs, tile=tile)


def evaluate_pairs(model: DamageNet, pairs, tile: bool = True) -> MetricsReport:
    cm = ConfusionMatrix.zeros(NUM_CLASSES)
    n = 0
    for pair in pairs:
        if pair.truth is None:
            raise ValueError(f"scene {pair.scene_id!r} has no truth mask")
        scene_cm, _ = _scene_confusion(model, pair, tile)
        cm = merge_confusion(cm, scene_cm)
        n += 1
    if n == 0:
        raise ValueError("no scenes to evaluate")
    return report_from_confusion(cm)


@dataclass
class TrainResult:
    model: DamageNet
    log: list[dict]
    weights: ClassWeights
    collapsed: bool = False
    diverged: bool = False
    best_epoch: int = 0
    best_overall: float = 0.0


def _stack_tiles(pairs: list[ImagePair], tile: bool):
    pre, post, truth = [], [], []
    for pair in pairs:
        if pair.truth is None:
            raise ValueError(f"scene {pair.scene_id!r} has no truth mask")
        if tile:
            pre.extend(split_quadrants(pair.pre))
            post.extend(split_quadrants(pair.post))
            truth.extend(split_quadrants(pair.truth))
        else:
            pre.append(pair.pre)
            post.append(pair.post)
            truth.append(pair.truth)
    shapes = {t.shape for t in truth}
    if len(shapes) != 1:
        raise ValueError(f"training tiles must share one shape, got {sorted(shapes)}")
    x_pre = torch.from_numpy(np.stack(pre).transpose(0, 3, 1, 2).astype(np.float32))
    x_post = torch.from_numpy(np.stack(post).transpose(0, 3, 1, 2).astype(np.float32))
    y = np.stack(truth).astype(np.int64)
    return x_pre, x_post, y


def _resolve_weights(config: TrainConfig, truth_masks: list[np.ndarray]) -> ClassWeights:
    if config.loss == "weighted-ce":
        return inverse_frequency_weights(frequencies_from_masks(truth_masks))
    return ClassWeights.uniform()


def _batch_loss(config: TrainConfig, logits: torch.Tensor, truth: np.ndarray, weights: ClassWeights):
    np_logits = logits.detach().permute(0, 2, 3, 1).contiguous().numpy().astype(np.float64)
    if config.loss == "ordinal-ce":
        value, grad = ordinal_cross_entropy(np_logits, truth)
    else:
        value, grad = weighted_cross_entropy(np_logits, truth, weights)
    grad_t = torch.from_numpy(grad.astype(np.float32)).permute(0, 3, 1, 2).contiguous()
    return value, grad_t


def train(
    config: TrainConfig,
    train_index: DatasetIndex,
    val_index: DatasetIndex,
    out_dir: Path | str | None = None,
    single_thread: bool = False,
) -> TrainResult:
    """Momentum SGD over quadrant tiles with per-epoch validation.

    The best checkpoint by validation overall F1 is retained. Training halts
    early when the collapse guard fires, and aborts (keeping the last good
    weights) if the loss turns non-finite.
    """
    if single_thread:
        torch.set_num_threads(1)
    if len(train_index) == 0:
        raise ValueError("train split is empty")
    if len(val_index) == 0:
        raise ValueError("validation split is empty")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    train_pairs = [load_pair(train_index, sid) for sid in train_index.scene_ids]
    val_pairs = [load_pair(val_index, sid) for sid in val_index.scene_ids]
    x_pre, x_post, y = _stack_tiles(train_pairs, config.tile)
    weights = _resolve_weights(config, [p.truth for p in train_pairs])

    model = init_model(config.model)
    optimizer = torch.optim.SGD(
        model.parameters(), lr=config.learning_rate, momentum=config.momentum
    )
    uses_pre = model.config.uses_pre_image

    best_state = copy.deepcopy(model.state_dict())
    best_overall = -1.0
    best_epoch = 0
    log: list[dict] = []
    collapsed = False
    diverged = False

    n_tiles = y.shape[0]
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(n_tiles)
        batch_losses = []
        for start in range(0, n_tiles, config.batch_size):
            idx = order[start : start + config.batch_size]
            idx_t = torch.from_numpy(idx)
            optimizer.zero_grad()
            logits = model(x_pre[idx_t] if uses_pre else None, x_post[idx_t])
            value, grad_t = _batch_loss(config, logits, y[idx], weights)
            if not math.isfinite(value):
                diverged = True
                break
            logits.backward(grad_t)
            optimizer.step()
            batch_losses.append(value)
        if diverged:
            break
        train_loss = float(np.mean(batch_losses))

        model.eval()
        cm = ConfusionMatrix.zeros(NUM_CLASSES)
        predictions = []
        try:
            for pair in val_pairs:
                scene_cm, pred = _scene_confusion(model, pair, config.tile)
                cm = merge_confusion(cm, scene_cm)
                predictions.append(pred)
        except NonFiniteLogits:
            diverged = True
            break
        report = report_from_confusion(cm)
        collapsed = detect_collapse(predictions, config.collapse_threshold)

        log.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_localization_f1": report.localization_f1,
                "val_damage_f1": report.damage_f1,
                "val_overall_f1": report.overall_f1,
                "collapsed": collapsed,
            }
        )
        if report.overall_f1 > best_overall:
            best_overall = report.overall_f1
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        if collapsed:
            break

    model.load_state_dict(best_state)
    model.eval()
    result = TrainResult(
        model=model,
        log=log,
        weights=weights,
        collapsed=collapsed,
        diverged=diverged,
        best_epoch=best_epoch,
        best_overall=max(best_overall, 0.0),
    )
    if out_dir is not None:
        write_run_artifacts(result, config, Path(out_dir))
    return result


def write_run_artifacts(result: TrainResult, config: TrainConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out_dir / CHECKPOINT_NAME)
    write_ndjson(result.log, out_dir / LOG_NAME)
    run_config = {
        "train": config.to_dict(),
        "class_weights": list(result.weights.weights),
        "best_epoch": result.best_epoch,
        "collapsed": result.collapsed,
        "diverged": result.diverged,
    }
    write_json_atomic(run_config, out_dir / RUN_CONFIG_NAME)


def write_ndjson(records: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".ndjson.tmp")
    os.close(fd)
    try:
        with open(tmp, "w", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True))
                f.write("\n")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_mask_png(mask: np.ndarray, path: Path | str) -> None:
    """Single-channel 8-bit PNG with damage classes as pixel values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".png.tmp")
    os.close(fd)
    try:
        PILImage.fromarray(np.asarray(mask, dtype=np.uint8), mode="L").save(tmp, format="PNG")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def read_mask_png(path: Path | str) -> np.ndarray:
    with PILImage.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.uint8)
    bad = (arr >= NUM_CLASSES) & (arr != IGNORE)
    if bad.any():
        raise ValueError(f"{path}: mask values must be 0..4 or {IGNORE}")
    return arr


WEIGHTING_LEGS = (("uniform", "ce"), ("inverse", "weighted-ce"))
FUSION_LEGS = ("mono-post", "input-concat", "input-diff", "feature-concat")


@dataclass
class AblationRow:
    name: str
    fusion: str
    weighting: str
    loc_f1: float | None = None
    dmg_f1: float | None = None
    overall_f1: float | None = None
    error: str | None = None


def run_ablation(
    base: TrainConfig,
    train_index: DatasetIndex,
    val_index: DatasetIndex,
    single_thread: bool = False,
) -> list[AblationRow]:
    """Train and score the fusion x weighting grid with the base config's seed."""
    rows: list[AblationRow] = []
    for fusion in FUSION_LEGS:
        for weighting, loss_kind in WEIGHTING_LEGS:
            name = f"{fusion}+{weighting}"
            config = replace(base, model=replace(base.model, fusion=fusion), loss=loss_kind)
            row = AblationRow(name=name, fusion=fusion, weighting=weighting)
            try:
                result = train(config, train_index, val_index, single_thread=single_thread)
                report = evaluate(result.model, val_index, tile=config.tile)
                row.loc_f1 = report.localization_f1
                row.dmg_f1 = report.damage_f1
                row.overall_f1 = report.overall_f1
            except Exception as e:  # noqa: BLE001  (one leg failing must not sink the grid)
                row.error = str(e)
            rows.append(row)
    return rows


def ablation_to_csv(rows: list[AblationRow]) -> str:
    lines = ["config,fusion,weighting,loc_f1,dmg_f1,overall_f1"]
    for r in rows:
        if r.error is not None:
            lines.append(f"{r.name},{r.fusion},{r.weighting},failed,failed,failed")
        else:
            lines.append(
                f"{r.name},{r.fusion},{r.weighting},{r.loc_f1:.6f},{r.dmg_f1:.6f},{r.overall_f1:.6f}"
            )
    return "\n".join(lines) + "\n"
