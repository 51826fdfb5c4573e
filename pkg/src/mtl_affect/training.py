"""Optimization loop with masking-aware losses and best-checkpoint retention.

Single-task modes minimize their one task loss; multi mode minimizes the
three-term sum. After every epoch the model is scored on the validation
split and the checkpoint maximizing the selection metric is kept. Shuffling
uses a seeded numpy generator and updates are strictly sequential, so runs
with the same seed and config are reproducible on one device.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from . import metrics
from .annotations import (
    AffectSample,
    ClassWeights,
    compute_class_weights,
    compute_stats,
)
from .losses import (
    BatchLabels,
    DegenerateBatchError,
    FocalConfig,
    ccc_loss,
    focal_loss,
    total_loss,
    weighted_cross_entropy,
)
from .models import (
    AffectModel,
    BackboneSpec,
    ModelAssembly,
    PreprocessConfig,
    build_model,
    load_checkpoint,
    records_from_outputs,
    save_checkpoint,
)
from .records import PredictionRecord

DEFAULT_SELECT_METRIC = {
    "multi": "p_total",
    "single-va": "ccc_mean",
    "single-expr": "f1_expr_mean",
    "single-au": "f1_au_mean",
}


@dataclass
class TrainConfig:
    """Hyperparameters and paths for one training run."""

    mode: str
    max_epochs: int
    images_root: Path
    checkpoint_dir: Path
    batch_size: int = 64
    learning_rate: float = 5e-5
    seed: int = 0
    focal: FocalConfig = field(default_factory=FocalConfig)
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    select_metric: str | None = None
    au_threshold: float = 0.5
    merge_empty_expr: bool = False

    def __post_init__(self) -> None:
        self.images_root = Path(self.images_root)
        self.checkpoint_dir = Path(self.checkpoint_dir)
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (the VA loss needs pairs)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.mode not in DEFAULT_SELECT_METRIC:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def assembly(self) -> ModelAssembly:
        return ModelAssembly(mode=self.mode, backbone=self.backbone)

    @property
    def selection(self) -> str:
        return self.select_metric or DEFAULT_SELECT_METRIC[self.mode]


@dataclass
class TrainResult:
    best_checkpoint: Path
    log: list[dict]
    best_score: float
    best_epoch: int


def load_image_tensor(path: Path, preprocess: PreprocessConfig) -> torch.Tensor:
    """Read an image as a normalized (3, S, S) float tensor."""
    img = Image.open(path).convert("RGB")
    size = (preprocess.image_size, preprocess.image_size)
    if img.size != size:
        img = img.resize(size, Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(preprocess.mean, dtype=np.float32)) / np.asarray(
        preprocess.std, dtype=np.float32
    )
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def _load_batch_images(
    samples: Sequence[AffectSample], images_root: Path, preprocess: PreprocessConfig
) -> torch.Tensor:
    return torch.stack(
        [load_image_tensor(images_root / s.image_ref, preprocess) for s in samples]
    )


def _preflight(mode: str, samples: Sequence[AffectSample], split: str) -> None:
    """Fail before the first step if the trained task has no usable labels."""
    stats = compute_stats(samples)
    problems = []
    if mode in ("multi", "single-va") and stats.n_va_valid < 2:
        problems.append("va (needs at least 2 valid pairs)")
    if mode in ("multi", "single-expr") and stats.n_expr_valid == 0:
        problems.append("expr")
    if mode in ("multi", "single-au") and sum(stats.au_valid_counts) == 0:
        problems.append("au")
    if mode == "multi":
        # Multi-task training tolerates a missing task in the loss, but the
        # composite selection metric cannot be computed without all three.
        if problems:
            raise ValueError(f"{split} split unusable for multi mode, tasks: {problems}")
    elif problems:
        raise ValueError(f"{split} split has no usable labels for task {problems[0]}")


def _class_weights_for(
    config: TrainConfig, train_samples: Sequence[AffectSample]
) -> ClassWeights:
    # Weights come from the training split only, never from validation.
    stats = compute_stats(train_samples)
    if stats.n_expr_valid == 0:
        return ClassWeights.uniform()
    return compute_class_weights(stats, merge_empty_into_other=config.merge_empty_expr)


def _step_loss(mode, outputs, labels, weights, focal):
    """Loss tensor plus a per-task scalar breakdown for logging."""
    if mode == "multi":
        bd = total_loss(
            outputs.expr_logits, outputs.au_logits, outputs.va, labels, weights, focal
        )
        skipped = {
            "expr": bd.expr_empty,
            "au": bd.au_empty,
            "va": bd.va_empty,
        }
        return bd.total, bd.scalars(), skipped
    if mode == "single-va":
        empty = int(labels.va_valid.sum()) < 2
        loss = ccc_loss(outputs.va, labels.va, labels.va_valid)
        parts = {"l_expr": 0.0, "l_au": 0.0, "l_va": float(loss.detach())}
        skipped = {"va": empty}
    elif mode == "single-expr":
        empty = not bool(labels.expr_valid.any())
        loss = weighted_cross_entropy(
            outputs.expr_logits, labels.expression, labels.expr_valid, weights
        )
        parts = {"l_expr": float(loss.detach()), "l_au": 0.0, "l_va": 0.0}
        skipped = {"expr": empty}
    else:
        empty = not bool(labels.au_valid.any())
        loss = focal_loss(outputs.au_logits, labels.aus, labels.au_valid, focal)
        parts = {"l_expr": 0.0, "l_au": float(loss.detach()), "l_va": 0.0}
        skipped = {"au": empty}
    parts["total"] = float(loss.detach())
    if empty:
        loss = None  # nothing to step on
    return loss, parts, skipped


def _predict_model(
    model: AffectModel,
    samples: Sequence[AffectSample],
    images_root: Path,
    preprocess: PreprocessConfig,
    batch_size: int,
) -> list[PredictionRecord]:
    model.eval()
    records: list[PredictionRecord] = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            images = _load_batch_images(chunk, images_root, preprocess)
            outputs = model(images)
            records.extend(records_from_outputs([s.image_ref for s in chunk], outputs))
    return records


def selection_score(
    metric: str,
    preds: Sequence[PredictionRecord],
    truth: Sequence[AffectSample],
    au_threshold: float = 0.5,
) -> float:
    """Score predictions for model selection; partial-task metrics supported."""
    if metric == "p_total":
        return metrics.evaluate(preds, truth, au_threshold=au_threshold).p_total
    by_ref = {p.image_ref: p for p in preds}
    if metric == "ccc_mean":
        pairs = [
            (by_ref[s.image_ref], s) for s in truth if s.va_valid
        ]
        if len(pairs) < 2:
            raise metrics.EvaluationError("va selection needs at least 2 valid pairs")
        pv = np.array([[p.valence, p.arousal] for p, _ in pairs])
        tv = np.array([[s.valence, s.arousal] for _, s in pairs])
        return 0.5 * (
            metrics.concordance_ccc(pv[:, 0], tv[:, 0])
            + metrics.concordance_ccc(pv[:, 1], tv[:, 1])
        )
    if metric == "f1_expr_mean":
        pred_labels = []
        true_labels = []
        for s in truth:
            if s.expr_valid:
                pred_labels.append(int(np.argmax(by_ref[s.image_ref].expr_probs)))
                true_labels.append(s.expression)
        _, mean = metrics.macro_f1_expr(pred_labels, true_labels)
        return mean
    if metric == "f1_au_mean":
        f1s = []
        for i in range(12):
            p_bits = []
            t_bits = []
            for s in truth:
                if s.au_valid[i]:
                    p_bits.append(int(by_ref[s.image_ref].au_probs[i] >= au_threshold))
                    t_bits.append(s.aus[i])
            if not p_bits:
                raise metrics.EvaluationError(f"au selection: AU index {i} has no valid labels")
            f1s.append(metrics.f1_binary(p_bits, t_bits))
        return float(np.mean(f1s))
    raise ValueError(f"unknown selection metric {metric!r}")


def train(
    config: TrainConfig,
    train_samples: Sequence[AffectSample],
    val_samples: Sequence[AffectSample],
) -> TrainResult:
    """Run the optimization loop; returns the best checkpoint and the log."""
    if not train_samples or not val_samples:
        raise ValueError("train and validation sets must be non-empty")
    _preflight(config.mode, train_samples, "train")
    _preflight(config.mode, val_samples, "validation")

    needs_expr = config.mode in ("multi", "single-expr")
    weights = _class_weights_for(config, train_samples) if needs_expr else ClassWeights.uniform()

    model = build_model(config.assembly, seed=config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)

    config.checkpoint_dir.mkdir(parents=True, exist_ok=True)
    best_path = config.checkpoint_dir / "best.pt"
    log_path = config.checkpoint_dir / "train_log.jsonl"
    log_path.write_text("", encoding="utf-8")

    best_score = float("-inf")
    best_epoch = -1
    log: list[dict] = []
    n = len(train_samples)

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = rng.permutation(n)
        part_sums = {"l_expr": 0.0, "l_au": 0.0, "l_va": 0.0, "total": 0.0}
        skip_counts = {"expr": 0, "au": 0, "va": 0}
        steps = 0
        for start in range(0, n, config.batch_size):
            batch = [train_samples[i] for i in order[start : start + config.batch_size]]
            images = _load_batch_images(batch, config.images_root, config.preprocess)
            labels = BatchLabels.from_samples(batch)
            outputs = model(images)
            try:
                loss, parts, skipped = _step_loss(
                    config.mode, outputs, labels, weights, config.focal
                )
            except DegenerateBatchError:
                skip_counts = {k: v + 1 for k, v in skip_counts.items()}
                continue
            for k, v in parts.items():
                part_sums[k] += v
            for task, was_skipped in skipped.items():
                skip_counts[task] += int(was_skipped)
            steps += 1
            if loss is None:
                continue
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

        preds = _predict_model(
            model, val_samples, config.images_root, config.preprocess, config.batch_size
        )
        if config.selection == "p_total":
            report = metrics.evaluate(preds, val_samples, au_threshold=config.au_threshold)
            score = report.p_total
            val_entry = {"p_total": score, "report": report.as_dict()["scale_01"]}
        else:
            score = selection_score(
                config.selection, preds, val_samples, config.au_threshold
            )
            val_entry = {config.selection: score}
        if score > best_score:
            best_score = score
            best_epoch = epoch
            save_checkpoint(model, config.preprocess, best_path)

        entry = {
            "epoch": epoch,
            "loss": {k: (v / steps if steps else 0.0) for k, v in part_sums.items()},
            "skipped_task_batches": skip_counts,
            "val": val_entry,
            "best_epoch": best_epoch,
            "best_score": best_score,
        }
        log.append(entry)
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")

    return TrainResult(
        best_checkpoint=best_path, log=log, best_score=best_score, best_epoch=best_epoch
    )


def predict(
    checkpoint_path: str | Path,
    samples: Sequence[AffectSample],
    images_root: str | Path,
    batch_size: int = 64,
) -> list[PredictionRecord]:
    """Inference over samples with a saved checkpoint; deterministic."""
    model, preprocess = load_checkpoint(checkpoint_path)
    return _predict_model(model, samples, Path(images_root), preprocess, batch_size)


def split_train_val(
    samples: Sequence[AffectSample], val_fraction: float, seed: int
) -> tuple[list[AffectSample], list[AffectSample]]:
    """Deterministic shuffled split used when no validation file is given."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_val = max(1, int(round(len(samples) * val_fraction)))
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    if not train:
        raise ValueError("validation fraction leaves no training samples")
    return train, val
