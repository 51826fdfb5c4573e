"""The three task losses and their sum, as differentiable torch functions.

Every loss reduces by the mean over *valid* elements only, selected by
boolean indexing so a batch with sentinel-masked rows produces bit-identical
values to the valid-only sub-batch. A task with no usable labels in the
batch contributes an exact zero with zero gradient, letting mixed-annotation
datasets train without special casing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import Tensor

from .annotations import AffectSample, ClassWeights


class DegenerateBatchError(ValueError):
    """No task in the batch has enough valid labels to produce a loss."""


@dataclass(frozen=True)
class FocalConfig:
    """Focusing exponent and probability clamp for the AU loss.

    gamma=1 reproduces the plain (1 - p_t) down-weighting; gamma=0 falls
    back to binary cross-entropy. Probabilities are clamped away from 0 and
    1 before the log so degenerate predictions cannot produce NaNs.
    """

    gamma: float = 1.0
    prob_clamp: float = 1e-7

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not 0.0 < self.prob_clamp < 0.5:
            raise ValueError("prob_clamp must lie in (0, 0.5)")


@dataclass
class BatchLabels:
    """Collated label tensors for one mini-batch, with validity masks."""

    expression: Tensor   # (B,) long, sentinel where invalid
    expr_valid: Tensor   # (B,) bool
    aus: Tensor          # (B, 12) long, sentinel where invalid
    au_valid: Tensor     # (B, 12) bool
    va: Tensor           # (B, 2) float
    va_valid: Tensor     # (B,) bool

    @classmethod
    def from_samples(
        cls, samples: Sequence[AffectSample], dtype: torch.dtype = torch.float32
    ) -> "BatchLabels":
        return cls(
            expression=torch.tensor([s.expression for s in samples], dtype=torch.long),
            expr_valid=torch.tensor([s.expr_valid for s in samples], dtype=torch.bool),
            aus=torch.tensor([s.aus for s in samples], dtype=torch.long),
            au_valid=torch.tensor([s.au_valid for s in samples], dtype=torch.bool),
            va=torch.tensor([(s.valence, s.arousal) for s in samples], dtype=dtype),
            va_valid=torch.tensor([s.va_valid for s in samples], dtype=torch.bool),
        )


def _zero_like(t: Tensor) -> Tensor:
    # Exact zero that stays attached to the graph with zero gradient.
    return t.sum() * 0.0


def _weights_tensor(weights: ClassWeights | Tensor, like: Tensor) -> Tensor:
    if isinstance(weights, ClassWeights):
        return torch.tensor(weights.weights, dtype=like.dtype, device=like.device)
    return weights.to(dtype=like.dtype, device=like.device)


def weighted_cross_entropy(
    expr_logits: Tensor,
    labels: Tensor,
    valid: Tensor,
    weights: ClassWeights | Tensor,
) -> Tensor:
    """Class-weighted cross-entropy, averaged over the valid samples.

    Each valid sample contributes w[y] * (-log softmax(logits)[y]); invalid
    samples contribute nothing to the value or the gradient. Zero valid
    samples yield an exact zero.
    """
    if expr_logits.ndim != 2:
        raise ValueError("expr_logits must be (batch, classes)")
    if not bool(valid.any()):
        return _zero_like(expr_logits)
    w = _weights_tensor(weights, expr_logits)
    logits_v = expr_logits[valid]
    labels_v = labels[valid]
    log_probs = torch.log_softmax(logits_v, dim=1)
    nll = -log_probs[torch.arange(labels_v.shape[0], device=labels_v.device), labels_v]
    return (w[labels_v] * nll).mean()


def focal_loss(
    au_logits: Tensor,
    labels: Tensor,
    valid: Tensor,
    cfg: FocalConfig = FocalConfig(),
) -> Tensor:
    """Focal loss over valid (sample, AU) cells: mean of -(1-p_t)^g * log(p_t).

    p_t is the predicted probability of the true label (sigmoid(logit) for
    positives, its complement for negatives), clamped per cfg. Zero valid
    cells yield an exact zero.
    """
    if au_logits.shape != labels.shape or au_logits.shape != valid.shape:
        raise ValueError("au_logits, labels, and valid must share one shape")
    if not bool(valid.any()):
        return _zero_like(au_logits)
    p = torch.sigmoid(au_logits[valid])
    y = labels[valid]
    p_t = torch.where(y > 0, p, 1.0 - p)
    p_t = p_t.clamp(cfg.prob_clamp, 1.0 - cfg.prob_clamp)
    return (-((1.0 - p_t) ** cfg.gamma) * torch.log(p_t)).mean()


def ccc(pred: Tensor, target: Tensor) -> Tensor:
    """Concordance correlation coefficient with population (1/n) moments.

    Differentiable in pred and target. Two identical constant sequences
    (zero denominator) are perfect agreement, defined as 1.
    """
    if pred.shape != target.shape or pred.ndim != 1:
        raise ValueError("ccc expects two 1-d tensors of equal length")
    if pred.numel() < 2:
        raise ValueError("ccc needs at least 2 pairs")
    mx = pred.mean()
    my = target.mean()
    dx = pred - mx
    dy = target - my
    var_x = (dx * dx).mean()
    var_y = (dy * dy).mean()
    cov = (dx * dy).mean()
    denom = var_x + var_y + (mx - my) ** 2
    if denom.detach().item() == 0.0:
        return torch.ones((), dtype=pred.dtype, device=pred.device)
    return 2.0 * cov / denom


def ccc_loss(va_pred: Tensor, va_target: Tensor, valid: Tensor) -> Tensor:
    """1 - mean per-dimension CCC over the va-valid samples of the batch.

    Fewer than 2 valid pairs cannot define a CCC; the step then skips this
    term (exact zero, zero gradient).
    """
    if va_pred.ndim != 2 or va_pred.shape[1] != 2:
        raise ValueError("va_pred must be (batch, 2)")
    if int(valid.sum()) < 2:
        return _zero_like(va_pred)
    p = va_pred[valid]
    t = va_target[valid]
    return 1.0 - 0.5 * (ccc(p[:, 0], t[:, 0]) + ccc(p[:, 1], t[:, 1]))


@dataclass
class LossBreakdown:
    """Per-task loss terms, their sum, and which tasks the batch skipped."""

    l_expr: Tensor
    l_au: Tensor
    l_va: Tensor
    total: Tensor
    expr_empty: bool
    au_empty: bool
    va_empty: bool

    def scalars(self) -> dict[str, float]:
        return {
            "l_expr": float(self.l_expr.detach()),
            "l_au": float(self.l_au.detach()),
            "l_va": float(self.l_va.detach()),
            "total": float(self.total.detach()),
        }


def total_loss(
    expr_logits: Tensor,
    au_logits: Tensor,
    va_pred: Tensor,
    labels: BatchLabels,
    weights: ClassWeights | Tensor,
    cfg: FocalConfig = FocalConfig(),
) -> LossBreakdown:
    """Sum of the three task losses, each over its own valid subset.

    Raises DegenerateBatchError when no task has usable labels (the VA term
    needs at least 2 valid pairs).
    """
    expr_empty = not bool(labels.expr_valid.any())
    au_empty = not bool(labels.au_valid.any())
    va_empty = int(labels.va_valid.sum()) < 2
    if expr_empty and au_empty and va_empty:
        raise DegenerateBatchError("batch has no usable labels for any task")
    l_expr = weighted_cross_entropy(expr_logits, labels.expression, labels.expr_valid, weights)
    l_au = focal_loss(au_logits, labels.aus, labels.au_valid, cfg)
    l_va = ccc_loss(va_pred, labels.va, labels.va_valid)
    return LossBreakdown(
        l_expr=l_expr,
        l_au=l_au,
        l_va=l_va,
        total=l_expr + l_au + l_va,
        expr_empty=expr_empty,
        au_empty=au_empty,
        va_empty=va_empty,
    )
