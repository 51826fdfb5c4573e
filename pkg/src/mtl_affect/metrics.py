"""Challenge-style evaluation: CCC per VA dimension, per-class and per-AU F1,
and the composite score summing the three task performances.

Evaluation runs over the full prediction set in one pass (unlike the
training loss, which sees one mini-batch at a time).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotations import AU_ORDER, NUM_AUS, NUM_EXPRESSIONS, AffectSample
from .records import FinalPrediction, PredictionRecord


class EvaluationError(ValueError):
    """Predictions cannot be scored against the given ground truth."""


def concordance_ccc(pred: Sequence[float], target: Sequence[float]) -> float:
    """Concordance correlation coefficient with population (1/n) moments.

    ccc = 2*cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))^2), in [-1, 1].
    Two identical constant sequences make the denominator zero; that case is
    perfect agreement and is defined as 1.
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("ccc expects two 1-d sequences of equal length")
    if x.size < 2:
        raise ValueError("ccc needs at least 2 pairs")
    mx = x.mean()
    my = y.mean()
    var_x = np.mean((x - mx) ** 2)
    var_y = np.mean((y - my) ** 2)
    cov = np.mean((x - mx) * (y - my))
    denom = var_x + var_y + (mx - my) ** 2
    if denom == 0.0:
        return 1.0
    return float(2.0 * cov / denom)


def f1_binary(pred: Sequence[int], truth: Sequence[int]) -> float:
    """F1 over the positive class; 0 when precision + recall is 0.

    The zero convention is strict: a class absent from both prediction and
    truth scores 0, never inflating an average.
    """
    p = np.asarray(pred, dtype=np.int64)
    t = np.asarray(truth, dtype=np.int64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError("f1_binary expects two 1-d sequences of equal length")
    if p.size == 0:
        raise ValueError("f1_binary over an empty sequence")
    tp = int(np.sum((p == 1) & (t == 1)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2.0 * tp / denom


def macro_f1_expr(
    pred_labels: Sequence[int], true_labels: Sequence[int]
) -> tuple[tuple[float, ...], float]:
    """One-vs-rest F1 per expression class plus their unweighted mean."""
    p = np.asarray(pred_labels, dtype=np.int64)
    t = np.asarray(true_labels, dtype=np.int64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError("macro_f1_expr expects two 1-d sequences of equal length")
    if p.size == 0:
        raise ValueError("macro_f1_expr over an empty sequence")
    per_class = tuple(
        f1_binary((p == k).astype(np.int64), (t == k).astype(np.int64))
        for k in range(NUM_EXPRESSIONS)
    )
    return per_class, float(np.mean(per_class))


@dataclass(frozen=True)
class EvalReport:
    """Per-task scores and the composite total.

    p_va averages the two CCCs, p_expr the eight expression F1s, p_au the
    twelve AU F1s; the total is their sum, so a perfect report totals 3.
    """

    ccc_valence: float
    ccc_arousal: float
    f1_expr: tuple[float, ...]
    f1_au: tuple[float, ...]

    @property
    def p_va(self) -> float:
        return 0.5 * (self.ccc_valence + self.ccc_arousal)

    @property
    def p_expr(self) -> float:
        return 0.125 * sum(self.f1_expr)

    @property
    def p_au(self) -> float:
        return sum(self.f1_au) / NUM_AUS

    @property
    def p_total(self) -> float:
        return self.p_va + self.p_expr + self.p_au

    def as_dict(self, expression_names: Sequence[str] | None = None) -> dict:
        """JSON-ready report carrying both [0,1] and x100 percent scales."""
        f1_expr = dict(
            zip(expression_names, self.f1_expr) if expression_names
            else ((str(k), v) for k, v in enumerate(self.f1_expr))
        )
        scale = {
            "ccc_valence": self.ccc_valence,
            "ccc_arousal": self.ccc_arousal,
            "f1_expr": f1_expr,
            "f1_au": {f"au{n}": v for n, v in zip(AU_ORDER, self.f1_au)},
            "p_va": self.p_va,
            "p_expr": self.p_expr,
            "p_au": self.p_au,
            "p_total": self.p_total,
        }

        def times_100(obj):
            if isinstance(obj, dict):
                return {k: times_100(v) for k, v in obj.items()}
            return 100.0 * obj

        return {"scale_01": scale, "percent": times_100(scale)}


def _va_of(pred) -> tuple[float, float]:
    if pred.valence is None or pred.arousal is None:
        raise EvaluationError(f"{pred.image_ref}: prediction carries no VA values")
    return pred.valence, pred.arousal


def _expr_label_of(pred) -> int:
    if isinstance(pred, FinalPrediction):
        return pred.expr_label
    if pred.expr_probs is None:
        raise EvaluationError(f"{pred.image_ref}: prediction carries no expression probabilities")
    return int(np.argmax(pred.expr_probs))


def _au_bits_of(pred, threshold: float) -> tuple[int, ...]:
    if isinstance(pred, FinalPrediction):
        return pred.au_labels
    if pred.au_probs is None:
        raise EvaluationError(f"{pred.image_ref}: prediction carries no AU probabilities")
    return tuple(int(p >= threshold) for p in pred.au_probs)


def evaluate(
    preds: Sequence[PredictionRecord] | Sequence[FinalPrediction],
    truth: Sequence[AffectSample],
    au_threshold: float = 0.5,
) -> EvalReport:
    """Score predictions against ground truth, masking invalid labels.

    Predictions may be probability records (expression decided by argmax,
    AUs by threshold) or already-decided final predictions. Alignment is by
    image_ref; every truth sample must have exactly one prediction. Pairs
    are reduced in image_ref order, so the report is exactly independent of
    input ordering.
    """
    by_ref: dict[str, object] = {}
    for p in preds:
        if p.image_ref in by_ref:
            raise EvaluationError(f"duplicate prediction for {p.image_ref}")
        by_ref[p.image_ref] = p

    va_p: list[tuple[float, float]] = []
    va_t: list[tuple[float, float]] = []
    expr_p: list[int] = []
    expr_t: list[int] = []
    au_p: list[tuple[int, ...]] = []
    au_t: list[tuple[int, ...]] = []
    au_mask: list[tuple[bool, ...]] = []

    for sample in sorted(truth, key=lambda s: s.image_ref):
        pred = by_ref.get(sample.image_ref)
        if pred is None:
            raise EvaluationError(f"no prediction for {sample.image_ref}")
        if sample.va_valid:
            va_p.append(_va_of(pred))
            va_t.append((sample.valence, sample.arousal))
        if sample.expr_valid:
            expr_p.append(_expr_label_of(pred))
            expr_t.append(sample.expression)
        if any(sample.au_valid):
            au_p.append(_au_bits_of(pred, au_threshold))
            au_t.append(sample.aus)
            au_mask.append(sample.au_valid)

    if len(va_p) < 2:
        raise EvaluationError("va task: fewer than 2 valid pairs after masking")
    if not expr_p:
        raise EvaluationError("expr task: no valid labels after masking")
    if not au_p:
        raise EvaluationError("au task: no valid labels after masking")

    va_p_arr = np.asarray(va_p, dtype=np.float64)
    va_t_arr = np.asarray(va_t, dtype=np.float64)
    ccc_v = concordance_ccc(va_p_arr[:, 0], va_t_arr[:, 0])
    ccc_a = concordance_ccc(va_p_arr[:, 1], va_t_arr[:, 1])

    f1_expr, _ = macro_f1_expr(expr_p, expr_t)

    au_p_arr = np.asarray(au_p, dtype=np.int64)
    au_t_arr = np.asarray(au_t, dtype=np.int64)
    mask_arr = np.asarray(au_mask, dtype=bool)
    f1_au = []
    for i in range(NUM_AUS):
        m = mask_arr[:, i]
        if not m.any():
            raise EvaluationError(f"au task: AU{AU_ORDER[i]} has no valid labels after masking")
        f1_au.append(f1_binary(au_p_arr[m, i], au_t_arr[m, i]))

    return EvalReport(
        ccc_valence=ccc_v,
        ccc_arousal=ccc_a,
        f1_expr=f1_expr,
        f1_au=tuple(f1_au),
    )
