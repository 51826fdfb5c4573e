"""Late fusion of single-task and multi-task predictions.

Per task, the fused prediction is the convex combination
lam * single + (1 - lam) * multi, applied elementwise to VA values and to
the expression/AU probability vectors. Discrete decisions are then argmax
for the expression and a probability threshold for each AU. The per-task
lambda can also be grid-searched against labeled validation data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import metrics
from .annotations import NUM_AUS, AffectSample
from .records import FinalPrediction, PredictionRecord

DEFAULT_AU_THRESHOLD = 0.5


class FusionError(ValueError):
    """Prediction streams cannot be fused as requested."""


@dataclass(frozen=True)
class FusionWeights:
    """Per-task weight on the single-task stream; the multi stream gets 1 - lam."""

    lambda_va: float = 0.4
    lambda_expr: float = 0.6
    lambda_au: float = 0.6

    def __post_init__(self) -> None:
        for name, lam in (
            ("lambda_va", self.lambda_va),
            ("lambda_expr", self.lambda_expr),
            ("lambda_au", self.lambda_au),
        ):
            if not 0.0 <= lam <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {lam}")


def _mix(s: float, m: float, lam: float) -> float:
    # lam*s + (1-lam)*m, written so identical streams fuse to bitwise-identical
    # values at every lam (s == m makes the correction term exactly zero).
    return m + lam * (s - m)


def _combine(single, multi, lam: float, task: str, ref: str):
    """Convex combination of one task's values; endpoints tolerate a missing side."""
    if lam == 1.0:
        if single is None:
            raise FusionError(f"{ref}: single stream lacks {task} needed at lambda=1")
        return single
    if lam == 0.0:
        if multi is None:
            raise FusionError(f"{ref}: multi stream lacks {task} needed at lambda=0")
        return multi
    if single is None or multi is None:
        raise FusionError(
            f"{ref}: both streams must predict {task} for 0 < lambda < 1"
        )
    if isinstance(single, tuple):
        return tuple(_mix(s, m, lam) for s, m in zip(single, multi))
    return _mix(single, multi, lam)


def fuse(
    single: PredictionRecord,
    multi: PredictionRecord,
    weights: FusionWeights = FusionWeights(),
    au_threshold: float = DEFAULT_AU_THRESHOLD,
) -> FinalPrediction:
    """Fuse two aligned records and decide final labels."""
    if single.image_ref != multi.image_ref:
        raise FusionError(
            f"sample misalignment: {single.image_ref!r} vs {multi.image_ref!r}"
        )
    ref = single.image_ref
    valence = _combine(single.valence, multi.valence, weights.lambda_va, "va", ref)
    arousal = _combine(single.arousal, multi.arousal, weights.lambda_va, "va", ref)
    expr_probs = _combine(single.expr_probs, multi.expr_probs, weights.lambda_expr, "expr", ref)
    au_probs = _combine(single.au_probs, multi.au_probs, weights.lambda_au, "au", ref)
    return FinalPrediction(
        image_ref=ref,
        valence=valence,
        arousal=arousal,
        expr_label=int(np.argmax(expr_probs)),
        au_labels=tuple(int(p >= au_threshold) for p in au_probs),
        expr_probs=tuple(expr_probs),
        au_probs=tuple(au_probs),
    )


def _aligned_pairs(
    singles: Sequence[PredictionRecord], multis: Sequence[PredictionRecord]
) -> list[tuple[PredictionRecord, PredictionRecord]]:
    by_ref = {m.image_ref: m for m in multis}
    if len(by_ref) != len(multis):
        raise FusionError("duplicate image_ref in multi predictions")
    if {s.image_ref for s in singles} != set(by_ref):
        raise FusionError("single and multi predictions cover different samples")
    return [(s, by_ref[s.image_ref]) for s in singles]


def fuse_all(
    singles: Sequence[PredictionRecord],
    multis: Sequence[PredictionRecord],
    weights: FusionWeights = FusionWeights(),
    au_threshold: float = DEFAULT_AU_THRESHOLD,
) -> list[FinalPrediction]:
    """Fuse aligned prediction sets, preserving the single stream's order."""
    return [fuse(s, m, weights, au_threshold) for s, m in _aligned_pairs(singles, multis)]


def lambda_grid(step: float) -> list[float]:
    """The scanned weights {0, step, 2*step, ..., 1}."""
    if not 0.0 < step <= 0.5:
        raise ValueError("grid step must lie in (0, 0.5]")
    grid = []
    k = 0
    while k * step < 1.0 - 1e-12:
        grid.append(round(k * step, 12))
        k += 1
    grid.append(1.0)
    return grid


def _pick_lambda(grid: Sequence[float], scores: Sequence[float]) -> float:
    best = max(scores)
    candidates = [lam for lam, s in zip(grid, scores) if s == best]
    # Ties break toward 0.5; an exact-distance tie takes the smaller weight.
    return min(candidates, key=lambda lam: (abs(lam - 0.5), lam))


def search_lambda(
    singles: Sequence[PredictionRecord],
    multis: Sequence[PredictionRecord],
    truth: Sequence[AffectSample],
    step: float,
    au_threshold: float = DEFAULT_AU_THRESHOLD,
) -> tuple[FusionWeights, list[dict]]:
    """Grid-search each task's lambda against validation labels.

    Each task is scanned independently: mean CCC for VA, macro F1 for the
    expression, mean per-AU F1 for AUs. Returns the winning weights plus the
    full per-lambda score table.
    """
    grid = lambda_grid(step)
    pairs = _aligned_pairs(singles, multis)
    truth_by_ref = {t.image_ref: t for t in truth}
    missing = [s.image_ref for s, _ in pairs if s.image_ref not in truth_by_ref]
    if missing:
        raise FusionError(f"no ground truth for predictions: {missing[:3]}")

    va_rows = []
    expr_rows = []
    au_rows = []
    for s, m in pairs:
        t = truth_by_ref[s.image_ref]
        if t.va_valid:
            if not (s.has_va and m.has_va):
                raise FusionError(f"{s.image_ref}: both streams must predict va to search lambda")
            va_rows.append(((s.valence, s.arousal), (m.valence, m.arousal), (t.valence, t.arousal)))
        if t.expr_valid:
            if s.expr_probs is None or m.expr_probs is None:
                raise FusionError(f"{s.image_ref}: both streams must predict expr to search lambda")
            expr_rows.append((s.expr_probs, m.expr_probs, t.expression))
        if any(t.au_valid):
            if s.au_probs is None or m.au_probs is None:
                raise FusionError(f"{s.image_ref}: both streams must predict au to search lambda")
            au_rows.append((s.au_probs, m.au_probs, t.aus, t.au_valid))
    if len(va_rows) < 2 or not expr_rows or not au_rows:
        raise FusionError("validation set leaves a task empty after masking")

    va_scores = []
    expr_scores = []
    au_scores = []
    table = []
    for lam in grid:
        sv = np.array([r[0] for r in va_rows])
        mv = np.array([r[1] for r in va_rows])
        tv = np.array([r[2] for r in va_rows])
        fused_va = mv + lam * (sv - mv)
        ccc_mean = 0.5 * (
            metrics.concordance_ccc(fused_va[:, 0], tv[:, 0])
            + metrics.concordance_ccc(fused_va[:, 1], tv[:, 1])
        )

        pred_labels = [
            int(np.argmax(np.asarray(mp) + lam * (np.asarray(sp) - np.asarray(mp))))
            for sp, mp, _ in expr_rows
        ]
        _, f1_expr_mean = metrics.macro_f1_expr(pred_labels, [t for _, _, t in expr_rows])

        f1s = []
        for i in range(NUM_AUS):
            p_bits = []
            t_bits = []
            for sp, mp, aus, valid in au_rows:
                if valid[i]:
                    fused_p = _mix(sp[i], mp[i], lam)
                    p_bits.append(int(fused_p >= au_threshold))
                    t_bits.append(aus[i])
            if p_bits:
                f1s.append(metrics.f1_binary(p_bits, t_bits))
        f1_au_mean = float(np.mean(f1s))

        va_scores.append(ccc_mean)
        expr_scores.append(f1_expr_mean)
        au_scores.append(f1_au_mean)
        table.append(
            {
                "lambda": lam,
                "ccc_mean": ccc_mean,
                "f1_expr_mean": f1_expr_mean,
                "f1_au_mean": f1_au_mean,
            }
        )

    weights = FusionWeights(
        lambda_va=_pick_lambda(grid, va_scores),
        lambda_expr=_pick_lambda(grid, expr_scores),
        lambda_au=_pick_lambda(grid, au_scores),
    )
    return weights, table
