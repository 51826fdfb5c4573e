"""Prediction records and their CSV serialization.

Two record kinds flow through the pipeline: probability records produced by
model inference (the fusion inputs), and decided final predictions produced
by fusion. Probability records use a wide CSV with one column per class/AU
probability; final predictions are written in the annotation schema so they
can be diffed against, or even reloaded as, ground-truth files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .annotations import ANNOTATION_HEADER, AU_ORDER, NUM_AUS, NUM_EXPRESSIONS

PREDICTIONS_HEADER = (
    "image",
    "valence",
    "arousal",
    *(f"expr_p{k}" for k in range(NUM_EXPRESSIONS)),
    *(f"au_p{n}" for n in AU_ORDER),
)


@dataclass(frozen=True)
class PredictionRecord:
    """Per-sample model outputs; fields are None for tasks the model lacks."""

    image_ref: str
    valence: float | None = None
    arousal: float | None = None
    expr_probs: tuple[float, ...] | None = None
    au_probs: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if (self.valence is None) != (self.arousal is None):
            raise ValueError("valence and arousal must be present together")
        if self.expr_probs is not None and len(self.expr_probs) != NUM_EXPRESSIONS:
            raise ValueError(f"expected {NUM_EXPRESSIONS} expression probabilities")
        if self.au_probs is not None and len(self.au_probs) != NUM_AUS:
            raise ValueError(f"expected {NUM_AUS} AU probabilities")

    @property
    def has_va(self) -> bool:
        return self.valence is not None


@dataclass(frozen=True)
class FinalPrediction:
    """Fused, decided labels for one sample; fused probabilities kept alongside."""

    image_ref: str
    valence: float
    arousal: float
    expr_label: int
    au_labels: tuple[int, ...]
    expr_probs: tuple[float, ...] | None = None
    au_probs: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not -1.0 <= self.valence <= 1.0 or not -1.0 <= self.arousal <= 1.0:
            raise ValueError("fused VA values must lie in [-1, 1]")
        if not 0 <= self.expr_label < NUM_EXPRESSIONS:
            raise ValueError(f"expression label out of range: {self.expr_label}")
        if len(self.au_labels) != NUM_AUS or any(b not in (0, 1) for b in self.au_labels):
            raise ValueError("au_labels must be twelve 0/1 decisions")


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_predictions_csv(
    records: Iterable[PredictionRecord], path: str | Path
) -> None:
    """Write probability records; absent task fields become empty cells."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for r in records:
            expr = r.expr_probs if r.expr_probs is not None else (None,) * NUM_EXPRESSIONS
            au = r.au_probs if r.au_probs is not None else (None,) * NUM_AUS
            writer.writerow(
                [r.image_ref, _fmt(r.valence), _fmt(r.arousal)]
                + [_fmt(p) for p in expr]
                + [_fmt(p) for p in au]
            )


def read_predictions_csv(path: str | Path) -> list[PredictionRecord]:
    path = Path(path)
    records: list[PredictionRecord] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PREDICTIONS_HEADER:
            raise ValueError(f"{path}: not a predictions CSV (bad header)")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PREDICTIONS_HEADER):
                raise ValueError(
                    f"{path} line {line_no}: expected {len(PREDICTIONS_HEADER)} columns"
                )
            va = row[1:3]
            expr = row[3 : 3 + NUM_EXPRESSIONS]
            au = row[3 + NUM_EXPRESSIONS :]
            records.append(
                PredictionRecord(
                    image_ref=row[0],
                    valence=float(va[0]) if va[0] else None,
                    arousal=float(va[1]) if va[1] else None,
                    expr_probs=tuple(float(p) for p in expr) if all(expr) else None,
                    au_probs=tuple(float(p) for p in au) if all(au) else None,
                )
            )
    return records


def merge_prediction_records(
    record_sets: Sequence[Sequence[PredictionRecord]],
) -> list[PredictionRecord]:
    """Combine record sets covering disjoint tasks over the same samples.

    Used to stitch several single-task prediction files into one stream;
    overlapping task fields or mismatched sample sets are errors.
    """
    if not record_sets:
        raise ValueError("no record sets to merge")
    merged = {r.image_ref: r for r in record_sets[0]}
    order = [r.image_ref for r in record_sets[0]]
    for records in record_sets[1:]:
        if {r.image_ref for r in records} != set(order):
            raise ValueError("prediction sets cover different samples")
        for r in records:
            base = merged[r.image_ref]
            if r.has_va and base.has_va:
                raise ValueError(f"{r.image_ref}: VA predicted by more than one set")
            if r.expr_probs is not None and base.expr_probs is not None:
                raise ValueError(f"{r.image_ref}: expression predicted by more than one set")
            if r.au_probs is not None and base.au_probs is not None:
                raise ValueError(f"{r.image_ref}: AUs predicted by more than one set")
            merged[r.image_ref] = PredictionRecord(
                image_ref=r.image_ref,
                valence=r.valence if r.has_va else base.valence,
                arousal=r.arousal if r.has_va else base.arousal,
                expr_probs=r.expr_probs if r.expr_probs is not None else base.expr_probs,
                au_probs=r.au_probs if r.au_probs is not None else base.au_probs,
            )
    return [merged[ref] for ref in order]


def write_final_csv(finals: Iterable[FinalPrediction], path: str | Path) -> None:
    """Write decided labels in the annotation schema (always-valid rows)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_HEADER)
        for f in finals:
            writer.writerow(
                [f.image_ref, repr(f.valence), repr(f.arousal), f.expr_label, *f.au_labels]
            )


def sniff_prediction_csv(path: str | Path) -> str:
    """Return "probabilities" or "decided" depending on the file's header."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = tuple(next(csv.reader(fh), ()))
    if header == PREDICTIONS_HEADER:
        return "probabilities"
    if header == ANNOTATION_HEADER:
        return "decided"
    raise ValueError(f"{path}: header matches neither prediction schema")
