"""Annotation ingestion: label parsing, validity masking, and class statistics.

Labels arrive in a CSV with one row per image. Missing annotations are
marked with sentinel values (-5 for the valence/arousal pair, -1 for the
expression class and for individual action units). Sentinels are normalized
into validity flags here, once, at load time; downstream code reads the
flags and never compares against raw sentinel values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

VA_SENTINEL = -5.0
LABEL_SENTINEL = -1

# Action units annotated in the data, in fixed column order.
AU_ORDER = (1, 2, 4, 6, 7, 10, 12, 15, 23, 24, 25, 26)
NUM_AUS = len(AU_ORDER)
NUM_EXPRESSIONS = 8

# Declared convention for the 8 class ids: 0 = neutral, 1-6 = the six basic
# expressions in the dataset's canonical order, 7 = other. Display-only;
# overridable where reports are rendered.
EXPRESSION_NAMES = (
    "neutral",
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
    "other",
)

ANNOTATION_HEADER = (
    "image",
    "valence",
    "arousal",
    "expression",
    *(f"au{n}" for n in AU_ORDER),
)


class AnnotationError(ValueError):
    """Malformed annotation file or annotation values out of contract."""


@dataclass(frozen=True)
class AffectSample:
    """One image's annotation triple with per-task validity flags.

    Invalid entries hold their sentinel values (-5.0 for the VA pair, -1 for
    expression and AUs) so that writing samples back to CSV round-trips.
    """

    image_ref: str
    valence: float
    arousal: float
    expression: int
    aus: tuple[int, ...]
    va_valid: bool
    expr_valid: bool
    au_valid: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.aus) != NUM_AUS or len(self.au_valid) != NUM_AUS:
            raise AnnotationError(
                f"expected {NUM_AUS} AU labels, got {len(self.aus)}"
            )
        if self.va_valid:
            if not (-1.0 <= self.valence <= 1.0 and -1.0 <= self.arousal <= 1.0):
                raise AnnotationError(
                    f"valid VA pair out of [-1, 1]: ({self.valence}, {self.arousal})"
                )
        elif self.valence != VA_SENTINEL or self.arousal != VA_SENTINEL:
            raise AnnotationError("invalid VA pair must hold the -5 sentinel")
        if self.expr_valid:
            if not 0 <= self.expression < NUM_EXPRESSIONS:
                raise AnnotationError(f"expression id out of range: {self.expression}")
        elif self.expression != LABEL_SENTINEL:
            raise AnnotationError("invalid expression must hold the -1 sentinel")
        for i, (au, ok) in enumerate(zip(self.aus, self.au_valid)):
            if ok and au not in (0, 1):
                raise AnnotationError(f"valid AU {AU_ORDER[i]} must be 0 or 1, got {au}")
            if not ok and au != LABEL_SENTINEL:
                raise AnnotationError(f"invalid AU {AU_ORDER[i]} must hold the -1 sentinel")

    @classmethod
    def from_raw(
        cls,
        image_ref: str,
        valence: float,
        arousal: float,
        expression: int,
        aus: Sequence[int],
    ) -> "AffectSample":
        """Build a sample from raw label values, normalizing sentinels.

        A -5 in either VA field invalidates the pair (both fields are then
        stored as -5). Expression and AUs are masked individually.
        """
        va_valid = valence != VA_SENTINEL and arousal != VA_SENTINEL
        if not va_valid:
            valence = arousal = VA_SENTINEL
        expr_valid = expression != LABEL_SENTINEL
        au_valid = tuple(au != LABEL_SENTINEL for au in aus)
        return cls(
            image_ref=image_ref,
            valence=float(valence),
            arousal=float(arousal),
            expression=int(expression),
            aus=tuple(int(a) for a in aus),
            va_valid=va_valid,
            expr_valid=expr_valid,
            au_valid=au_valid,
        )


@dataclass(frozen=True)
class DatasetStats:
    """Per-task label counts over the valid entries of a sample set."""

    n_samples: int
    n_va_valid: int
    n_expr_valid: int
    expr_counts: tuple[int, ...]
    au_pos_counts: tuple[int, ...]
    au_valid_counts: tuple[int, ...]


@dataclass(frozen=True)
class ClassWeights:
    """Inverse-frequency weights for the 8 expression classes."""

    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.weights) != NUM_EXPRESSIONS:
            raise ValueError(f"expected {NUM_EXPRESSIONS} weights")
        if any(w <= 0 for w in self.weights):
            raise ValueError("class weights must be strictly positive")

    @classmethod
    def uniform(cls) -> "ClassWeights":
        return cls(weights=(1.0,) * NUM_EXPRESSIONS)


def _parse_float(text: str, line_no: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise AnnotationError(
            f"line {line_no}: non-numeric {column} value {text!r}"
        ) from None


def _parse_int(text: str, line_no: int, column: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise AnnotationError(
            f"line {line_no}: non-integer {column} value {text!r}"
        ) from None


def _check_va(value: float, line_no: int, column: str) -> float:
    if value != VA_SENTINEL and not -1.0 <= value <= 1.0:
        raise AnnotationError(
            f"line {line_no}: {column} value {value} outside [-1, 1] and not the -5 sentinel"
        )
    return value


def load_annotations(path: str | Path) -> list[AffectSample]:
    """Parse an annotation CSV into samples with normalized validity flags.

    Raises AnnotationError on a bad header, wrong column count,
    non-numeric fields, out-of-range non-sentinel values, or an empty file;
    messages name the offending file line.
    """
    path = Path(path)
    samples: list[AffectSample] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise AnnotationError(f"{path}: empty annotation file") from None
        if tuple(header) != ANNOTATION_HEADER:
            raise AnnotationError(
                f"{path}: unexpected header {header!r}; expected {','.join(ANNOTATION_HEADER)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(ANNOTATION_HEADER):
                raise AnnotationError(
                    f"line {line_no}: expected {len(ANNOTATION_HEADER)} columns, got {len(row)}"
                )
            valence = _check_va(_parse_float(row[1], line_no, "valence"), line_no, "valence")
            arousal = _check_va(_parse_float(row[2], line_no, "arousal"), line_no, "arousal")
            expression = _parse_int(row[3], line_no, "expression")
            if expression != LABEL_SENTINEL and not 0 <= expression < NUM_EXPRESSIONS:
                raise AnnotationError(
                    f"line {line_no}: expression {expression} outside 0-7 and not the -1 sentinel"
                )
            aus = []
            for col, text in zip(ANNOTATION_HEADER[4:], row[4:]):
                au = _parse_int(text, line_no, col)
                if au not in (0, 1, LABEL_SENTINEL):
                    raise AnnotationError(
                        f"line {line_no}: {col} value {au} not in {{0, 1, -1}}"
                    )
                aus.append(au)
            samples.append(
                AffectSample.from_raw(row[0], valence, arousal, expression, aus)
            )
    if not samples:
        raise AnnotationError(f"{path}: no annotation rows")
    return samples


def save_annotations(samples: Iterable[AffectSample], path: str | Path) -> None:
    """Write samples back to the annotation CSV schema.

    Sentinels are emitted for invalid entries, and floats use repr so a
    reload reproduces the fields bit for bit.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_HEADER)
        for s in samples:
            writer.writerow(
                [s.image_ref, repr(s.valence), repr(s.arousal), s.expression, *s.aus]
            )


def compute_stats(samples: Sequence[AffectSample]) -> DatasetStats:
    """Tally per-task valid-label counts over a sample sequence."""
    if not samples:
        raise ValueError("cannot compute statistics over an empty sample set")
    expr_counts = [0] * NUM_EXPRESSIONS
    au_pos = [0] * NUM_AUS
    au_valid = [0] * NUM_AUS
    n_va = 0
    n_expr = 0
    for s in samples:
        if s.va_valid:
            n_va += 1
        if s.expr_valid:
            n_expr += 1
            expr_counts[s.expression] += 1
        for i in range(NUM_AUS):
            if s.au_valid[i]:
                au_valid[i] += 1
                au_pos[i] += s.aus[i]
    return DatasetStats(
        n_samples=len(samples),
        n_va_valid=n_va,
        n_expr_valid=n_expr,
        expr_counts=tuple(expr_counts),
        au_pos_counts=tuple(au_pos),
        au_valid_counts=tuple(au_valid),
    )


def compute_class_weights(
    stats: DatasetStats, merge_empty_into_other: bool = False
) -> ClassWeights:
    """Inverse-frequency expression weights: total valid count / class count.

    A zero-count class is a data bug and raises by default. With
    merge_empty_into_other=True an empty class borrows the weight of class 7
    ("other"); since no sample realizes the empty class, the borrowed weight
    never enters a loss value.
    """
    total = stats.n_expr_valid
    empty = [k for k, c in enumerate(stats.expr_counts) if c == 0]
    if empty and not merge_empty_into_other:
        raise ValueError(
            f"expression classes with zero valid samples: {empty}; "
            "pass merge_empty_into_other=True (CLI: --merge-empty-expr) to fold "
            "them into class 7, or fix the split"
        )
    if merge_empty_into_other and stats.expr_counts[7] == 0:
        raise ValueError('cannot merge empty classes: class 7 ("other") is itself empty')
    weights = [
        total / c if c > 0 else total / stats.expr_counts[7]
        for c in stats.expr_counts
    ]
    return ClassWeights(weights=tuple(weights))


def stats_report(stats: DatasetStats) -> str:
    """Render stats as the key=value report emitted by the ingest command."""
    lines = [
        f"n_samples={stats.n_samples}",
        f"n_va_valid={stats.n_va_valid}",
        f"n_expr_valid={stats.n_expr_valid}",
    ]
    for k in range(NUM_EXPRESSIONS):
        lines.append(f"expr_count_{k}_{EXPRESSION_NAMES[k]}={stats.expr_counts[k]}")
    for i, n in enumerate(AU_ORDER):
        lines.append(f"au{n}_pos={stats.au_pos_counts[i]}")
        lines.append(f"au{n}_valid={stats.au_valid_counts[i]}")
    return "\n".join(lines) + "\n"
