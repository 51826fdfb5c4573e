"""Synthetic image/annotation fixtures.

The real challenge data cannot be redistributed, so tests and demos run on
generated images whose pixels encode their own labels: the expression class
sets a bright column band in channel 0, each AU toggles a row band in
channel 1, and the two halves of channel 2 carry the valence and arousal
values. Any model that can read coarse layout can fit these, which is
exactly what the training smoke tests need.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .annotations import (
    LABEL_SENTINEL,
    NUM_AUS,
    NUM_EXPRESSIONS,
    VA_SENTINEL,
    AffectSample,
    save_annotations,
)


def render_label_image(
    size: int,
    expression: int,
    aus: tuple[int, ...],
    valence: float,
    arousal: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Render one (size, size, 3) uint8 image encoding the given labels."""
    img = np.full((size, size, 3), 0.1, dtype=np.float64)
    band = size // NUM_EXPRESSIONS
    img[:, expression * band : (expression + 1) * band, 0] = 1.0
    row = size / NUM_AUS
    for i, bit in enumerate(aus):
        lo, hi = int(round(i * row)), int(round((i + 1) * row))
        img[lo:hi, :, 1] = 0.9 if bit == 1 else 0.1
    half = size // 2
    img[:, :half, 2] = (valence + 1.0) / 2.0
    img[:, half:, 2] = (arousal + 1.0) / 2.0
    if rng is not None:
        img = img + rng.normal(0.0, 0.01, img.shape)
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def generate_samples(
    n: int,
    seed: int = 0,
    invalid_fraction: float = 0.0,
) -> list[AffectSample]:
    """Draw random label triples; optionally sentinel-mask a fraction per task."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        valence, arousal = rng.uniform(-1.0, 1.0, size=2)
        expression = int(rng.integers(0, NUM_EXPRESSIONS))
        aus = tuple(int(b) for b in rng.integers(0, 2, size=NUM_AUS))
        if invalid_fraction and rng.random() < invalid_fraction:
            valence = arousal = VA_SENTINEL
        if invalid_fraction and rng.random() < invalid_fraction:
            expression = LABEL_SENTINEL
        if invalid_fraction and rng.random() < invalid_fraction:
            drop = rng.random(NUM_AUS) < 0.5
            aus = tuple(LABEL_SENTINEL if d else a for a, d in zip(aus, drop))
        samples.append(
            AffectSample.from_raw(f"img_{i:04d}.png", valence, arousal, expression, aus)
        )
    return samples


def generate_dataset(
    out_dir: str | Path,
    n: int,
    seed: int = 0,
    image_size: int = 32,
    invalid_fraction: float = 0.0,
) -> tuple[Path, Path]:
    """Write a synthetic dataset; returns (annotations_csv, images_dir).

    Images for sentinel-masked tasks are rendered from neutral stand-in
    values, mirroring real data where the picture exists but a label does not.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    samples = generate_samples(n, seed=seed, invalid_fraction=invalid_fraction)
    rng = np.random.default_rng(seed + 1)
    for s in samples:
        expression = s.expression if s.expr_valid else 0
        aus = tuple(a if ok else 0 for a, ok in zip(s.aus, s.au_valid))
        valence = s.valence if s.va_valid else 0.0
        arousal = s.arousal if s.va_valid else 0.0
        pixels = render_label_image(image_size, expression, aus, valence, arousal, rng)
        Image.fromarray(pixels, mode="RGB").save(images_dir / s.image_ref)
    annotations_path = out_dir / "annotations.csv"
    save_annotations(samples, annotations_path)
    return annotations_path, images_dir
