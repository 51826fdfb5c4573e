"""Annotation parsing, sentinel masking, statistics, and class weights."""

from __future__ import annotations

import numpy as np
import pytest

from mtl_affect.annotations import (
    ANNOTATION_HEADER,
    AU_ORDER,
    NUM_AUS,
    NUM_EXPRESSIONS,
    AffectSample,
    AnnotationError,
    ClassWeights,
    DatasetStats,
    compute_class_weights,
    compute_stats,
    load_annotations,
    save_annotations,
    stats_report,
)
from conftest import random_sample

HEADER_LINE = ",".join(ANNOTATION_HEADER)


def write_csv(tmp_path, rows, header=HEADER_LINE):
    path = tmp_path / "ann.csv"
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
    return path


class TestLoadAnnotations:
    def test_fully_valid_row(self, tmp_path):
        path = write_csv(tmp_path, ["img1.jpg,0.5,-0.2,3,1,0,0,1,0,0,1,0,0,0,1,0"])
        (s,) = load_annotations(path)
        assert s.image_ref == "img1.jpg"
        assert s.va_valid and s.valence == 0.5 and s.arousal == -0.2
        assert s.expr_valid and s.expression == 3
        assert all(s.au_valid)
        assert s.aus == (1, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0)

    def test_va_sentinel_masks_pair(self, tmp_path):
        path = write_csv(tmp_path, ["a.jpg,-5,-5,3,1,0,0,1,0,0,1,0,0,0,1,0"])
        (s,) = load_annotations(path)
        assert not s.va_valid
        assert s.valence == -5.0 and s.arousal == -5.0
        assert s.expr_valid

    def test_expr_and_au_sentinels_leave_va_usable(self, tmp_path):
        path = write_csv(tmp_path, ["a.jpg,0.1,0.2,-1," + ",".join(["-1"] * NUM_AUS)])
        (s,) = load_annotations(path)
        assert s.va_valid and not s.expr_valid
        assert not any(s.au_valid)
        assert s.expression == -1 and set(s.aus) == {-1}

    def test_mixed_au_validity_within_row(self, tmp_path):
        path = write_csv(tmp_path, ["a.jpg,0.0,0.0,0,1,-1,0,-1,1,0,1,0,-1,0,1,0"])
        (s,) = load_annotations(path)
        assert s.au_valid == (True, False, True, False, True, True, True, True, False, True, True, True)

    def test_wrong_column_count_names_line(self, tmp_path):
        path = write_csv(tmp_path, ["a.jpg,0.0,0.0,0,1,0,0,1,0,0,1,0,0,0,1,0", "b.jpg,0.1,0.1,1"])
        with pytest.raises(AnnotationError, match="line 3"):
            load_annotations(path)

    def test_non_numeric_field_names_line(self, tmp_path):
        path = write_csv(tmp_path, ["a.jpg,zap,0.0,0,1,0,0,1,0,0,1,0,0,0,1,0"])
        with pytest.raises(AnnotationError, match="line 2.*valence"):
            load_annotations(path)

    def test_out_of_range_non_sentinel_rejected(self, tmp_path):
        path = write_csv(tmp_path, ["a.jpg,-1.5,0.0,0,1,0,0,1,0,0,1,0,0,0,1,0"])
        with pytest.raises(AnnotationError, match="line 2"):
            load_annotations(path)
        path = write_csv(tmp_path, ["a.jpg,0.0,0.0,9,1,0,0,1,0,0,1,0,0,0,1,0"])
        with pytest.raises(AnnotationError, match="expression 9"):
            load_annotations(path)
        path = write_csv(tmp_path, ["a.jpg,0.0,0.0,0,2,0,0,1,0,0,1,0,0,0,1,0"])
        with pytest.raises(AnnotationError, match="au1"):
            load_annotations(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(AnnotationError, match="empty"):
            load_annotations(path)
        # Header but no rows is just as unusable.
        path.write_text(HEADER_LINE + "\n", encoding="utf-8")
        with pytest.raises(AnnotationError, match="no annotation rows"):
            load_annotations(path)

    def test_bad_header_rejected(self, tmp_path):
        path = write_csv(tmp_path, ["a.jpg,0,0,0,1,0,0,1,0,0,1,0,0,0,1,0"], header="image,valence")
        with pytest.raises(AnnotationError, match="header"):
            load_annotations(path)


def test_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(7)
    samples = [random_sample(rng, f"img_{i}.png", invalid_rate=0.3) for i in range(200)]
    path = tmp_path / "out.csv"
    save_annotations(samples, path)
    assert load_annotations(path) == samples


class TestComputeStats:
    def test_single_class(self):
        samples = [
            AffectSample.from_raw(f"{i}", 0.0, 0.0, 0, (0,) * NUM_AUS) for i in range(10)
        ]
        stats = compute_stats(samples)
        assert stats.expr_counts == (10, 0, 0, 0, 0, 0, 0, 0)
        assert stats.n_expr_valid == 10

    def test_au_counting_with_sentinels(self):
        au_rows = [(1,), (0,), (-1,), (1,)]
        samples = [
            AffectSample.from_raw(f"{i}", 0.0, 0.0, 0, row + (0,) * (NUM_AUS - 1))
            for i, row in enumerate(au_rows)
        ]
        stats = compute_stats(samples)
        assert stats.au_pos_counts[0] == 2
        assert stats.au_valid_counts[0] == 3

    def test_matches_independent_tally(self, rng):
        samples = [random_sample(rng, f"{i}", invalid_rate=0.4) for i in range(100)]
        stats = compute_stats(samples)
        # Brute-force recount, one pass per quantity.
        assert stats.n_samples == 100
        assert stats.n_va_valid == sum(1 for s in samples if s.va_valid)
        assert stats.n_expr_valid == sum(1 for s in samples if s.expr_valid)
        for k in range(NUM_EXPRESSIONS):
            assert stats.expr_counts[k] == sum(
                1 for s in samples if s.expr_valid and s.expression == k
            )
        for i in range(NUM_AUS):
            assert stats.au_valid_counts[i] == sum(1 for s in samples if s.au_valid[i])
            assert stats.au_pos_counts[i] == sum(
                1 for s in samples if s.au_valid[i] and s.aus[i] == 1
            )
        assert sum(stats.expr_counts) == stats.n_expr_valid

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            compute_stats([])


def make_stats(expr_counts):
    total = sum(expr_counts)
    return DatasetStats(
        n_samples=total,
        n_va_valid=0,
        n_expr_valid=total,
        expr_counts=tuple(expr_counts),
        au_pos_counts=(0,) * NUM_AUS,
        au_valid_counts=(0,) * NUM_AUS,
    )


class TestClassWeights:
    def test_uniform_counts_give_eight(self):
        w = compute_class_weights(make_stats((100,) * 8))
        assert w.weights == (8.0,) * 8

    def test_weights_are_total_over_count(self):
        counts = (700, 100, 100, 100, 100, 100, 100, 100)
        w = compute_class_weights(make_stats(counts))
        total = sum(counts)
        assert w.weights == tuple(total / c for c in counts)
        assert w.weights[1] == pytest.approx(14.0)

    def test_rarest_class_gets_largest_weight(self, rng):
        for _ in range(20):
            counts = tuple(int(c) for c in rng.integers(1, 1000, size=8))
            w = compute_class_weights(make_stats(counts))
            assert np.argmax(w.weights) == np.argmin(counts)

    def test_scaling_counts_leaves_weights_unchanged(self):
        counts = (5, 10, 20, 40, 80, 160, 320, 640)
        w1 = compute_class_weights(make_stats(counts))
        w2 = compute_class_weights(make_stats(tuple(7 * c for c in counts)))
        assert w1.weights == w2.weights

    def test_zero_count_class_fails_loudly(self):
        with pytest.raises(ValueError, match="zero valid samples"):
            compute_class_weights(make_stats((700, 100, 0, 100, 100, 100, 100, 100)))

    def test_zero_count_class_can_borrow_other_weight(self):
        counts = (700, 100, 0, 100, 100, 100, 100, 100)
        w = compute_class_weights(make_stats(counts), merge_empty_into_other=True)
        assert w.weights[2] == w.weights[7]

    def test_weights_must_be_positive(self):
        with pytest.raises(ValueError):
            ClassWeights(weights=(1.0,) * 7 + (0.0,))


def test_stats_report_is_key_value(tmp_path):
    samples = [AffectSample.from_raw("a", 0.0, 0.0, 2, (1,) * NUM_AUS)]
    report = stats_report(compute_stats(samples))
    assert "n_samples=1" in report
    assert "expr_count_2_disgust=1" in report
    assert f"au{AU_ORDER[0]}_pos=1" in report
