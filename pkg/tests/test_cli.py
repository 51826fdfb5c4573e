"""Command-line surface: ingest, config handling, fuse, evaluate."""

from __future__ import annotations

import json

import numpy as np
import pytest

from mtl_affect.annotations import save_annotations
from mtl_affect.cli import main
from mtl_affect.records import PredictionRecord, write_predictions_csv
from mtl_affect.synthetic import generate_samples
from conftest import random_sample


@pytest.fixture
def annotations_csv(tmp_path):
    samples = generate_samples(16, seed=2)
    path = tmp_path / "gt.csv"
    save_annotations(samples, path)
    return path, samples


def perfect_predictions(samples):
    records = []
    for s in samples:
        expr = [0.0] * 8
        expr[s.expression] = 1.0
        records.append(
            PredictionRecord(
                image_ref=s.image_ref,
                valence=s.valence,
                arousal=s.arousal,
                expr_probs=tuple(expr),
                au_probs=tuple(float(a) for a in s.aus),
            )
        )
    return records


def test_ingest_writes_key_value_report(annotations_csv, tmp_path, capsys):
    path, _ = annotations_csv
    out = tmp_path / "stats.txt"
    assert main(["ingest", "--annotations", str(path), "--stats-out", str(out)]) == 0
    text = out.read_text()
    assert "n_samples=16" in text
    assert "n_samples=16" in capsys.readouterr().out


def test_train_requires_max_epochs(annotations_csv, tmp_path):
    path, _ = annotations_csv
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('backbone = "tiny"\n')
    with pytest.raises(SystemExit, match="max_epochs"):
        main(
            [
                "train-multi",
                "--config", str(cfg),
                "--annotations", str(path),
                "--images-root", str(tmp_path),
                "--out", str(tmp_path / "run"),
            ]
        )


def test_config_accepts_json_and_toml(tmp_path):
    from mtl_affect.cli import _load_config_file

    toml = tmp_path / "c.toml"
    toml.write_text('max_epochs = 3\nlearning_rate = 5e-5\nbackbone = "tiny"\n')
    json_file = tmp_path / "c.json"
    json_file.write_text(json.dumps({"max_epochs": 3, "learning_rate": 5e-5}))
    assert _load_config_file(toml)["max_epochs"] == 3
    assert _load_config_file(json_file)["learning_rate"] == 5e-5


def test_evaluate_probability_csv(annotations_csv, tmp_path):
    path, samples = annotations_csv
    preds_path = tmp_path / "preds.csv"
    write_predictions_csv(perfect_predictions(samples), preds_path)
    report_path = tmp_path / "report.json"
    code = main(
        [
            "evaluate",
            "--preds", str(preds_path),
            "--gt", str(path),
            "--out", str(report_path),
        ]
    )
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["scale_01"]["p_va"] == pytest.approx(1.0, abs=1e-12)
    assert report["percent"]["p_va"] == pytest.approx(100.0, abs=1e-10)
    assert "neutral" in report["scale_01"]["f1_expr"]


def test_fuse_then_evaluate_decided_csv(annotations_csv, tmp_path):
    path, samples = annotations_csv
    preds = perfect_predictions(samples)
    single_path = tmp_path / "single.csv"
    multi_path = tmp_path / "multi.csv"
    write_predictions_csv(preds, single_path)
    write_predictions_csv(preds, multi_path)
    fused_path = tmp_path / "final.csv"
    code = main(
        [
            "fuse",
            "--single", str(single_path),
            "--multi", str(multi_path),
            "--lambda-va", "0.4",
            "--lambda-expr", "0.6",
            "--lambda-au", "0.6",
            "--out", str(fused_path),
        ]
    )
    assert code == 0
    report_path = tmp_path / "report.json"
    main(["evaluate", "--preds", str(fused_path), "--gt", str(path), "--out", str(report_path)])
    report = json.loads(report_path.read_text())
    assert report["scale_01"]["p_total"] == pytest.approx(3.0, abs=1e-9)


def test_fuse_search_writes_lambda_table(annotations_csv, tmp_path):
    path, samples = annotations_csv
    rng = np.random.default_rng(0)
    noisy = [
        PredictionRecord(
            image_ref=s.image_ref,
            valence=float(np.clip(s.valence + rng.normal(0, 0.2), -1, 1)),
            arousal=float(np.clip(s.arousal + rng.normal(0, 0.2), -1, 1)),
            expr_probs=tuple(rng.dirichlet(np.ones(8))),
            au_probs=tuple(rng.uniform(0, 1, size=12)),
        )
        for s in samples
    ]
    single_path = tmp_path / "single.csv"
    multi_path = tmp_path / "multi.csv"
    write_predictions_csv(perfect_predictions(samples), single_path)
    write_predictions_csv(noisy, multi_path)
    fused_path = tmp_path / "final.csv"
    code = main(
        [
            "fuse",
            "--single", str(single_path),
            "--multi", str(multi_path),
            "--search",
            "--gt", str(path),
            "--step", "0.1",
            "--out", str(fused_path),
        ]
    )
    assert code == 0
    table = json.loads(fused_path.with_suffix(".lambda_table.json").read_text())
    assert len(table["grid"]) == 11
    assert table["selected"]["lambda_va"] == 1.0


def test_search_requires_ground_truth(tmp_path, annotations_csv):
    path, samples = annotations_csv
    preds_path = tmp_path / "p.csv"
    write_predictions_csv(perfect_predictions(samples), preds_path)
    with pytest.raises(SystemExit, match="--gt"):
        main(
            [
                "fuse",
                "--single", str(preds_path),
                "--multi", str(preds_path),
                "--search",
                "--out", str(tmp_path / "f.csv"),
            ]
        )


def test_merge_empty_expr_flag(tmp_path):
    from mtl_affect.annotations import AffectSample, load_annotations
    from mtl_affect.synthetic import generate_dataset

    ann, images = generate_dataset(tmp_path, n=24, seed=4, image_size=32)
    # Collapse everything onto classes {0, 7} so six classes are empty.
    samples = [
        AffectSample.from_raw(s.image_ref, s.valence, s.arousal, s.expression % 2 * 7, s.aus)
        for s in load_annotations(ann)
    ]
    train_csv = tmp_path / "collapsed.csv"
    save_annotations(samples, train_csv)
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        'max_epochs = 1\nbatch_size = 8\nlearning_rate = 1e-3\nbackbone = "tiny"\n'
        "embedding_dim = 16\nimage_size = 32\n"
    )
    argv = [
        "train-single", "--task", "expr",
        "--config", str(cfg),
        "--annotations", str(train_csv),
        "--images-root", str(images),
        "--out", str(tmp_path / "run"),
    ]
    with pytest.raises(ValueError, match="zero valid samples"):
        main(argv)
    assert main(argv + ["--merge-empty-expr"]) == 0


def test_malformed_annotations_surface_row_number(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text(
        "image,valence,arousal,expression,au1,au2,au4,au6,au7,au10,au12,au15,au23,au24,au25,au26\n"
        "a.png,0.5,0.5,3,1,0,0,1,0,0,1,0,0,0,1,0\n"
        "b.png,7.0,0.5,3,1,0,0,1,0,0,1,0,0,0,1,0\n"
    )
    from mtl_affect.annotations import AnnotationError

    with pytest.raises(AnnotationError, match="line 3"):
        main(["ingest", "--annotations", str(bad), "--stats-out", str(tmp_path / "s.txt")])
