"""Command-line interface: ingest, train, predict, fuse, evaluate.

Training hyperparameters come from a TOML or JSON key-value config file;
paths (annotations, images root, output) are flags. Heavy imports happen
inside the handlers so metadata-only commands stay fast.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _load_config_file(path: str | Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".json":
        return json.loads(text)
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(text.decode("utf-8"))


def _train_config_from(
    mapping: dict, mode: str, images_root: Path, out_dir: Path, merge_empty_expr: bool = False
):
    from .losses import FocalConfig
    from .models import BackboneSpec, PreprocessConfig, RESNET50_EMBEDDING_DIM
    from .training import TrainConfig

    cfg = dict(mapping)
    if "max_epochs" not in cfg:
        raise SystemExit("config error: max_epochs is required (no default)")
    backbone_name = cfg.get("backbone", "resnet50-class")
    default_dim = RESNET50_EMBEDDING_DIM if backbone_name == "resnet50-class" else 64
    backbone = BackboneSpec(
        name=backbone_name,
        embedding_dim=int(cfg.get("embedding_dim", default_dim)),
        pretrained=bool(cfg.get("pretrained", False)),
    )
    preprocess = PreprocessConfig(
        image_size=int(cfg.get("image_size", 224)),
        mean=tuple(cfg.get("mean", (0.485, 0.456, 0.406))),
        std=tuple(cfg.get("std", (0.229, 0.224, 0.225))),
    )
    return TrainConfig(
        mode=mode,
        max_epochs=int(cfg["max_epochs"]),
        images_root=images_root,
        checkpoint_dir=out_dir,
        batch_size=int(cfg.get("batch_size", 64)),
        learning_rate=float(cfg.get("learning_rate", 5e-5)),
        seed=int(cfg.get("seed", 0)),
        focal=FocalConfig(
            gamma=float(cfg.get("gamma", 1.0)),
            prob_clamp=float(cfg.get("prob_clamp", 1e-7)),
        ),
        backbone=backbone,
        preprocess=preprocess,
        select_metric=cfg.get("select_metric"),
        au_threshold=float(cfg.get("au_threshold", 0.5)),
        merge_empty_expr=merge_empty_expr or bool(cfg.get("merge_empty_expr", False)),
    )


def _cmd_ingest(args) -> int:
    from .annotations import compute_stats, load_annotations, stats_report

    samples = load_annotations(args.annotations)
    report = stats_report(compute_stats(samples))
    Path(args.stats_out).write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return 0


def _run_training(args, mode: str) -> int:
    from .annotations import load_annotations
    from .training import split_train_val, train

    mapping = _load_config_file(args.config)
    config = _train_config_from(
        mapping, mode, Path(args.images_root), Path(args.out), args.merge_empty_expr
    )
    samples = load_annotations(args.annotations)
    if args.val_annotations:
        train_samples, val_samples = samples, load_annotations(args.val_annotations)
    else:
        val_fraction = float(mapping.get("val_fraction", 0.2))
        train_samples, val_samples = split_train_val(samples, val_fraction, config.seed)
    result = train(config, train_samples, val_samples)
    print(
        f"best checkpoint: {result.best_checkpoint} "
        f"(epoch {result.best_epoch}, {config.selection}={result.best_score:.4f})"
    )
    return 0


def _cmd_train_single(args) -> int:
    return _run_training(args, f"single-{args.task}")


def _cmd_train_multi(args) -> int:
    return _run_training(args, "multi")


def _cmd_predict(args) -> int:
    from .annotations import load_annotations
    from .records import merge_prediction_records, write_predictions_csv
    from .training import predict

    samples = load_annotations(args.annotations)
    record_sets = [
        predict(ckpt, samples, args.images_root, batch_size=args.batch_size)
        for ckpt in args.checkpoint
    ]
    records = merge_prediction_records(record_sets)
    write_predictions_csv(records, args.out)
    print(f"wrote {len(records)} prediction records to {args.out}")
    return 0


def _cmd_fuse(args) -> int:
    from .annotations import load_annotations
    from .fusion import FusionWeights, fuse_all, search_lambda
    from .records import merge_prediction_records, read_predictions_csv, write_final_csv

    singles = merge_prediction_records([read_predictions_csv(p) for p in args.single])
    multis = read_predictions_csv(args.multi)
    if args.search:
        if not args.gt:
            raise SystemExit("--search requires --gt <annotations.csv>")
        truth = load_annotations(args.gt)
        weights, table = search_lambda(
            singles, multis, truth, step=args.step, au_threshold=args.au_threshold
        )
        table_path = Path(args.out).with_suffix(".lambda_table.json")
        table_path.write_text(
            json.dumps({"selected": weights.__dict__, "grid": table}, indent=2) + "\n",
            encoding="utf-8",
        )
        print(
            f"selected lambda_va={weights.lambda_va} lambda_expr={weights.lambda_expr} "
            f"lambda_au={weights.lambda_au}; table: {table_path}"
        )
    else:
        weights = FusionWeights(
            lambda_va=args.lambda_va,
            lambda_expr=args.lambda_expr,
            lambda_au=args.lambda_au,
        )
    finals = fuse_all(singles, multis, weights, au_threshold=args.au_threshold)
    write_final_csv(finals, args.out)
    print(f"wrote {len(finals)} fused predictions to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .annotations import EXPRESSION_NAMES, load_annotations
    from .metrics import evaluate
    from .records import (
        FinalPrediction,
        read_predictions_csv,
        sniff_prediction_csv,
    )

    kind = sniff_prediction_csv(args.preds)
    if kind == "probabilities":
        preds = read_predictions_csv(args.preds)
    else:
        decided = load_annotations(args.preds)
        preds = [
            FinalPrediction(
                image_ref=s.image_ref,
                valence=s.valence,
                arousal=s.arousal,
                expr_label=s.expression,
                au_labels=s.aus,
            )
            for s in decided
        ]
    truth = load_annotations(args.gt)
    report = evaluate(preds, truth, au_threshold=args.au_threshold)
    if args.expression_names:
        names = args.expression_names.split(",")
        if len(names) != 8:
            raise SystemExit("--expression-names needs exactly 8 comma-separated names")
    else:
        names = EXPRESSION_NAMES
    payload = report.as_dict(expression_names=names)
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    pct = payload["percent"]
    print(
        f"P = {pct['p_total']:.2f} "
        f"(va {pct['p_va']:.2f} + expr {pct['p_expr']:.2f} + au {pct['p_au']:.2f}), "
        f"report: {args.out}"
    )
    return 0


def _add_training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML or JSON hyperparameter file")
    p.add_argument("--annotations", required=True, help="training annotation CSV")
    p.add_argument("--val-annotations", help="validation annotation CSV (default: split)")
    p.add_argument("--images-root", required=True, help="directory holding the images")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument(
        "--merge-empty-expr",
        action="store_true",
        help="fold expression classes with zero training samples into class 7 (other)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtl-affect",
        description="Facial affect models: VA regression, expression recognition, AU detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse annotations and emit dataset statistics")
    p.add_argument("--annotations", required=True)
    p.add_argument("--stats-out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train-single", help="train one single-task model")
    p.add_argument("--task", required=True, choices=("va", "expr", "au"))
    _add_training_args(p)
    p.set_defaults(func=_cmd_train_single)

    p = sub.add_parser("train-multi", help="train the shared-backbone multi-task model")
    _add_training_args(p)
    p.set_defaults(func=_cmd_train_multi)

    p = sub.add_parser("predict", help="run inference and write a predictions CSV")
    p.add_argument(
        "--checkpoint",
        action="append",
        required=True,
        help="checkpoint .pt (repeat to merge single-task models into one stream)",
    )
    p.add_argument("--annotations", required=True, help="CSV naming the images to score")
    p.add_argument("--images-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("fuse", help="combine single-task and multi-task predictions")
    p.add_argument(
        "--single",
        action="append",
        required=True,
        help="single-task predictions CSV (repeat to cover all tasks)",
    )
    p.add_argument("--multi", required=True, help="multi-task predictions CSV")
    p.add_argument("--lambda-va", type=float, default=0.4)
    p.add_argument("--lambda-expr", type=float, default=0.6)
    p.add_argument("--lambda-au", type=float, default=0.6)
    p.add_argument("--au-threshold", type=float, default=0.5)
    p.add_argument("--search", action="store_true", help="grid-search lambda on --gt")
    p.add_argument("--gt", help="labeled annotations for --search")
    p.add_argument("--step", type=float, default=0.05, help="grid step for --search")
    p.add_argument("--out", required=True, help="fused decided-label CSV")
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--preds", required=True, help="probability or decided-label CSV")
    p.add_argument("--gt", required=True, help="ground-truth annotation CSV")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--au-threshold", type=float, default=0.5)
    p.add_argument("--expression-names", help="comma-separated class names for the report")
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
