"""Command-line front door: ingest -> split -> train -> evaluate -> roc ->
flag -> review -> report, plus per-image prediction with overlays.

Every command reads and writes inside a single run directory so that a whole
experiment is reproducible from its artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from PIL import Image

from . import reporting
from .backbones import BackboneError, ProviderError, get_backbone
from .dataset import (
    DatasetError,
    balanced_split,
    ensure_roi_crop,
    ingest,
    load_manifest,
    load_split,
    save_manifest,
    save_split,
)
from .metrics import MetricError, aggregate, confusion, roc
from .taxonomy import TaskKind, TaxonomyError, task_from_kind
from .trainer import (
    EvalPrediction,
    TrainConfig,
    TrainedModel,
    TrainerError,
    evaluate_model,
    predict,
    repeat_runs,
)
from .triage import (
    AiPrediction,
    ReviewStore,
    TriageError,
    export_queue,
    flag_for_review,
    import_labels,
)

KNOWN_ERRORS = (
    BackboneError,
    DatasetError,
    MetricError,
    ProviderError,
    TaxonomyError,
    TrainerError,
    TriageError,
    FileNotFoundError,
)


class RunPaths:
    """Canonical layout inside a run directory."""

    def __init__(self, run_dir: Path | str):
        self.root = Path(run_dir)
        self.images = self.root / "images"
        self.manifest = self.root / "manifest.jsonl"
        self.split = self.root / "split.json"
        self.config = self.root / "train_config.json"
        self.models = self.root / "models"
        self.reports = self.root / "reports"
        self.review = self.root / "review"
        self.store = self.review / "store.jsonl"
        self.queue = self.review / "queue.jsonl"

    def model_dir(self, key: str, run: int) -> Path:
        return self.models / key / f"run{run}"

    def ensure(self) -> "RunPaths":
        for d in (self.root, self.images, self.models, self.reports, self.review):
            d.mkdir(parents=True, exist_ok=True)
        return self


def _model_key(backbone: str, task_kind: str) -> str:
    return f"{backbone}_{task_kind}"


def _load_labels_file(path: Path) -> dict:
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8"))
    labels: dict = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            filename, cls = row[0].strip(), row[1].strip()
            if len(row) >= 6 and row[2].strip():
                labels[filename] = {
                    "class": cls,
                    "roi": [int(v) for v in row[2:6]],
                }
            else:
                labels[filename] = cls
    return labels


def _emit(args, result: dict, human: str) -> None:
    if args.json:
        print(json.dumps(result, indent=2))
    else:
        print(human)


# -- commands -----------------------------------------------------------------


def cmd_ingest(args) -> dict:
    paths = RunPaths(args.run_dir).ensure()
    task = task_from_kind(args.task)
    labels = _load_labels_file(Path(args.labels))
    manifest = ingest(args.images, labels, task, paths.images,
                      annotator=args.annotator)
    save_manifest(manifest, paths.manifest)
    counts = manifest.class_counts()
    result = {
        "manifest": str(paths.manifest),
        "records": len(manifest.records),
        "class_counts": counts,
        "checksum": manifest.checksum,
    }
    _emit(args, result,
          f"ingested {len(manifest.records)} records -> {paths.manifest}\n"
          f"per-class counts: {counts}")
    return result


def cmd_split(args) -> dict:
    paths = RunPaths(args.run_dir)
    manifest = load_manifest(paths.manifest)
    split = balanced_split(manifest, args.seed, train_fraction=args.train_fraction)
    save_split(split, paths.split)
    result = {
        "split": str(paths.split),
        "seed": split.seed,
        "train": len(split.train_ids),
        "validation": len(split.validation_ids),
    }
    _emit(args, result,
          f"split seed {split.seed}: {len(split.train_ids)} train / "
          f"{len(split.validation_ids)} validation -> {paths.split}")
    return result


def _run_config(args) -> TrainConfig:
    if args.config:
        config = TrainConfig.from_json(args.config)
    else:
        config = TrainConfig()
    overrides = {}
    if args.runs is not None:
        overrides["num_runs"] = args.runs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if overrides:
        config = TrainConfig.from_dict({**config.to_dict(), **overrides})
    return config


def cmd_train(args) -> dict:
    paths = RunPaths(args.run_dir).ensure()
    manifest = load_manifest(paths.manifest)
    task = manifest.task
    if args.task and task_from_kind(args.task) != task:
        raise TrainerError(
            f"manifest holds a {task.kind.value} task; --task {args.task} mismatch"
        )
    backbone = get_backbone(args.backbone, provider=args.provider)
    config = _run_config(args)
    config.save(paths.config)
    split = load_split(paths.split)

    key = _model_key(backbone.name, task.kind.value)
    outcomes = repeat_runs(
        manifest, backbone, task, config,
        split_seed_base=split.seed,
        train_fraction=split.train_fraction,
        workdir=paths.models / key,
    )
    reports = []
    for i, outcome in enumerate(outcomes):
        run_dir = paths.model_dir(key, i)
        save_split(
            balanced_split(manifest, outcome.model.split_seed,
                           train_fraction=split.train_fraction),
            run_dir / "split.json",
        )
        report = outcome.result.report
        reports.append(report)
        (paths.reports / f"{key}_run{i}_metrics.json").write_text(
            json.dumps(report.to_dict(), indent=2), encoding="utf-8")
        with (paths.reports / f"{key}_run{i}_predictions.jsonl").open(
                "w", encoding="utf-8") as fh:
            for p in outcome.result.predictions:
                fh.write(json.dumps(p.to_dict()) + "\n")
        reporting.plot_training_curve(
            outcome.model.curve,
            paths.reports / f"{key}_run{i}_curve.png",
            title=f"{backbone.name} {task.kind.value} run {i}",
        )

    agg = aggregate(reports, backbone=backbone.name, task_kind=task.kind.value)
    (paths.reports / f"{key}_aggregate.json").write_text(json.dumps({
        "backbone": agg.backbone,
        "task_kind": agg.task_kind,
        "num_runs": agg.num_runs,
        "mean": agg.mean,
        "std": agg.std,
    }, indent=2), encoding="utf-8")
    table = _write_summary(paths, task.kind.value)
    result = {
        "backbone": backbone.name,
        "task": task.kind.value,
        "runs": len(outcomes),
        "accuracy_mean": agg.mean.get("accuracy"),
        "accuracy_std": (agg.std or {}).get("accuracy"),
        "train_seconds_mean": agg.mean.get("train_seconds"),
        "summary": str(paths.reports / f"summary_{task.kind.value}.txt"),
    }
    _emit(args, result, table)
    return result


def _write_summary(paths: RunPaths, task_kind: str) -> str:
    from .metrics import AggregateReport

    aggs = []
    for f in sorted(paths.reports.glob(f"*_{task_kind}_aggregate.json")):
        d = json.loads(f.read_text(encoding="utf-8"))
        aggs.append(AggregateReport(
            backbone=d["backbone"], task_kind=d["task_kind"],
            num_runs=d["num_runs"], mean=d["mean"], std=d["std"],
        ))
    table = reporting.aggregate_table(aggs, task_kind)
    (paths.reports / f"summary_{task_kind}.txt").write_text(
        table + "\n", encoding="utf-8")
    return table


def _load_trained(paths: RunPaths, backbone: str, task_kind: str, run: int):
    key = _model_key(backbone, task_kind)
    run_dir = paths.model_dir(key, run)
    if not (run_dir / "sidecar.json").is_file():
        raise TrainerError(f"no trained model at {run_dir}; run `train` first")
    return key, run_dir, TrainedModel.load(run_dir)


def cmd_evaluate(args) -> dict:
    paths = RunPaths(args.run_dir)
    manifest = load_manifest(paths.manifest)
    task_kind = manifest.task.kind.value
    key, run_dir, model = _load_trained(paths, args.backbone, task_kind, args.run)
    split = load_split(run_dir / "split.json")
    result_obj = evaluate_model(model, manifest, split)

    grid = reporting.confusion_to_text(result_obj.confusion)
    (paths.reports / f"{key}_run{args.run}_confusion.txt").write_text(
        grid + "\n", encoding="utf-8")
    (paths.reports / f"{key}_run{args.run}_metrics.json").write_text(
        json.dumps(result_obj.report.to_dict(), indent=2), encoding="utf-8")
    with (paths.reports / f"{key}_run{args.run}_predictions.jsonl").open(
            "w", encoding="utf-8") as fh:
        for p in result_obj.predictions:
            fh.write(json.dumps(p.to_dict()) + "\n")

    result = {
        "backbone": args.backbone,
        "run": args.run,
        "metrics": result_obj.report.to_dict(),
        "confusion": result_obj.confusion.counts.tolist(),
        "classes": list(result_obj.confusion.classes),
    }
    _emit(args, result, grid + "\n" + json.dumps(result_obj.report.to_dict(), indent=2))
    return result


def _load_predictions(paths: RunPaths, key: str, run: int) -> list[EvalPrediction]:
    pred_file = paths.reports / f"{key}_run{run}_predictions.jsonl"
    if not pred_file.is_file():
        raise TrainerError(f"no predictions at {pred_file}; run `evaluate` first")
    preds = []
    with pred_file.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                preds.append(EvalPrediction.from_dict(json.loads(line)))
    return preds


def cmd_roc(args) -> dict:
    paths = RunPaths(args.run_dir)
    manifest = load_manifest(paths.manifest)
    task = manifest.task
    if task.kind != TaskKind.BINARY:
        raise MetricError("ROC analysis applies to the binary task")
    key = _model_key(args.backbone, task.kind.value)
    preds = _load_predictions(paths, key, args.run)
    positive = task.classes[1]
    pos_index = task.class_index(positive)
    curve = roc([p.scores[pos_index] for p in preds],
                [p.target for p in preds], positive)
    csv_path = paths.reports / f"{key}_run{args.run}_roc.csv"
    png_path = paths.reports / f"{key}_run{args.run}_roc.png"
    reporting.roc_to_csv(curve, csv_path)
    reporting.plot_roc(curve, png_path, title=f"{args.backbone} ({task.kind.value})")
    result = {"auc": curve.auc, "csv": str(csv_path), "plot": str(png_path)}
    _emit(args, result, f"AUC {curve.auc:.4f} -> {csv_path}, {png_path}")
    return result


def cmd_flag(args) -> dict:
    paths = RunPaths(args.run_dir).ensure()
    manifest = load_manifest(paths.manifest)
    task = manifest.task
    key = _model_key(args.backbone, task.kind.value)
    preds = _load_predictions(paths, key, args.run)

    ai_preds = []
    for p in preds:
        record = manifest.record(p.item_id)
        image_ref = str(ensure_roi_crop(record))
        ai_preds.append(AiPrediction(p.item_id, image_ref, p.scores, p.predicted))

    store = ReviewStore(paths.store)
    if args.mode == "evaluation":
        targets = {p.item_id: p.target for p in preds}
        items = flag_for_review(ai_preds, task, targets=targets)
        cm = confusion([p.predicted for p in preds], [p.target for p in preds],
                       task.classes)
        store.load_evaluation(
            task, cm, {i.item_id: targets[i.item_id] for i in items}, items)
    else:
        items = flag_for_review(ai_preds, task, confidence_threshold=args.tau)
        store.load_queue(task, items)

    result = {
        "mode": args.mode,
        "flagged": len(items),
        "items": [i.item_id for i in items],
        "store": str(paths.store),
    }
    _emit(args, result,
          f"flagged {len(items)} item(s) for review -> {paths.store}")
    return result


def cmd_report(args) -> dict:
    paths = RunPaths(args.run_dir)
    store = ReviewStore(paths.store)
    report = store.report()
    if report is None:
        result = {"status": "empty"}
        _emit(args, result, "no evaluation loaded yet")
        return result

    bars: dict[str, float] = {}
    for f in sorted(paths.reports.glob(f"*_{report.task_kind}_aggregate.json")):
        d = json.loads(f.read_text(encoding="utf-8"))
        if "accuracy" in d["mean"]:
            bars[d["backbone"]] = d["mean"]["accuracy"]
    if report.ensemble_accuracy is not None:
        bars["Ensemble (AI + Physician)"] = report.ensemble_accuracy
    chart = None
    if bars:
        chart = paths.reports / f"accuracy_comparison_{report.task_kind}.png"
        reporting.plot_accuracy_bars(
            bars, chart, title=f"Accuracy ({report.task_kind})")

    result = {"status": "ok", **report.to_dict(),
              "chart": str(chart) if chart else None}
    lines = [
        f"task: {report.task_kind}",
        f"base accuracy:     {report.base_accuracy}",
        f"ensemble accuracy: {report.ensemble_accuracy}",
        f"flagged: {report.flagged}  labeled: {report.labeled}",
    ]
    if report.pending:
        lines.append(f"warning: pending reviews: {report.pending}")
    _emit(args, result, "\n".join(lines))
    return result


def cmd_predict(args) -> dict:
    model = TrainedModel.load(args.model)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.model) / "predictions"
    if args.overlay:
        out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    failures = 0
    for image_path in args.images:
        image_path = Path(image_path)
        try:
            with Image.open(image_path) as im:
                im.load()
                image = im.convert("RGB")
        except Exception as exc:
            failures += 1
            results.append({"image": str(image_path), "error": str(exc)})
            print(f"error: {image_path}: undecodable image ({exc})", file=sys.stderr)
            continue
        scores = predict(model, image)
        top = int(scores.argmax())
        label = model.task.classes[top]
        entry = {
            "image": str(image_path),
            "predicted": label,
            "scores": {c: float(s) for c, s in zip(model.task.classes, scores)},
        }
        if args.overlay:
            overlay = reporting.overlay_prediction(image, label, float(scores[top]))
            out_path = out_dir / f"{image_path.stem}_pred{image_path.suffix or '.jpg'}"
            overlay.save(out_path)
            entry["overlay"] = str(out_path)
        results.append(entry)
    result = {"predictions": results, "failures": failures}
    human = "\n".join(
        f"{r['image']}: {r.get('predicted', 'ERROR')} "
        + (json.dumps(r["scores"]) if "scores" in r else r.get("error", ""))
        for r in results
    )
    _emit(args, result, human)
    if failures and failures == len(args.images):
        raise TrainerError("no image in the batch could be decoded")
    return result


def cmd_review(args) -> dict:
    paths = RunPaths(args.run_dir).ensure()
    store = ReviewStore(paths.store)
    if args.review_cmd == "export":
        out = Path(args.out) if args.out else paths.queue
        count = export_queue(store, out)
        result = {"exported": count, "queue": str(out)}
        _emit(args, result, f"exported {count} pending item(s) -> {out}")
        return result
    if args.review_cmd == "import":
        decisions = import_labels(store, args.file, reviewer=args.reviewer)
        report = store.report()
        result = {
            "imported": len(decisions),
            "ensemble_accuracy": report.ensemble_accuracy if report else None,
            "pending": report.pending if report else None,
        }
        _emit(args, result,
              f"imported {len(decisions)} label(s); "
              f"ensemble accuracy now {result['ensemble_accuracy']}")
        return result
    # serve
    from .review_service import ServiceConfig, serve

    config = ServiceConfig(
        store_path=paths.store,
        host=args.host,
        port=args.port,
        blind_mode=not args.no_blind,
        auth_token=args.token,
        frontend_dir=args.frontend,
    )
    print(f"serving review queue on http://{config.host}:{config.port} "
          f"(blind={config.blind_mode})")
    serve(config)
    return {}


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tonguescreen",
        description="Tongue-lesion screening pipeline: fine-tune pretrained "
                    "backbones, evaluate, and run the physician review loop.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--run-dir", default="run", help="run directory (default: run)")
    common.add_argument("--json", action="store_true",
                        help="machine-readable output")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("ingest", parents=[common], help="build the image manifest")
    p.add_argument("--images", required=True, help="directory of image files")
    p.add_argument("--labels", required=True,
                   help="CSV (filename,class[,x,y,w,h]) or JSON mapping")
    p.add_argument("--task", required=True, choices=["binary", "multiclass"])
    p.add_argument("--annotator", default="")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", parents=[common],
                       help="deterministic balanced train/validation split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="fine-tune a backbone")
    p.add_argument("--backbone", required=True)
    p.add_argument("--task", choices=["binary", "multiclass"],
                   help="must match the manifest task when given")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--runs", type=int, help="override num_runs")
    p.add_argument("--seed", type=int, help="override training seed")
    p.add_argument("--epochs", type=int, help="override epochs")
    p.add_argument("--batch-size", type=int, help="override batch size")
    p.add_argument("--provider", default=None, choices=["torchvision", "seeded"],
                   help="pretrained-weights provider (default: registry key)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="confusion matrix and metrics on the validation split")
    p.add_argument("--backbone", required=True)
    p.add_argument("--run", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("roc", parents=[common], help="ROC curve and AUC (binary)")
    p.add_argument("--backbone", required=True)
    p.add_argument("--run", type=int, default=0)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("flag", parents=[common],
                       help="flag cases for physician review")
    p.add_argument("--backbone", required=True)
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--mode", choices=["evaluation", "deployment"],
                   default="evaluation")
    p.add_argument("--tau", type=float, default=0.9,
                   help="confidence threshold for deployment mode")
    p.set_defaults(func=cmd_flag)

    p = sub.add_parser("report", parents=[common],
                       help="base vs ensemble accuracy report")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("predict", parents=[common],
                       help="classify images with a trained model")
    p.add_argument("--model", required=True, help="trained model directory")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--overlay", action="store_true",
                   help="write copies with the predicted label rendered on")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("review", parents=[common], help="physician review loop")
    rsub = p.add_subparsers(dest="review_cmd", required=True)
    pe = rsub.add_parser("export", parents=[common],
                         help="write the pending queue for offline labeling")
    pe.add_argument("--out")
    pi = rsub.add_parser("import", parents=[common],
                         help="ingest offline labels")
    pi.add_argument("file")
    pi.add_argument("--reviewer", default="")
    ps = rsub.add_parser("serve", parents=[common], help="start the review service")
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--port", type=int, default=8077)
    ps.add_argument("--no-blind", action="store_true",
                    help="expose AI outputs to the reviewer (demo only)")
    ps.add_argument("--token", default=None, help="shared-secret bearer token")
    ps.add_argument("--frontend", default=None,
                    help="static UI bundle directory to serve at /")
    p.set_defaults(func=cmd_review)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except KNOWN_ERRORS as exc:
        if getattr(args, "json", False):
            print(json.dumps({"error": {"type": type(exc).__name__,
                                        "message": str(exc)}}))
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
