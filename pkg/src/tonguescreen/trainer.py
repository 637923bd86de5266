"""Transfer-learning harness: head replacement, SGD fine-tuning with a
boosted head learning rate, training-curve capture, and prediction."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torch.nn import functional as F
from PIL import Image

from .augment import AugmentPolicy, augment, presentation_rng
from .backbones import (
    BackboneSpec,
    InputStats,
    _construct,
    load_backbone,
    replace_head,
)
from .dataset import (
    DatasetManifest,
    ImageRecord,
    SplitSpec,
    balanced_split,
    crop_roi,
    epoch_order,
    load_image,
    resize_for,
)
from .metrics import (
    ConfusionMatrix,
    MetricError,
    MetricsReport,
    accuracy,
    confusion,
    roc,
    sensitivity,
    specificity,
)
from .taxonomy import RiskLabel, TaskKind, TaskSpec, effective_class, task_from_kind


class TrainerError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Fine-tuning protocol: small global rate for transferred layers, a
    20x boosted rate for the replaced head, SGD with momentum."""

    global_lr: float = 1e-4
    head_lr_factor: float = 20.0
    momentum: float = 0.9
    epochs: int = 15
    batch_size: int = 10
    seed: int = 0
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    num_runs: int = 5

    def __post_init__(self) -> None:
        if self.global_lr <= 0:
            raise TrainerError(f"global_lr must be > 0, got {self.global_lr}")
        if self.head_lr_factor < 1:
            raise TrainerError(f"head_lr_factor must be >= 1, got {self.head_lr_factor}")
        if not 0 <= self.momentum < 1:
            raise TrainerError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise TrainerError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainerError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise TrainerError("seed must be non-negative")
        if self.num_runs < 1:
            raise TrainerError(f"num_runs must be >= 1, got {self.num_runs}")

    def to_dict(self) -> dict:
        return {
            "global_lr": self.global_lr,
            "head_lr_factor": self.head_lr_factor,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "augment": self.augment.to_dict(),
            "num_runs": self.num_runs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "augment" in d:
            d["augment"] = AugmentPolicy.from_dict(d["augment"])
        return cls(**d)

    @classmethod
    def from_json(cls, path: Path | str) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    accuracy: float
    loss: float


@dataclass
class TrainingCurve:
    """Per-iteration minibatch points plus per-checkpoint validation points."""

    minibatch: list[CurvePoint] = field(default_factory=list)
    validation: list[CurvePoint] = field(default_factory=list)

    def check(self) -> None:
        for series in (self.minibatch, self.validation):
            iters = [p.iteration for p in series]
            if any(b <= a for a, b in zip(iters, iters[1:])):
                raise TrainerError("curve iterations must be strictly increasing")
            for p in series:
                if not 0.0 <= p.accuracy <= 1.0:
                    raise TrainerError(f"curve accuracy out of [0,1]: {p}")
                if p.loss < 0:
                    raise TrainerError(f"curve loss must be >= 0: {p}")

    def to_csv(self, path: Path | str) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write("phase,iteration,accuracy,loss\n")
            for p in self.minibatch:
                fh.write(f"minibatch,{p.iteration},{p.accuracy!r},{p.loss!r}\n")
            for p in self.validation:
                fh.write(f"validation,{p.iteration},{p.accuracy!r},{p.loss!r}\n")

    @classmethod
    def from_csv(cls, path: Path | str) -> "TrainingCurve":
        curve = cls()
        lines = Path(path).read_text(encoding="utf-8").splitlines()[1:]
        for line in lines:
            phase, iteration, acc, loss = line.split(",")
            point = CurvePoint(int(iteration), float(acc), float(loss))
            (curve.minibatch if phase == "minibatch" else curve.validation).append(point)
        return curve


@dataclass
class ModelHandle:
    """A mutable model under construction or training; single logical writer."""

    backbone: BackboneSpec
    task: TaskSpec
    module: nn.Module
    head_params: tuple[str, str]
    input_stats: InputStats

    def body_parameters(self) -> list[nn.Parameter]:
        return [p for n, p in self.module.named_parameters() if n not in self.head_params]

    def head_parameters(self) -> list[nn.Parameter]:
        return [p for n, p in self.module.named_parameters() if n in self.head_params]


def build_model(backbone: BackboneSpec, task: TaskSpec, head_seed: int = 0) -> ModelHandle:
    """Load the pretrained backbone and replace its final classification layer
    with a fresh task.n-way head. All other layers keep the checkpoint
    weights bit-for-bit."""
    loaded = load_backbone(backbone)
    head_params = replace_head(loaded.module, backbone.model_id, task.n, head_seed)
    return ModelHandle(
        backbone=backbone,
        task=task,
        module=loaded.module,
        head_params=head_params,
        input_stats=loaded.input_stats,
    )


def build_optimizer(handle: ModelHandle, config: TrainConfig) -> torch.optim.SGD:
    """SGD with momentum; the head group runs at global_lr * head_lr_factor."""
    return torch.optim.SGD(
        [
            {"params": handle.body_parameters(), "lr": config.global_lr},
            {"params": handle.head_parameters(),
             "lr": config.global_lr * config.head_lr_factor},
        ],
        momentum=config.momentum,
    )


def prepare_record(record: ImageRecord, backbone: BackboneSpec) -> np.ndarray:
    """Decoded, ROI-cropped, backbone-sized uint8 HWC array for one record."""
    image = load_image(record)
    if record.roi is not None:
        image = crop_roi(record, image)
    return np.asarray(resize_for(backbone, image), dtype=np.uint8)


def batch_tensor(arrays: list[np.ndarray], stats: InputStats) -> torch.Tensor:
    """Normalize uint8 HWC arrays to the checkpoint statistics, NCHW float32."""
    mean = np.asarray(stats.mean, dtype=np.float32)
    std = np.asarray(stats.std, dtype=np.float32)
    stacked = np.stack(arrays).astype(np.float32) / 255.0
    stacked = (stacked - mean) / std
    return torch.from_numpy(stacked.transpose(0, 3, 1, 2))


@dataclass
class TrainedModel:
    """A fitted classifier plus its provenance and training curve."""

    backbone: BackboneSpec
    task: TaskSpec
    module: nn.Module
    curve: TrainingCurve
    train_seconds: float
    split_seed: int
    run_seed: int
    input_stats: InputStats
    config_hash: str
    weights_ref: str = ""
    presentations: dict[str, int] = field(default_factory=dict)
    augmented: dict[str, int] = field(default_factory=dict)

    def save(self, out_dir: Path | str) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        weights_path = out_dir / "weights.pt"
        torch.save(self.module.state_dict(), weights_path)
        self.curve.to_csv(out_dir / "curve.csv")
        sidecar = {
            "backbone": {
                "name": self.backbone.name,
                "depth": self.backbone.depth,
                "input_size": list(self.backbone.input_size),
                "params_millions": self.backbone.params_millions,
                "provider_key": self.backbone.provider_key,
            },
            "task": self.task.kind.value,
            "train_seconds": self.train_seconds,
            "split_seed": self.split_seed,
            "run_seed": self.run_seed,
            "config_hash": self.config_hash,
            "input_stats": {"mean": list(self.input_stats.mean),
                            "std": list(self.input_stats.std)},
            "weights": weights_path.name,
            "curve": "curve.csv",
        }
        (out_dir / "sidecar.json").write_text(
            json.dumps(sidecar, indent=2), encoding="utf-8"
        )
        self.weights_ref = str(weights_path.resolve())
        return out_dir

    @classmethod
    def load(cls, model_dir: Path | str) -> "TrainedModel":
        model_dir = Path(model_dir)
        sidecar = json.loads((model_dir / "sidecar.json").read_text(encoding="utf-8"))
        b = sidecar["backbone"]
        backbone = BackboneSpec(
            name=b["name"],
            depth=b["depth"],
            input_size=tuple(b["input_size"]),
            params_millions=b["params_millions"],
            provider_key=b["provider_key"],
        )
        task = task_from_kind(sidecar["task"])
        module = _construct(backbone.model_id)
        replace_head(module, backbone.model_id, task.n, head_seed=0)
        state = torch.load(model_dir / sidecar["weights"], weights_only=True)
        module.load_state_dict(state)
        stats = InputStats(
            mean=tuple(sidecar["input_stats"]["mean"]),
            std=tuple(sidecar["input_stats"]["std"]),
        )
        return cls(
            backbone=backbone,
            task=task,
            module=module,
            curve=TrainingCurve.from_csv(model_dir / sidecar["curve"]),
            train_seconds=sidecar["train_seconds"],
            split_seed=sidecar["split_seed"],
            run_seed=sidecar["run_seed"],
            input_stats=stats,
            config_hash=sidecar["config_hash"],
            weights_ref=str((model_dir / sidecar["weights"]).resolve()),
        )


def train(
    handle: ModelHandle,
    manifest: DatasetManifest,
    split: SplitSpec,
    config: TrainConfig,
    run_seed: int | None = None,
    weights_dir: Path | str | None = None,
) -> TrainedModel:
    """Fine-tune for config.epochs epochs of minibatch SGD over per-epoch
    shuffles, with online flip augmentation on training items only.

    Deterministic for a fixed (run_seed, provider): data order, augmentation
    draws, and dropout masks all derive from it. The partial final minibatch
    is used, not dropped.
    """
    run_seed = config.seed if run_seed is None else run_seed
    if not split.train_ids:
        raise TrainerError("empty training set")
    known = {r.id for r in manifest.records}
    missing = [i for i in (*split.train_ids, *split.validation_ids) if i not in known]
    if missing:
        raise TrainerError(f"split references ids missing from manifest: {missing}")

    arrays = {
        rid: prepare_record(manifest.record(rid), handle.backbone)
        for rid in (*split.train_ids, *split.validation_ids)
    }
    labels = {
        rid: handle.task.class_index(
            effective_class(manifest.record(rid).lesion_class, handle.task)
        )
        for rid in arrays
    }

    optimizer = build_optimizer(handle, config)
    curve = TrainingCurve()
    presentations: dict[str, int] = {}
    augmented: dict[str, int] = {}
    iteration = 0

    torch.manual_seed(run_seed)  # dropout masks
    started = time.perf_counter()
    for epoch in range(config.epochs):
        order = epoch_order(split, epoch, run_seed)
        handle.module.train()
        for start in range(0, len(order), config.batch_size):
            batch_ids = order[start : start + config.batch_size]
            batch = []
            for rid in batch_ids:
                presentations[rid] = presentations.get(rid, 0) + 1
                rng = presentation_rng(run_seed, epoch, rid)
                batch.append(augment(arrays[rid], config.augment, rng))
                augmented[rid] = augmented.get(rid, 0) + 1
            x = batch_tensor(batch, handle.input_stats)
            y = torch.tensor([labels[rid] for rid in batch_ids], dtype=torch.long)

            iteration += 1
            optimizer.zero_grad()
            logits = handle.module(x)
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise TrainerError(
                    f"non-finite loss at iteration {iteration} "
                    f"(epoch {epoch}); aborting"
                )
            loss.backward()
            optimizer.step()
            batch_acc = float((logits.argmax(1) == y).float().mean())
            curve.minibatch.append(
                CurvePoint(iteration, batch_acc, float(loss.detach()))
            )

        if split.validation_ids:
            vacc, vloss = _validation_pass(handle, split, arrays, labels, config)
            curve.validation.append(CurvePoint(iteration, vacc, vloss))

    train_seconds = time.perf_counter() - started
    curve.check()
    trained = TrainedModel(
        backbone=handle.backbone,
        task=handle.task,
        module=handle.module,
        curve=curve,
        train_seconds=train_seconds,
        split_seed=split.seed,
        run_seed=run_seed,
        input_stats=handle.input_stats,
        config_hash=config.hash(),
        presentations=presentations,
        augmented=augmented,
    )
    if weights_dir is not None:
        trained.save(weights_dir)
    return trained


def _validation_pass(handle, split, arrays, labels, config) -> tuple[float, float]:
    # Validation items are never augmented and never contribute gradients.
    handle.module.eval()
    correct = 0
    loss_sum = 0.0
    with torch.no_grad():
        for start in range(0, len(split.validation_ids), config.batch_size):
            batch_ids = split.validation_ids[start : start + config.batch_size]
            x = batch_tensor([arrays[r] for r in batch_ids], handle.input_stats)
            y = torch.tensor([labels[r] for r in batch_ids], dtype=torch.long)
            logits = handle.module(x)
            loss_sum += float(F.cross_entropy(logits, y, reduction="sum"))
            correct += int((logits.argmax(1) == y).sum())
    handle.module.train()
    n = len(split.validation_ids)
    return correct / n, loss_sum / n


def predict(model: TrainedModel | ModelHandle, image: Image.Image | np.ndarray) -> np.ndarray:
    """Probability vector over the task classes for one image; softmax of the
    head outputs, deterministic in inference mode."""
    if isinstance(image, np.ndarray):
        image = Image.fromarray(image)
    array = np.asarray(resize_for(model.backbone, image), dtype=np.uint8)
    x = batch_tensor([array], model.input_stats)
    model.module.eval()
    with torch.no_grad():
        logits = model.module(x)
        probs = torch.softmax(logits, dim=1)[0]
    return probs.numpy()


@dataclass
class EvalPrediction:
    item_id: str
    image_ref: str
    scores: tuple[float, ...]
    predicted: str
    target: str

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "image_ref": self.image_ref,
            "scores": list(self.scores),
            "predicted": self.predicted,
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalPrediction":
        return cls(d["item_id"], d["image_ref"], tuple(d["scores"]),
                   d["predicted"], d["target"])


@dataclass
class EvalResult:
    confusion: ConfusionMatrix
    report: MetricsReport
    predictions: list[EvalPrediction]


def evaluate_model(
    model: TrainedModel, manifest: DatasetManifest, split: SplitSpec
) -> EvalResult:
    """Score the validation partition: confusion matrix, scalar metrics, and
    (for the binary task) ROC AUC at the 50% operating threshold."""
    task = model.task
    predictions: list[EvalPrediction] = []
    for rid in split.validation_ids:
        record = manifest.record(rid)
        scores = predict(model, load_image(record) if record.roi is None
                         else crop_roi(record))
        predicted = task.classes[int(np.argmax(scores))]
        predictions.append(
            EvalPrediction(
                item_id=rid,
                image_ref=record.path,
                scores=tuple(float(s) for s in scores),
                predicted=predicted,
                target=effective_class(record.lesion_class, task),
            )
        )
    cm = confusion(
        [p.predicted for p in predictions],
        [p.target for p in predictions],
        task.classes,
    )
    report = build_report(cm, predictions, task,
                          train_seconds=model.train_seconds,
                          run_seed=model.run_seed)
    return EvalResult(confusion=cm, report=report, predictions=predictions)


def build_report(
    cm: ConfusionMatrix,
    predictions: list[EvalPrediction],
    task: TaskSpec,
    train_seconds: float | None = None,
    run_seed: int = 0,
) -> MetricsReport:
    acc = accuracy(cm)
    auc_value = None
    per_class: dict[str, dict[str, float]] = {}
    if task.kind == TaskKind.BINARY:
        positive = RiskLabel.PRE_CANCEROUS.value
        sens = sensitivity(cm, positive)
        spec = specificity(cm, positive)
        pos_index = task.class_index(positive)
        try:
            curve = roc(
                [p.scores[pos_index] for p in predictions],
                [p.target for p in predictions],
                positive,
            )
            auc_value = curve.auc
        except MetricError:
            auc_value = None
    else:
        values = []
        for cls in task.classes:
            try:
                s_ens = sensitivity(cm, cls)
                s_pec = specificity(cm, cls)
            except MetricError:
                continue
            per_class[cls] = {"sensitivity": s_ens, "specificity": s_pec}
            values.append((s_ens, s_pec))
        sens = float(np.mean([v[0] for v in values])) if values else None
        spec = float(np.mean([v[1] for v in values])) if values else None
    return MetricsReport(
        accuracy=acc,
        sensitivity=sens,
        specificity=spec,
        auc=auc_value,
        train_seconds=train_seconds,
        per_class=per_class or None,
        run_seed=run_seed,
    )


@dataclass
class RunOutcome:
    model: TrainedModel
    result: EvalResult


def repeat_runs(
    manifest: DatasetManifest,
    backbone: BackboneSpec,
    task: TaskSpec,
    config: TrainConfig,
    split_seed_base: int = 0,
    train_fraction: float = 0.8,
    workdir: Path | str | None = None,
) -> list[RunOutcome]:
    """config.num_runs independent trainings with derived seeds: run i splits
    with seed split_seed_base+i and trains with seed config.seed+i."""
    outcomes: list[RunOutcome] = []
    for i in range(config.num_runs):
        split = balanced_split(manifest, split_seed_base + i,
                               train_fraction=train_fraction)
        run_seed = config.seed + i
        handle = build_model(backbone, task, head_seed=run_seed)
        run_dir = Path(workdir) / f"run{i}" if workdir is not None else None
        trained = train(handle, manifest, split, config,
                        run_seed=run_seed, weights_dir=run_dir)
        outcomes.append(RunOutcome(trained, evaluate_model(trained, manifest, split)))
    return outcomes
