"""The (AI + Physician) ensemble triage workflow.

Misclassified (or low-confidence) cases are flagged into a review queue; a
physician labels each flagged case blind to the model output; physician
labels override the model prediction in the final decision set. State lives
in a single-file append-only event log so that replaying the log always
reconstructs the exact decision set.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from .metrics import ConfusionMatrix, accuracy
from .taxonomy import TaskSpec, task_from_kind

STORE_SCHEMA = 1

FLAG_KNOWN_MISCLASSIFICATION = "known_misclassification"
FLAG_LOW_CONFIDENCE = "low_confidence"

STATUS_PENDING = "pending"
STATUS_LABELED = "labeled"

SOURCE_AI = "ai"
SOURCE_PHYSICIAN = "physician"


class TriageError(RuntimeError):
    pass


class UnknownItemError(TriageError):
    pass


class AlreadyLabeledError(TriageError):
    pass


class RevisionConflictError(TriageError):
    pass


class InvalidLabelError(TriageError):
    pass


class PendingItemsError(TriageError):
    def __init__(self, pending_ids: Sequence[str]):
        self.pending_ids = list(pending_ids)
        super().__init__(
            f"flagged items still awaiting a physician label: {self.pending_ids}"
        )


@dataclass(frozen=True)
class AiPrediction:
    """Model output for one evaluated or screened image."""

    item_id: str
    image_ref: str
    scores: tuple[float, ...]
    predicted: str


@dataclass
class ReviewItem:
    """A flagged case awaiting (or holding) a physician label."""

    item_id: str
    image_ref: str
    task_kind: str
    ai_scores: tuple[float, ...]
    ai_prediction: str
    flag_reason: str
    status: str = STATUS_PENDING
    revision: int = 0

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "image_ref": self.image_ref,
            "task_kind": self.task_kind,
            "ai_scores": list(self.ai_scores),
            "ai_prediction": self.ai_prediction,
            "flag_reason": self.flag_reason,
            "status": self.status,
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewItem":
        return cls(
            item_id=d["item_id"],
            image_ref=d["image_ref"],
            task_kind=d["task_kind"],
            ai_scores=tuple(d["ai_scores"]),
            ai_prediction=d["ai_prediction"],
            flag_reason=d["flag_reason"],
            status=d.get("status", STATUS_PENDING),
            revision=int(d.get("revision", 0)),
        )


@dataclass(frozen=True)
class PhysicianLabel:
    item_id: str
    label: str
    reviewer: str
    timestamp: str
    blind: bool = True


@dataclass(frozen=True)
class EnsembleDecision:
    item_id: str
    final_class: str
    source: str  # "ai" or "physician"

    def to_dict(self) -> dict:
        return {"item_id": self.item_id, "final_class": self.final_class,
                "source": self.source}


def flag_for_review(
    predictions: Sequence[AiPrediction],
    task: TaskSpec,
    targets: Mapping[str, str] | None = None,
    confidence_threshold: float | None = None,
) -> list[ReviewItem]:
    """Select the cases a physician must verify.

    Evaluation mode (targets given) flags exactly the known
    misclassifications. Deployment mode (threshold given) flags cases whose
    top score falls below the threshold; there is no ground truth to compare
    against at deployment time.
    """
    if targets is None and confidence_threshold is None:
        raise TriageError(
            "flagging needs either targets (evaluation) or a confidence "
            "threshold (deployment)"
        )
    if targets is not None:
        flagged = [
            p for p in predictions
            if p.item_id in targets and p.predicted != targets[p.item_id]
        ]
        missing = [p.item_id for p in predictions if p.item_id not in targets]
        if missing:
            raise TriageError(f"predictions without targets: {missing}")
        reason = FLAG_KNOWN_MISCLASSIFICATION
    else:
        if not 0 < confidence_threshold <= 1:
            raise TriageError(
                f"confidence threshold must lie in (0, 1], got {confidence_threshold}"
            )
        flagged = [p for p in predictions if max(p.scores) < confidence_threshold]
        reason = FLAG_LOW_CONFIDENCE
    return [
        ReviewItem(
            item_id=p.item_id,
            image_ref=p.image_ref,
            task_kind=task.kind.value,
            ai_scores=p.scores,
            ai_prediction=p.predicted,
            flag_reason=reason,
        )
        for p in flagged
    ]


def ensemble_confusion(
    base_cm: ConfusionMatrix,
    items: Sequence[ReviewItem],
    decisions: Sequence[EnsembleDecision],
    targets: Mapping[str, str],
) -> ConfusionMatrix:
    """Recompute the confusion matrix with final decisions replacing the AI
    prediction on every flagged item; unflagged entries are untouched."""
    by_id = {d.item_id: d for d in decisions}
    pending = [item.item_id for item in items if item.item_id not in by_id]
    if pending:
        raise PendingItemsError(pending)
    corrected = base_cm.copy()
    for item in items:
        decision = by_id[item.item_id]
        if item.item_id not in targets:
            raise TriageError(f"no target recorded for flagged item {item.item_id}")
        target_idx = corrected.index(targets[item.item_id])
        corrected.counts[corrected.index(item.ai_prediction), target_idx] -= 1
        corrected.counts[corrected.index(decision.final_class), target_idx] += 1
    if (corrected.counts < 0).any():
        raise TriageError("corrections do not match the base confusion matrix")
    return corrected


@dataclass
class TriageReport:
    task_kind: str
    base_accuracy: float | None
    ensemble_accuracy: float | None
    flagged: int
    pending: int
    labeled: int

    def to_dict(self) -> dict:
        return {
            "task_kind": self.task_kind,
            "base_accuracy": self.base_accuracy,
            "ensemble_accuracy": self.ensemble_accuracy,
            "flagged": self.flagged,
            "pending": self.pending,
            "labeled": self.labeled,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ReviewStore:
    """Single-file embedded review store with an append-only event log.

    Loading an evaluation resets the queue; flag and label events accumulate
    after it. Writes are serialized per item with revision-checked
    compare-and-set so concurrent reviewers cannot silently overwrite each
    other.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._items: dict[str, ReviewItem] = {}
        self._labels: dict[str, PhysicianLabel] = {}
        self._task: TaskSpec | None = None
        self._base_classes: tuple[str, ...] | None = None
        self._base_counts: list[list[int]] | None = None
        self._targets: dict[str, str] = {}
        if self.path.exists():
            self._replay()
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._append({"schema": STORE_SCHEMA, "kind": "review_store"})

    # -- event log -----------------------------------------------------

    def _append(self, event: dict) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()

    def _replay(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
        if not lines:
            raise TriageError(f"{self.path}: empty review store file")
        header = json.loads(lines[0])
        if header.get("schema") != STORE_SCHEMA:
            raise TriageError(
                f"{self.path}: unsupported store schema {header.get('schema')!r}"
            )
        for line in lines[1:]:
            self._apply(json.loads(line))

    def _apply(self, event: dict) -> None:
        kind = event["type"]
        if kind == "evaluation":
            self._task = task_from_kind(event["task"])
            self._base_classes = tuple(event["classes"]) if event.get("classes") else None
            self._base_counts = event.get("counts")
            self._targets = dict(event.get("targets") or {})
            self._items = {}
            self._labels = {}
        elif kind == "flag":
            item = ReviewItem.from_dict(event["item"])
            self._items[item.item_id] = item
        elif kind == "label":
            item = self._items[event["item_id"]]
            item.status = STATUS_LABELED
            item.revision = int(event["revision"])
            self._labels[item.item_id] = PhysicianLabel(
                item_id=event["item_id"],
                label=event["label"],
                reviewer=event.get("reviewer", ""),
                timestamp=event.get("ts", ""),
                blind=bool(event.get("blind", True)),
            )
        else:
            raise TriageError(f"unknown event type {kind!r} in {self.path}")

    def audit_entries(self) -> list[dict]:
        with self.path.open("r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()][1:]

    # -- loading evaluations and queues ---------------------------------

    def load_evaluation(
        self,
        task: TaskSpec,
        base_cm: ConfusionMatrix,
        targets: Mapping[str, str],
        items: Sequence[ReviewItem],
    ) -> None:
        """Store an evaluation snapshot plus its flagged items; replaces any
        previous queue."""
        with self._lock:
            event = {
                "type": "evaluation",
                "task": task.kind.value,
                "classes": list(base_cm.classes),
                "counts": base_cm.counts.tolist(),
                "targets": dict(targets),
                "ts": _now(),
            }
            self._append(event)
            self._apply(event)
            for item in items:
                flag_event = {"type": "flag", "item": item.to_dict(), "ts": _now()}
                self._append(flag_event)
                self._apply(flag_event)

    def load_queue(self, task: TaskSpec, items: Sequence[ReviewItem]) -> None:
        """Deployment-mode queue without ground truth or a base matrix."""
        with self._lock:
            event = {
                "type": "evaluation",
                "task": task.kind.value,
                "classes": None,
                "counts": None,
                "targets": {},
                "ts": _now(),
            }
            self._append(event)
            self._apply(event)
            for item in items:
                flag_event = {"type": "flag", "item": item.to_dict(), "ts": _now()}
                self._append(flag_event)
                self._apply(flag_event)

    # -- queue access ----------------------------------------------------

    @property
    def task(self) -> TaskSpec | None:
        return self._task

    def items(self) -> list[ReviewItem]:
        # snapshots: callers never hold live store state
        return [replace(i) for i in self._items.values()]

    def pending_items(self) -> list[ReviewItem]:
        return [replace(i) for i in self._items.values()
                if i.status == STATUS_PENDING]

    def get(self, item_id: str) -> ReviewItem:
        return replace(self._get_live(item_id))

    def _get_live(self, item_id: str) -> ReviewItem:
        try:
            return self._items[item_id]
        except KeyError:
            raise UnknownItemError(f"no review item with id {item_id!r}") from None

    def targets(self) -> dict[str, str]:
        return dict(self._targets)

    def base_confusion(self) -> ConfusionMatrix | None:
        if self._base_classes is None or self._base_counts is None:
            return None
        return ConfusionMatrix(self._base_classes, self._base_counts)

    # -- labeling ----------------------------------------------------------

    def submit_label(
        self,
        item_id: str,
        label: str,
        reviewer: str,
        expected_revision: int,
        blind: bool = True,
    ) -> EnsembleDecision:
        """Record the physician's single label for a pending item.

        Optimistic concurrency: the caller passes the revision it saw; a
        mismatch means another writer got there first and nothing is
        overwritten.
        """
        with self._lock:
            item = self._get_live(item_id)
            if self._task is None:
                raise TriageError("no evaluation loaded")
            if label not in self._task.classes:
                raise InvalidLabelError(
                    f"label {label!r} is not one of the task classes "
                    f"{self._task.classes}"
                )
            if item.status == STATUS_LABELED:
                raise AlreadyLabeledError(
                    f"item {item_id} already holds its single physician label"
                )
            if item.revision != expected_revision:
                raise RevisionConflictError(
                    f"item {item_id} is at revision {item.revision}, "
                    f"caller expected {expected_revision}"
                )
            event = {
                "type": "label",
                "item_id": item_id,
                "label": label,
                "reviewer": reviewer,
                "blind": blind,
                "revision": item.revision + 1,
                "ts": _now(),
            }
            self._append(event)
            self._apply(event)
            return EnsembleDecision(item_id, label, SOURCE_PHYSICIAN)

    def decisions(self, include_pending: bool = False) -> list[EnsembleDecision]:
        """Final decisions: the physician label where one exists, the AI
        prediction otherwise (pending items included only on request)."""
        out = []
        for item in self._items.values():
            if item.item_id in self._labels:
                out.append(EnsembleDecision(
                    item.item_id, self._labels[item.item_id].label, SOURCE_PHYSICIAN))
            elif include_pending:
                out.append(EnsembleDecision(
                    item.item_id, item.ai_prediction, SOURCE_AI))
        return out

    def labels(self) -> dict[str, PhysicianLabel]:
        return dict(self._labels)

    # -- reporting -----------------------------------------------------------

    def report(self) -> TriageReport | None:
        """Base vs ensemble accuracy with corrections applied so far; None
        when no evaluation has been loaded."""
        if self._task is None:
            return None
        items = self.items()
        pending = self.pending_items()
        base_cm = self.base_confusion()
        base_acc = ensemble_acc = None
        if base_cm is not None and base_cm.total > 0:
            base_acc = accuracy(base_cm)
            labeled_items = [i for i in items if i.status == STATUS_LABELED]
            corrected = ensemble_confusion(
                base_cm, labeled_items, self.decisions(), self._targets
            )
            ensemble_acc = accuracy(corrected)
        return TriageReport(
            task_kind=self._task.kind.value,
            base_accuracy=base_acc,
            ensemble_accuracy=ensemble_acc,
            flagged=len(items),
            pending=len(pending),
            labeled=len(items) - len(pending),
        )


# -- offline queue files ------------------------------------------------------


def export_queue(store: ReviewStore, path: Path | str) -> int:
    """Write pending items to a line-delimited file for offline labeling.

    The export is blind: no AI scores or predictions appear in it.
    """
    task = store.task
    if task is None:
        raise TriageError("no evaluation loaded; nothing to export")
    pending = store.pending_items()
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "schema": STORE_SCHEMA,
            "kind": "review_queue",
            "task": task.kind.value,
            "classes": list(task.classes),
        }
        fh.write(json.dumps(header) + "\n")
        for item in pending:
            fh.write(json.dumps({
                "item_id": item.item_id,
                "image_ref": item.image_ref,
                "revision": item.revision,
                "label": None,
            }) + "\n")
    return len(pending)


def import_labels(
    store: ReviewStore, path: Path | str, reviewer: str = ""
) -> list[EnsembleDecision]:
    """Ingest a filled-in queue file; every row must name a known item and a
    valid task class."""
    task = store.task
    if task is None:
        raise TriageError("no evaluation loaded; nothing to import")
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    for line in lines:
        row = json.loads(line)
        if row.get("kind") == "review_queue":
            continue
        rows.append(row)

    unknown = [r["item_id"] for r in rows if r["item_id"] not in
               {i.item_id for i in store.items()}]
    if unknown:
        raise UnknownItemError(f"import references unknown items: {unknown}")
    bad = [(r["item_id"], r.get("label")) for r in rows
           if r.get("label") not in task.classes]
    if bad:
        raise InvalidLabelError(f"import rows with invalid labels: {bad}")

    decisions = []
    for row in rows:
        item = store.get(row["item_id"])
        decisions.append(store.submit_label(
            item_id=row["item_id"],
            label=row["label"],
            reviewer=row.get("reviewer") or reviewer,
            expected_revision=row.get("revision", item.revision),
        ))
    return decisions
