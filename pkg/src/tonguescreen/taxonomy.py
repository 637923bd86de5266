"""Lesion class universe, benign/pre-cancerous risk mapping, and task definitions."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class TaxonomyError(ValueError):
    """Unknown lesion class code or malformed task."""


class RiskLabel(str, Enum):
    BENIGN = "benign"
    PRE_CANCEROUS = "pre_cancerous"


class LesionClass(str, Enum):
    OT = "OT"
    FT = "FT"
    GT = "GT"
    HT = "HT"
    PFP = "PFP"
    ST = "ST"
    LP = "LP"
    EP = "EP"

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @property
    def clinical_features(self) -> str:
        return _CLINICAL_FEATURES[self]


_DISPLAY_NAMES = {
    LesionClass.OT: "Oral Thrush",
    LesionClass.FT: "Fissured Tongue",
    LesionClass.GT: "Geographic Tongue",
    LesionClass.HT: "Hairy Tongue",
    LesionClass.PFP: "Pigmented Fungiform Papillae",
    LesionClass.ST: "Strawberry Tongue",
    LesionClass.LP: "Leukoplakia",
    LesionClass.EP: "Erythroplakia",
}

_CLINICAL_FEATURES = {
    LesionClass.OT: "Thick white or cream-coloured deposits on the tongue surface.",
    LesionClass.FT: "Cracks of varying depth and size across the top and edges of the tongue.",
    LesionClass.GT: "Smooth red patches of varying size with an irregular white border.",
    LesionClass.HT: "Hair-like coating of varying colour on the top of the tongue.",
    LesionClass.PFP: "Small dark spots over the tongue papillae.",
    LesionClass.ST: "Swollen red tongue with a bumpy, berry-like surface.",
    LesionClass.LP: "White patches, often on the lateral border, that cannot be scraped off.",
    LesionClass.EP: "Raised or smooth fiery red patch that bleeds easily when scraped.",
}

_RISK_MAP = {
    LesionClass.OT: RiskLabel.BENIGN,
    LesionClass.FT: RiskLabel.BENIGN,
    LesionClass.GT: RiskLabel.BENIGN,
    LesionClass.HT: RiskLabel.BENIGN,
    LesionClass.PFP: RiskLabel.BENIGN,
    LesionClass.ST: RiskLabel.BENIGN,
    LesionClass.LP: RiskLabel.PRE_CANCEROUS,
    LesionClass.EP: RiskLabel.PRE_CANCEROUS,
}

RISK_DISPLAY_NAMES = {
    RiskLabel.BENIGN: "Benign",
    RiskLabel.PRE_CANCEROUS: "Pre-cancerous",
}

# Fixed class order for the 5-class task; confusion-matrix axes and reports
# depend on this order staying stable across runs.
MULTICLASS_ORDER = (
    LesionClass.HT,
    LesionClass.FT,
    LesionClass.GT,
    LesionClass.ST,
    LesionClass.LP,
)

BINARY_ORDER = (RiskLabel.BENIGN, RiskLabel.PRE_CANCEROUS)


class TaskKind(str, Enum):
    BINARY = "binary"
    MULTICLASS = "multiclass"


@dataclass(frozen=True)
class TaskSpec:
    """An inference task: class count and the ordered class list."""

    kind: TaskKind
    n: int
    classes: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.kind == TaskKind.BINARY:
            expected = tuple(r.value for r in BINARY_ORDER)
            if self.n != 2 or self.classes != expected:
                raise TaxonomyError(f"binary task must have classes {expected}")
        elif self.kind == TaskKind.MULTICLASS:
            expected = tuple(c.value for c in MULTICLASS_ORDER)
            if self.n != 5 or self.classes != expected:
                raise TaxonomyError(f"multiclass task must have classes {expected}")
        else:
            raise TaxonomyError(f"unknown task kind: {self.kind!r}")

    def class_index(self, cls: str) -> int:
        try:
            return self.classes.index(cls)
        except ValueError:
            raise TaxonomyError(
                f"class {cls!r} is not one of the task classes {self.classes}"
            ) from None


def binary_task() -> TaskSpec:
    return TaskSpec(TaskKind.BINARY, 2, tuple(r.value for r in BINARY_ORDER))


def multiclass_task() -> TaskSpec:
    return TaskSpec(TaskKind.MULTICLASS, 5, tuple(c.value for c in MULTICLASS_ORDER))


def task_from_kind(kind: str | TaskKind) -> TaskSpec:
    kind = TaskKind(kind)
    return binary_task() if kind == TaskKind.BINARY else multiclass_task()


def parse_lesion(code: str) -> LesionClass:
    try:
        return LesionClass(code)
    except ValueError:
        known = ", ".join(c.value for c in LesionClass)
        raise TaxonomyError(f"unknown lesion class code {code!r} (known: {known})") from None


def risk_of(lesion: LesionClass | str) -> RiskLabel:
    """Map a lesion class to its clinical risk label. Total over the 8 codes."""
    if not isinstance(lesion, LesionClass):
        lesion = parse_lesion(lesion)
    return _RISK_MAP[lesion]


def classes_for(task: TaskSpec) -> list[str]:
    """Ordered class list for a task; length equals task.n."""
    return list(task.classes)


def effective_class(lesion: LesionClass, task: TaskSpec) -> str:
    """The class a record contributes under a task: its risk label for the
    binary task, its own code for the multiclass task."""
    if task.kind == TaskKind.BINARY:
        return risk_of(lesion).value
    if lesion.value not in task.classes:
        raise TaxonomyError(
            f"lesion class {lesion.value} is not part of the {task.kind.value} task"
        )
    return lesion.value


def class_display(task: TaskSpec, cls: str) -> tuple[str, str]:
    """(display_name, clinical_features) for a task class code."""
    if task.kind == TaskKind.BINARY:
        risk = RiskLabel(cls)
        detail = (
            "Resolves with treatment of the underlying condition."
            if risk == RiskLabel.BENIGN
            else "High risk of cancerous transformation; needs early identification."
        )
        return RISK_DISPLAY_NAMES[risk], detail
    lesion = parse_lesion(cls)
    return lesion.display_name, lesion.clinical_features
