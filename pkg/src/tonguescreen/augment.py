"""Online training-time augmentation: independent random horizontal and
vertical flips, never applied to validation images."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetError, SplitSpec


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentPolicy:
    """Per-axis flip probabilities; structurally train-only."""

    flip_horizontal_p: float = 0.5
    flip_vertical_p: float = 0.5
    enabled_for: str = "train_only"

    def __post_init__(self) -> None:
        for name in ("flip_horizontal_p", "flip_vertical_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise AugmentError(f"{name} must lie in [0, 1], got {p}")
        if self.enabled_for != "train_only":
            raise AugmentError("augmentation applies to training items only")

    def to_dict(self) -> dict:
        return {
            "flip_horizontal_p": self.flip_horizontal_p,
            "flip_vertical_p": self.flip_vertical_p,
            "enabled_for": self.enabled_for,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentPolicy":
        return cls(
            flip_horizontal_p=float(d.get("flip_horizontal_p", 0.5)),
            flip_vertical_p=float(d.get("flip_vertical_p", 0.5)),
        )


def flip(image: np.ndarray, horizontal: bool, vertical: bool) -> np.ndarray:
    """Deterministic flip core; applying the same flip twice restores the
    original byte-exactly."""
    out = image
    if horizontal:
        out = np.flip(out, axis=1)
    if vertical:
        out = np.flip(out, axis=0)
    return np.ascontiguousarray(out)


def augment(
    image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Flip each axis independently with its configured probability.

    Output shape equals input shape. Draw order is horizontal then vertical,
    so a given rng state maps to one reproducible outcome.
    """
    do_horizontal = rng.random() < policy.flip_horizontal_p
    do_vertical = rng.random() < policy.flip_vertical_p
    return flip(image, do_horizontal, do_vertical)


def is_augmentable(record_id: str, split: SplitSpec) -> bool:
    """True iff the id belongs to the training partition."""
    if record_id in split.train_ids:
        return True
    if record_id in split.validation_ids:
        return False
    raise DatasetError(f"id {record_id!r} belongs to neither split partition")


def _stable_id_entropy(item_id: str) -> int:
    digest = hashlib.sha256(item_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def presentation_rng(seed: int, epoch: int, item_id: str) -> np.random.Generator:
    """Independent rng stream per (seed, epoch, item) presentation.

    Streams are stable across runs and safe to hand to parallel workers.
    """
    return np.random.default_rng(
        np.random.SeedSequence([seed, epoch, _stable_id_entropy(item_id)])
    )
