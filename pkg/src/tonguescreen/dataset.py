"""Image inventory, ROI cropping, backbone resizing, and reproducible
balanced train/validation splits."""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backbones import BackboneSpec
from .taxonomy import (
    LesionClass,
    RiskLabel,
    TaskSpec,
    effective_class,
    parse_lesion,
    risk_of,
    task_from_kind,
)

MANIFEST_SCHEMA = 1


class DatasetError(ValueError):
    pass


class IngestError(DatasetError):
    pass


class BalanceError(DatasetError):
    pass


class RoiError(DatasetError):
    pass


class RoiWarning(UserWarning):
    """A record without an ROI passed through cropping unmodified."""


@dataclass(frozen=True)
class Roi:
    """Crop rectangle in pixels; (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise RoiError(f"roi must have positive area, got {self}")
        if self.x < 0 or self.y < 0:
            raise RoiError(f"roi origin must be non-negative, got {self}")

    def within(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class ImageRecord:
    """One annotated photograph in the inventory."""

    id: str
    path: str
    lesion_class: LesionClass
    risk: RiskLabel
    width: int
    height: int
    roi: Roi | None = None
    annotator: str = ""

    def __post_init__(self) -> None:
        if self.risk != risk_of(self.lesion_class):
            raise DatasetError(
                f"record {self.id}: risk {self.risk.value} does not match "
                f"class {self.lesion_class.value}"
            )
        if self.roi is not None and not self.roi.within(self.width, self.height):
            raise RoiError(
                f"record {self.id}: roi {self.roi.as_tuple()} exceeds "
                f"{self.width}x{self.height} image bounds"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "class": self.lesion_class.value,
            "risk": self.risk.value,
            "width": self.width,
            "height": self.height,
            "roi": list(self.roi.as_tuple()) if self.roi else None,
            "annotator": self.annotator,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRecord":
        roi = Roi(*d["roi"]) if d.get("roi") else None
        return cls(
            id=d["id"],
            path=d["path"],
            lesion_class=parse_lesion(d["class"]),
            risk=RiskLabel(d["risk"]),
            width=int(d["width"]),
            height=int(d["height"]),
            roi=roi,
            annotator=d.get("annotator", ""),
        )


def _records_checksum(records: tuple[ImageRecord, ...]) -> str:
    lines = sorted(json.dumps(r.to_dict(), sort_keys=True) for r in records)
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable inventory of ingested records for one task."""

    records: tuple[ImageRecord, ...]
    task: TaskSpec
    created_at: str
    checksum: str

    def __post_init__(self) -> None:
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DatasetError(f"duplicate record ids: {dupes}")
        for r in self.records:
            effective_class(r.lesion_class, self.task)  # membership check

    @classmethod
    def build(cls, records, task: TaskSpec) -> "DatasetManifest":
        records = tuple(records)
        return cls(
            records=records,
            task=task,
            created_at=datetime.now(timezone.utc).isoformat(),
            checksum=_records_checksum(records),
        )

    def record(self, record_id: str) -> ImageRecord:
        for r in self.records:
            if r.id == record_id:
                return r
        raise DatasetError(f"no record with id {record_id!r}")

    def class_counts(self) -> dict[str, int]:
        counts = {c: 0 for c in self.task.classes}
        for r in self.records:
            counts[effective_class(r.lesion_class, self.task)] += 1
        return counts


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic train/validation partition of a manifest."""

    seed: int
    train_ids: tuple[str, ...]
    validation_ids: tuple[str, ...]
    train_fraction: float = 0.8

    def __post_init__(self) -> None:
        overlap = set(self.train_ids) & set(self.validation_ids)
        if overlap:
            raise DatasetError(f"train/validation overlap: {sorted(overlap)}")

    def to_dict(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "kind": "split",
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "train_ids": list(self.train_ids),
            "validation_ids": list(self.validation_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(
            seed=int(d["seed"]),
            train_ids=tuple(d["train_ids"]),
            validation_ids=tuple(d["validation_ids"]),
            train_fraction=float(d.get("train_fraction", 0.8)),
        )


def _parse_annotation(value) -> dict:
    if isinstance(value, str):
        return {"class": value, "roi": None, "annotator": None}
    return {
        "class": value["class"],
        "roi": value.get("roi"),
        "annotator": value.get("annotator"),
    }


def ingest(
    image_dir: Path | str,
    labels: Mapping[str, object],
    task: TaskSpec,
    out_dir: Path | str,
    annotator: str = "",
) -> DatasetManifest:
    """Build a manifest from a labeled file listing.

    Every listed file is decoded, converted to a canonical 8-bit RGB JPEG copy
    under out_dir, and recorded with its annotated class. Zero-byte and
    non-decodable files are rejected with the offending filename.
    """
    if not labels:
        raise IngestError("empty annotation listing: nothing to ingest")
    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = []
    seen_ids: set[str] = set()
    for filename in sorted(labels):
        ann = _parse_annotation(labels[filename])
        src = image_dir / filename
        if not src.is_file():
            raise IngestError(f"{filename}: file not found under {image_dir}")
        if src.stat().st_size == 0:
            raise IngestError(f"{filename}: zero-byte file")
        try:
            lesion = parse_lesion(ann["class"])
            effective_class(lesion, task)
        except Exception as exc:
            raise IngestError(f"{filename}: {exc}") from None
        try:
            with Image.open(src) as im:
                im.load()
                rgb = im.convert("RGB")
        except (UnidentifiedImageError, OSError) as exc:
            raise IngestError(f"{filename}: not a decodable image ({exc})") from None

        record_id = Path(filename).stem
        if record_id in seen_ids:
            raise IngestError(f"{filename}: duplicate record id {record_id!r}")
        seen_ids.add(record_id)

        canonical = out_dir / f"{record_id}.jpg"
        rgb.save(canonical, "JPEG", quality=95)
        roi = Roi(*ann["roi"]) if ann["roi"] else None
        records.append(
            ImageRecord(
                id=record_id,
                path=str(canonical.resolve()),
                lesion_class=lesion,
                risk=risk_of(lesion),
                width=rgb.width,
                height=rgb.height,
                roi=roi,
                annotator=ann["annotator"] or annotator,
            )
        )
    return DatasetManifest.build(records, task)


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    path = Path(path)
    header = {
        "schema": MANIFEST_SCHEMA,
        "kind": "manifest",
        "task": manifest.task.kind.value,
        "created_at": manifest.created_at,
        "checksum": manifest.checksum,
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for record in manifest.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise DatasetError(f"{path}: empty manifest file")
    header = json.loads(lines[0])
    records = tuple(ImageRecord.from_dict(json.loads(line)) for line in lines[1:])
    checksum = _records_checksum(records)
    if checksum != header.get("checksum"):
        raise DatasetError(f"{path}: checksum mismatch, manifest edited or corrupt")
    return DatasetManifest(
        records=records,
        task=task_from_kind(header["task"]),
        created_at=header["created_at"],
        checksum=checksum,
    )


def load_image(record: ImageRecord) -> Image.Image:
    with Image.open(record.path) as im:
        im.load()
        return im.convert("RGB")


def crop_roi(record: ImageRecord, image: Image.Image | None = None) -> Image.Image:
    """Extract exactly the ROI sub-image; the original file is not touched.

    Records without an ROI pass through unmodified with a RoiWarning: the
    de-identification contract is then the annotator's responsibility.
    """
    if image is None:
        image = load_image(record)
    if record.roi is None:
        warnings.warn(
            f"record {record.id} has no roi; passing full frame through",
            RoiWarning,
            stacklevel=2,
        )
        return image
    roi = record.roi
    if not roi.within(image.width, image.height):
        raise RoiError(
            f"record {record.id}: roi {roi.as_tuple()} exceeds actual "
            f"{image.width}x{image.height} image"
        )
    return image.crop((roi.x, roi.y, roi.x + roi.w, roi.y + roi.h))


def roi_crop_path(record: ImageRecord) -> Path:
    src = Path(record.path)
    return src.with_name(f"{src.stem}_roi{src.suffix}")


def ensure_roi_crop(record: ImageRecord) -> Path:
    """Write the ROI crop alongside the original with an `_roi` suffix and
    return its path; records without an ROI return the original path."""
    if record.roi is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RoiWarning)
            return Path(record.path)
    out = roi_crop_path(record)
    crop_roi(record).save(out, quality=95)
    return out


def resize_for(backbone: BackboneSpec, image: Image.Image) -> Image.Image:
    """Resize to the backbone's required W x H x 3 input.

    Direct bilinear resize, no letterboxing; grayscale inputs are replicated
    to three channels. Deterministic for fixed inputs.
    """
    if image.width == 0 or image.height == 0:
        raise DatasetError("cannot resize a zero-dimension image")
    w, h, _ = backbone.input_size
    rgb = image if image.mode == "RGB" else image.convert("RGB")
    if rgb.size == (w, h):
        return rgb.copy()
    return rgb.resize((w, h), Image.Resampling.BILINEAR)


def _feasible_counts(count: int, fraction: float) -> tuple[int, int]:
    q = Fraction(fraction).limit_denominator(1000).denominator
    lower = (count // q) * q
    return lower, lower + q


def balanced_split(
    manifest: DatasetManifest, seed: int, train_fraction: float = 0.8
) -> SplitSpec:
    """Per-class split at train_fraction, deterministic for a fixed seed.

    Requires a balanced manifest (equal per-class counts) whose class size
    divides evenly at the requested fraction.
    """
    if seed < 0:
        raise DatasetError("split seed must be non-negative")
    if not 0 < train_fraction < 1:
        raise DatasetError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    groups: dict[str, list[str]] = {c: [] for c in manifest.task.classes}
    for record in manifest.records:
        groups[effective_class(record.lesion_class, manifest.task)].append(record.id)

    counts = {c: len(ids) for c, ids in groups.items()}
    if len(set(counts.values())) != 1 or 0 in counts.values():
        raise BalanceError(f"manifest is not balanced across classes: {counts}")
    per_class = next(iter(counts.values()))

    take = per_class * train_fraction
    if abs(take - round(take)) > 1e-9:
        lower, upper = _feasible_counts(per_class, train_fraction)
        raise BalanceError(
            f"per-class count {per_class} does not split integrally at "
            f"{train_fraction}; nearest feasible per-class counts: {lower} or {upper}"
        )
    take = round(take)

    rng = np.random.default_rng(seed)
    train: list[str] = []
    validation: list[str] = []
    for cls in manifest.task.classes:
        ids = sorted(groups[cls])
        shuffled = [ids[i] for i in rng.permutation(len(ids))]
        train.extend(shuffled[:take])
        validation.extend(shuffled[take:])
    return SplitSpec(
        seed=seed,
        train_ids=tuple(train),
        validation_ids=tuple(validation),
        train_fraction=train_fraction,
    )


def save_split(split: SplitSpec, path: Path | str) -> None:
    Path(path).write_text(json.dumps(split.to_dict(), indent=2), encoding="utf-8")


def load_split(path: Path | str) -> SplitSpec:
    return SplitSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def epoch_order(split: SplitSpec, epoch: int, seed: int) -> list[str]:
    """Permutation of train_ids for one epoch, deterministic in (seed, epoch)."""
    if epoch < 0:
        raise DatasetError(f"epoch must be >= 0, got {epoch}")
    if seed < 0:
        raise DatasetError("shuffle seed must be non-negative")
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    return [split.train_ids[i] for i in rng.permutation(len(split.train_ids))]
