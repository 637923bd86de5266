import numpy as np
import pytest
from hypothesis import settings
from PIL import Image

from tonguescreen.dataset import DatasetManifest, ImageRecord
from tonguescreen.taxonomy import (
    LesionClass,
    binary_task,
    multiclass_task,
    risk_of,
)

settings.register_profile("suite", deadline=None, max_examples=100)
settings.load_profile("suite")


def pytest_runtest_logreport(report):
    # one pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\n[acceptance] {name}: {report.outcome.upper()}")


def solid_warm(rng: np.random.Generator, size=(96, 96)) -> np.ndarray:
    """Solid warm-coloured image; the 'benign' half of the separable toy set."""
    img = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    img[:, :] = (rng.integers(170, 230), rng.integers(40, 90), rng.integers(40, 90))
    noise = rng.integers(-6, 7, size=img.shape)
    return np.clip(img.astype(int) + noise, 0, 255).astype(np.uint8)


def striped_cool(rng: np.random.Generator, size=(96, 96)) -> np.ndarray:
    """Cool horizontally-striped image; the 'pre-cancerous' half."""
    img = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    period = int(rng.integers(4, 10))
    c1 = (rng.integers(20, 60), rng.integers(40, 90), rng.integers(170, 230))
    c2 = (rng.integers(120, 170), rng.integers(170, 230), rng.integers(170, 230))
    for i in range(size[1]):
        img[i, :] = c1 if (i // period) % 2 == 0 else c2
    noise = rng.integers(-6, 7, size=img.shape)
    return np.clip(img.astype(int) + noise, 0, 255).astype(np.uint8)


def write_separable_images(
    out_dir, n_per_class: int, seed: int = 42, size=(96, 96)
) -> dict[str, LesionClass]:
    """Write a 2-class separable toy image set; returns id -> lesion class."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels: dict[str, LesionClass] = {}
    for i in range(n_per_class):
        for lesion, maker in ((LesionClass.HT, solid_warm),
                              (LesionClass.LP, striped_cool)):
            rid = f"{lesion.value.lower()}_{i:03d}"
            Image.fromarray(maker(rng, size)).save(out_dir / f"{rid}.jpg", quality=95)
            labels[rid] = lesion
    return labels


def separable_manifest(out_dir, n_per_class: int, seed: int = 42,
                       size=(96, 96)) -> DatasetManifest:
    """Binary-task manifest over a freshly written separable toy set."""
    labels = write_separable_images(out_dir, n_per_class, seed=seed, size=size)
    records = []
    for rid, lesion in sorted(labels.items()):
        path = out_dir / f"{rid}.jpg"
        with Image.open(path) as im:
            width, height = im.size
        records.append(ImageRecord(
            id=rid,
            path=str(path),
            lesion_class=lesion,
            risk=risk_of(lesion),
            width=width,
            height=height,
        ))
    return DatasetManifest.build(records, binary_task())


def placeholder_records(per_class: dict[LesionClass, int]):
    """Records with fake paths for split/shuffle tests that never touch disk."""
    records = []
    for lesion, count in per_class.items():
        for i in range(count):
            rid = f"{lesion.value.lower()}{i:04d}"
            records.append(ImageRecord(
                id=rid,
                path=f"/nonexistent/{rid}.jpg",
                lesion_class=lesion,
                risk=risk_of(lesion),
                width=640,
                height=480,
            ))
    return records


@pytest.fixture
def binary_manifest_200():
    records = placeholder_records({
        LesionClass.HT: 50, LesionClass.FT: 50,
        LesionClass.LP: 50, LesionClass.EP: 50,
    })
    return DatasetManifest.build(records, binary_task())


@pytest.fixture
def multiclass_manifest_300():
    records = placeholder_records({cls: 60 for cls in (
        LesionClass.HT, LesionClass.FT, LesionClass.GT,
        LesionClass.ST, LesionClass.LP)})
    return DatasetManifest.build(records, multiclass_task())
