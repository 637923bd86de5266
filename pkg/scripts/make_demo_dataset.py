#!/usr/bin/env python3
"""Generate a synthetic demo image set plus its labels CSV.

The clinical photographs behind the original study are private, so this
writes class-coded synthetic images (distinct colour/texture per lesion
class) that make the whole pipeline runnable end to end. Binary mode emits
two visual families (solid warm = benign HT, cool stripes = pre-cancerous
LP); multiclass mode emits five.
"""

import argparse
from pathlib import Path

import numpy as np
from PIL import Image


def solid(rng, warm=True, size=(128, 128)):
    img = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    if warm:
        img[:, :] = (rng.integers(170, 230), rng.integers(40, 90),
                     rng.integers(40, 90))
    else:
        img[:, :] = (rng.integers(40, 90), rng.integers(40, 90),
                     rng.integers(170, 230))
    return img


def stripes(rng, horizontal=True, size=(128, 128)):
    img = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    period = int(rng.integers(6, 14))
    c1 = (rng.integers(20, 60), rng.integers(40, 90), rng.integers(170, 230))
    c2 = (rng.integers(120, 170), rng.integers(170, 230), rng.integers(170, 230))
    for i in range(size[1] if horizontal else size[0]):
        band = c1 if (i // period) % 2 == 0 else c2
        if horizontal:
            img[i, :] = band
        else:
            img[:, i] = band
    return img


def checker(rng, size=(128, 128)):
    img = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    cell = int(rng.integers(10, 22))
    c1 = (rng.integers(150, 220), rng.integers(150, 220), rng.integers(40, 90))
    c2 = (rng.integers(40, 90), rng.integers(150, 220), rng.integers(150, 220))
    for y in range(size[1]):
        for x in range(0, size[0], cell):
            band = c1 if ((y // cell) + (x // cell)) % 2 == 0 else c2
            img[y, x:x + cell] = band
    return img


def gradient(rng, size=(128, 128)):
    img = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    start = rng.integers(0, 80, size=3)
    end = rng.integers(170, 255, size=3)
    for y in range(size[1]):
        t = y / (size[1] - 1)
        img[y, :] = (start * (1 - t) + end * t).astype(np.uint8)
    return img


BINARY_MAKERS = {
    "HT": lambda rng: solid(rng, warm=True),
    "LP": lambda rng: stripes(rng, horizontal=True),
}

MULTICLASS_MAKERS = {
    "HT": lambda rng: solid(rng, warm=True),
    "FT": lambda rng: stripes(rng, horizontal=False),
    "GT": lambda rng: checker(rng),
    "ST": lambda rng: gradient(rng),
    "LP": lambda rng: stripes(rng, horizontal=True),
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_data", help="output directory")
    parser.add_argument("--task", choices=["binary", "multiclass"],
                        default="binary")
    parser.add_argument("--per-class", type=int, default=100,
                        help="images per lesion class (default 100)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    makers = BINARY_MAKERS if args.task == "binary" else MULTICLASS_MAKERS
    out = Path(args.out)
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    rows = []
    for i in range(args.per_class):
        for cls, maker in makers.items():
            base = maker(rng)
            noise = rng.integers(-6, 7, size=base.shape)
            arr = np.clip(base.astype(int) + noise, 0, 255).astype(np.uint8)
            name = f"{cls.lower()}_{i:04d}.jpg"
            Image.fromarray(arr).save(images / name, quality=95)
            rows.append(f"{name},{cls}")

    labels = out / "labels.csv"
    labels.write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {len(rows)} images to {images} and labels to {labels}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
