#!/usr/bin/env python3
"""Run the full screening experiment as the documented CLI sequence:

    ingest -> split -> train -> evaluate -> roc -> flag -> review export
    -> (oracle import, demo only) -> report

Works on any labeled image directory; by default it generates the synthetic
demo set first. With --oracle-review the exported queue is filled from the
recorded targets, standing in for the physician so the whole loop closes
unattended.
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path

from tonguescreen.cli import main as cli

SCRIPTS = Path(__file__).parent


def run(argv: list[str]) -> None:
    print(f"$ tonguescreen {' '.join(argv)}")
    code = cli(argv)
    if code != 0:
        raise SystemExit(code)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--run-dir", default="run")
    parser.add_argument("--images", help="existing image directory (else demo data)")
    parser.add_argument("--labels", help="labels CSV for --images")
    parser.add_argument("--task", choices=["binary", "multiclass"], default="binary")
    parser.add_argument("--backbone", default="SqueezeNet")
    parser.add_argument("--provider", choices=["torchvision", "seeded"],
                        default="torchvision")
    parser.add_argument("--runs", type=int, default=5)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--per-class", type=int, default=100)
    parser.add_argument("--split-seed", type=int, default=0)
    parser.add_argument("--oracle-review", action="store_true",
                        help="fill the review queue from recorded targets (demo)")
    args = parser.parse_args()

    if args.images:
        images, labels = args.images, args.labels
        if not labels:
            parser.error("--labels is required with --images")
    else:
        demo = Path(args.run_dir).parent / "demo_data"
        subprocess.run(
            [sys.executable, str(SCRIPTS / "make_demo_dataset.py"),
             "--out", str(demo), "--task", args.task,
             "--per-class", str(args.per_class)],
            check=True,
        )
        images, labels = str(demo / "images"), str(demo / "labels.csv")

    base = ["--run-dir", args.run_dir]
    run(["ingest", *base, "--images", images, "--labels", labels,
         "--task", args.task])
    run(["split", *base, "--seed", str(args.split_seed)])
    train_args = ["train", *base, "--backbone", args.backbone,
                  "--provider", args.provider, "--runs", str(args.runs)]
    if args.epochs:
        train_args += ["--epochs", str(args.epochs)]
    run(train_args)
    run(["evaluate", *base, "--backbone", args.backbone])
    if args.task == "binary":
        run(["roc", *base, "--backbone", args.backbone])
    run(["flag", *base, "--backbone", args.backbone])
    run(["review", "export", *base])

    if args.oracle_review:
        from tonguescreen.triage import ReviewStore

        review_dir = Path(args.run_dir) / "review"
        store = ReviewStore(review_dir / "store.jsonl")
        targets = store.targets()
        queue = review_dir / "queue.jsonl"
        lines = queue.read_text(encoding="utf-8").splitlines()
        filled = [lines[0]]
        for line in lines[1:]:
            row = json.loads(line)
            row["label"] = targets[row["item_id"]]
            row["reviewer"] = "oracle"
            filled.append(json.dumps(row))
        queue.write_text("\n".join(filled) + "\n", encoding="utf-8")
        run(["review", "import", str(queue), *base])

    run(["report", *base])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
