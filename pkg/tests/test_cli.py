import json

import numpy as np
import pytest
from PIL import Image

from tonguescreen.cli import main
from tonguescreen.dataset import load_manifest, load_split, balanced_split

from conftest import solid_warm, striped_cool


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    """Source images, labels CSV, and a run dir; includes one 'trap' image
    whose annotation says LP but whose pixels match the benign class, so a
    trained model deterministically misclassifies it."""
    root = tmp_path_factory.mktemp("cli_demo")
    src = root / "source"
    src.mkdir()
    rng = np.random.default_rng(7)
    rows = []
    for i in range(5):
        name = f"ht_{i:02d}.jpg"
        Image.fromarray(solid_warm(rng)).save(src / name, quality=95)
        rows.append(f"{name},HT")
    for i in range(4):
        name = f"lp_{i:02d}.jpg"
        Image.fromarray(striped_cool(rng)).save(src / name, quality=95)
        rows.append(f"{name},LP")
    Image.fromarray(solid_warm(rng)).save(src / "lp_trap.jpg", quality=95)
    rows.append("lp_trap.jpg,LP")
    labels = root / "labels.csv"
    labels.write_text("\n".join(rows) + "\n")
    return {"src": src, "labels": labels, "run": root / "run"}


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


def find_trap_seed(manifest) -> int:
    for seed in range(200):
        split = balanced_split(manifest, seed)
        if "lp_trap" in split.validation_ids:
            return seed
    raise AssertionError("no seed puts the trap image into validation")


@pytest.fixture(scope="module")
def pipeline(demo):
    """Run ingest -> split -> train once for the whole module."""
    run = demo["run"]
    assert run_cli("ingest", "--run-dir", run, "--images", demo["src"],
                   "--labels", demo["labels"], "--task", "binary") == 0
    manifest = load_manifest(run / "manifest.jsonl")
    seed = find_trap_seed(manifest)
    assert run_cli("split", "--run-dir", run, "--seed", seed) == 0
    assert run_cli(
        "train", "--run-dir", run, "--backbone", "SqueezeNet",
        "--provider", "seeded", "--runs", "1", "--epochs", "4",
        "--batch-size", "2", "--seed", "0",
    ) == 0
    return run


def test_ingest_writes_manifest_and_canonical_images(pipeline):
    manifest = load_manifest(pipeline / "manifest.jsonl")
    assert len(manifest.records) == 10
    assert (pipeline / "images" / "lp_trap.jpg").is_file()


def test_split_artifact(pipeline):
    split = load_split(pipeline / "split.json")
    assert len(split.train_ids) == 8
    assert len(split.validation_ids) == 2
    assert "lp_trap" in split.validation_ids


def test_train_artifacts(pipeline):
    run_dir = pipeline / "models" / "SqueezeNet_binary" / "run0"
    assert (run_dir / "weights.pt").is_file()
    assert (run_dir / "sidecar.json").is_file()
    assert (run_dir / "curve.csv").is_file()
    assert (run_dir / "split.json").is_file()
    summary = (pipeline / "reports" / "summary_binary.txt").read_text()
    assert "SqueezeNet" in summary
    assert "A_CC" in summary and "S_ENS" in summary


def test_unknown_backbone_lists_options(demo, capsys):
    code = run_cli("train", "--run-dir", demo["run"], "--backbone", "Foo")
    assert code == 1
    err = capsys.readouterr().err
    for name in ("AlexNet", "GoogLeNet", "Vgg19", "Inceptionv3",
                 "ResNet50", "SqueezeNet"):
        assert name in err


def test_evaluate_and_flag_and_review_roundtrip(pipeline, capsys):
    assert run_cli("evaluate", "--run-dir", pipeline,
                   "--backbone", "SqueezeNet") == 0
    confusion_txt = pipeline / "reports" / "SqueezeNet_binary_run0_confusion.txt"
    assert confusion_txt.is_file()

    assert run_cli("roc", "--run-dir", pipeline,
                   "--backbone", "SqueezeNet") == 0
    assert (pipeline / "reports" / "SqueezeNet_binary_run0_roc.csv").is_file()
    assert (pipeline / "reports" / "SqueezeNet_binary_run0_roc.png").is_file()

    capsys.readouterr()  # drop evaluate/roc human output
    assert run_cli("flag", "--run-dir", pipeline, "--backbone", "SqueezeNet",
                   "--json") == 0
    flagged = json.loads(capsys.readouterr().out)
    # validation = {one true benign, the mislabeled trap}: whatever the model
    # learned, exactly one of the two disagrees with its annotation
    assert flagged["flagged"] == 1

    assert run_cli("review", "export", "--run-dir", pipeline) == 0
    capsys.readouterr()
    queue_file = pipeline / "review" / "queue.jsonl"
    lines = queue_file.read_text().splitlines()
    assert len(lines) == 2  # header + one item
    assert "ai_" not in queue_file.read_text()

    from tonguescreen.triage import ReviewStore

    targets = ReviewStore(pipeline / "review" / "store.jsonl").targets()
    row = json.loads(lines[1])
    row["label"] = targets[row["item_id"]]
    row["reviewer"] = "dr-oracle"
    queue_file.write_text(lines[0] + "\n" + json.dumps(row) + "\n")
    assert run_cli("review", "import", str(queue_file),
                   "--run-dir", pipeline, "--json") == 0
    imported = json.loads(capsys.readouterr().out)
    assert imported["imported"] == 1
    assert imported["ensemble_accuracy"] == 1.0

    assert run_cli("report", "--run-dir", pipeline, "--json") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ensemble_accuracy"] == 1.0
    assert report["pending"] == 0
    assert (pipeline / "reports" / "accuracy_comparison_binary.png").is_file()


def test_review_import_invalid_label(pipeline, tmp_path, capsys):
    # self-contained: evaluate + flag may or may not have run in this session
    assert run_cli("evaluate", "--run-dir", pipeline,
                   "--backbone", "SqueezeNet") == 0
    capsys.readouterr()
    assert run_cli("flag", "--run-dir", pipeline, "--backbone", "SqueezeNet",
                   "--json") == 0
    flagged_id = json.loads(capsys.readouterr().out)["items"][0]
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"item_id": flagged_id, "label": "ZZ"}) + "\n")
    code = run_cli("review", "import", str(bad), "--run-dir", pipeline)
    assert code == 1
    assert "ZZ" in capsys.readouterr().err


def test_predict_with_overlay_and_corrupt_file(pipeline, demo, tmp_path, capsys):
    model_dir = pipeline / "models" / "SqueezeNet_binary" / "run0"
    corrupt = tmp_path / "corrupt.jpg"
    corrupt.write_bytes(b"not an image at all")
    out_dir = tmp_path / "overlays"
    code = run_cli(
        "predict", "--run-dir", pipeline, "--model", model_dir,
        "--images", demo["src"] / "ht_00.jpg", demo["src"] / "lp_00.jpg",
        corrupt, "--overlay", "--out-dir", out_dir, "--json",
    )
    assert code == 0  # partial success: two of three decoded
    captured = capsys.readouterr()
    payload = json.loads(captured.out)
    assert payload["failures"] == 1
    ok = [p for p in payload["predictions"] if "scores" in p]
    assert len(ok) == 2
    for entry in ok:
        assert sum(entry["scores"].values()) == pytest.approx(1.0, abs=1e-6)
    assert "corrupt.jpg" in captured.err
    assert (out_dir / "ht_00_pred.jpg").is_file()


def test_evaluate_without_model_fails_cleanly(demo, tmp_path, capsys):
    fresh = tmp_path / "fresh_run"
    assert run_cli("ingest", "--run-dir", fresh, "--images", demo["src"],
                   "--labels", demo["labels"], "--task", "binary") == 0
    code = run_cli("evaluate", "--run-dir", fresh, "--backbone", "SqueezeNet")
    assert code == 1
    assert "train" in capsys.readouterr().err
