import numpy as np
import pytest
from hypothesis import given, strategies as st

from tonguescreen.metrics import ConfusionMatrix, accuracy, confusion
from tonguescreen.taxonomy import binary_task, multiclass_task
from tonguescreen.triage import (
    AiPrediction,
    AlreadyLabeledError,
    EnsembleDecision,
    InvalidLabelError,
    PendingItemsError,
    ReviewStore,
    RevisionConflictError,
    TriageError,
    UnknownItemError,
    ensemble_confusion,
    export_queue,
    flag_for_review,
    import_labels,
)

BINARY = binary_task()
FIVE = multiclass_task()


def prediction(item_id, predicted, score=0.9, image_ref="img.jpg"):
    if predicted == "pre_cancerous":
        scores = (1 - score, score)
    else:
        scores = (score, 1 - score)
    return AiPrediction(item_id, image_ref, scores, predicted)


def binary_eval_fixture():
    """One misclassification out of 50: 20 benign all correct, 29/30 pre."""
    preds, targets = [], {}
    for i in range(20):
        preds.append(prediction(f"b{i}", "benign"))
        targets[f"b{i}"] = "benign"
    for i in range(29):
        preds.append(prediction(f"p{i}", "pre_cancerous"))
        targets[f"p{i}"] = "pre_cancerous"
    preds.append(prediction("p29", "benign"))
    targets["p29"] = "pre_cancerous"
    return preds, targets


# -- flagging ---------------------------------------------------------------


def test_flag_evaluation_mode_flags_exact_misclassifications():
    preds, targets = binary_eval_fixture()
    items = flag_for_review(preds, BINARY, targets=targets)
    assert [i.item_id for i in items] == ["p29"]
    assert items[0].flag_reason == "known_misclassification"
    assert items[0].status == "pending"
    assert items[0].revision == 0


def test_flag_five_class_two_errors():
    preds = [AiPrediction(f"g{i}", "x.jpg", (0, 0, 0, 1.0, 0), "ST")
             for i in range(2)]
    preds += [AiPrediction(f"h{i}", "x.jpg", (1.0, 0, 0, 0, 0), "HT")
              for i in range(3)]
    targets = {"g0": "GT", "g1": "GT", "h0": "HT", "h1": "HT", "h2": "HT"}
    items = flag_for_review(preds, FIVE, targets=targets)
    assert sorted(i.item_id for i in items) == ["g0", "g1"]


def test_flag_deployment_mode_uses_threshold():
    preds = [AiPrediction("a", "x.jpg", (0.55, 0.45), "benign"),
             AiPrediction("b", "x.jpg", (0.95, 0.05), "benign")]
    items = flag_for_review(preds, BINARY, confidence_threshold=0.6)
    assert [i.item_id for i in items] == ["a"]
    assert items[0].flag_reason == "low_confidence"


def test_flag_requires_targets_or_threshold():
    with pytest.raises(TriageError):
        flag_for_review([], BINARY)
    with pytest.raises(TriageError):
        flag_for_review([], BINARY, confidence_threshold=0.0)
    with pytest.raises(TriageError):
        flag_for_review([], BINARY, confidence_threshold=1.5)


def test_flag_missing_targets_rejected():
    preds = [prediction("a", "benign")]
    with pytest.raises(TriageError, match="a"):
        flag_for_review(preds, BINARY, targets={})


# -- ensemble correction ------------------------------------------------------


def test_ensemble_corrects_binary_reference_matrix():
    preds, targets = binary_eval_fixture()
    base = confusion([p.predicted for p in preds],
                     [targets[p.item_id] for p in preds], BINARY.classes)
    assert base.counts.tolist() == [[20, 1], [0, 29]]
    items = flag_for_review(preds, BINARY, targets=targets)
    decisions = [EnsembleDecision("p29", "pre_cancerous", "physician")]
    corrected = ensemble_confusion(base, items, decisions, targets)
    assert corrected.counts.tolist() == [[20, 0], [0, 30]]
    assert accuracy(corrected) == 1.0


def test_ensemble_corrects_five_class_reference_matrix():
    counts = np.diag([12, 12, 10, 12, 12])
    counts[3, 2] = 2  # two GT targets predicted ST
    base = ConfusionMatrix(FIVE.classes, counts)
    items = [
        flag_item("g0"), flag_item("g1"),
    ]
    decisions = [EnsembleDecision("g0", "GT", "physician"),
                 EnsembleDecision("g1", "GT", "physician")]
    corrected = ensemble_confusion(base, items, decisions,
                                   {"g0": "GT", "g1": "GT"})
    assert corrected.counts.tolist() == np.diag([12, 12, 12, 12, 12]).tolist()
    assert accuracy(corrected) == 1.0


def flag_item(item_id, predicted="ST", task=FIVE):
    return flag_for_review(
        [AiPrediction(item_id, "x.jpg", (0, 0, 0, 1.0, 0), predicted)],
        task, targets={item_id: "GT"},
    )[0]


def test_ensemble_zero_flagged_is_identity():
    base = ConfusionMatrix(BINARY.classes, [[20, 0], [0, 30]])
    corrected = ensemble_confusion(base, [], [], {})
    assert (corrected.counts == base.counts).all()


def test_ensemble_unlabeled_items_error_lists_ids():
    base = ConfusionMatrix(BINARY.classes, [[20, 1], [0, 29]])
    preds, targets = binary_eval_fixture()
    items = flag_for_review(preds, BINARY, targets=targets)
    with pytest.raises(PendingItemsError) as exc:
        ensemble_confusion(base, items, [], targets)
    assert exc.value.pending_ids == ["p29"]


@st.composite
def random_evaluations(draw):
    n = draw(st.integers(min_value=2, max_value=40))
    classes = list(FIVE.classes)
    preds = draw(st.lists(st.sampled_from(classes), min_size=n, max_size=n))
    targets = draw(st.lists(st.sampled_from(classes), min_size=n, max_size=n))
    return preds, targets


@given(random_evaluations())
def test_oracle_physician_always_reaches_perfect_accuracy(case):
    preds, targets = case
    ids = [f"i{k}" for k in range(len(preds))]
    target_map = dict(zip(ids, targets))
    ai = [AiPrediction(i, "x.jpg", (1.0, 0, 0, 0, 0), p)
          for i, p in zip(ids, preds)]
    items = flag_for_review(ai, FIVE, targets=target_map)
    base = confusion(preds, targets, FIVE.classes)
    decisions = [EnsembleDecision(i.item_id, target_map[i.item_id], "physician")
                 for i in items]
    corrected = ensemble_confusion(base, items, decisions, target_map)
    assert accuracy(corrected) == 1.0
    assert accuracy(corrected) >= accuracy(base)


@given(random_evaluations(), st.randoms(use_true_random=False))
def test_arbitrary_physician_only_changes_flagged_items(case, rnd):
    preds, targets = case
    ids = [f"i{k}" for k in range(len(preds))]
    target_map = dict(zip(ids, targets))
    ai = [AiPrediction(i, "x.jpg", (1.0, 0, 0, 0, 0), p)
          for i, p in zip(ids, preds)]
    items = flag_for_review(ai, FIVE, targets=target_map)
    base = confusion(preds, targets, FIVE.classes)
    # physician of arbitrary skill
    decisions = [EnsembleDecision(i.item_id, rnd.choice(list(FIVE.classes)),
                                  "physician") for i in items]
    corrected = ensemble_confusion(base, items, decisions, target_map)
    # independent oracle: recount from per-item final classes
    final_by_id = {d.item_id: d.final_class for d in decisions}
    finals = [final_by_id.get(i, p) for i, p in zip(ids, preds)]
    expected = confusion(finals, targets, FIVE.classes)
    assert (corrected.counts == expected.counts).all()


# -- review store ----------------------------------------------------------


@pytest.fixture
def store(tmp_path):
    preds, targets = binary_eval_fixture()
    base = confusion([p.predicted for p in preds],
                     [targets[p.item_id] for p in preds], BINARY.classes)
    items = flag_for_review(preds, BINARY, targets=targets)
    s = ReviewStore(tmp_path / "store.jsonl")
    s.load_evaluation(BINARY, base, {i.item_id: targets[i.item_id] for i in items},
                      items)
    return s


def test_submit_label_flow(store):
    item = store.pending_items()[0]
    decision = store.submit_label(item.item_id, "pre_cancerous", "dr-a",
                                  expected_revision=item.revision)
    assert decision.source == "physician"
    assert decision.final_class == "pre_cancerous"
    assert store.get(item.item_id).status == "labeled"
    assert store.get(item.item_id).revision == item.revision + 1


def test_second_submit_rejected(store):
    item = store.pending_items()[0]
    store.submit_label(item.item_id, "pre_cancerous", "dr-a", item.revision)
    with pytest.raises(AlreadyLabeledError):
        store.submit_label(item.item_id, "benign", "dr-b", item.revision + 1)


def test_stale_revision_conflict(store):
    item = store.pending_items()[0]
    with pytest.raises(RevisionConflictError):
        store.submit_label(item.item_id, "pre_cancerous", "dr-a",
                           expected_revision=item.revision + 7)
    assert store.get(item.item_id).status == "pending"


def test_label_outside_task_classes_rejected(store):
    item = store.pending_items()[0]
    with pytest.raises(InvalidLabelError):
        store.submit_label(item.item_id, "HT", "dr-a", item.revision)


def test_unknown_item_rejected(store):
    with pytest.raises(UnknownItemError):
        store.submit_label("ghost", "benign", "dr-a", 0)


def test_decisions_follow_single_label_rule(store):
    item = store.pending_items()[0]
    assert store.decisions() == []
    pending_view = store.decisions(include_pending=True)
    assert pending_view == [EnsembleDecision(item.item_id, item.ai_prediction, "ai")]
    store.submit_label(item.item_id, "pre_cancerous", "dr-a", item.revision)
    assert store.decisions() == [
        EnsembleDecision(item.item_id, "pre_cancerous", "physician")
    ]


def test_report_before_and_after_labeling(store):
    report = store.report()
    assert report.base_accuracy == 0.98
    assert report.ensemble_accuracy == 0.98  # nothing corrected yet
    assert report.pending == 1
    item = store.pending_items()[0]
    store.submit_label(item.item_id, "pre_cancerous", "dr-a", item.revision)
    report = store.report()
    assert report.ensemble_accuracy == 1.0
    assert report.pending == 0
    assert report.labeled == 1


def test_fresh_store_reports_empty(tmp_path):
    s = ReviewStore(tmp_path / "fresh.jsonl")
    assert s.report() is None


def test_audit_log_replay_reconstructs_state(store, tmp_path):
    item = store.pending_items()[0]
    store.submit_label(item.item_id, "pre_cancerous", "dr-a", item.revision)
    reopened = ReviewStore(store.path)
    assert reopened.decisions() == store.decisions()
    assert reopened.report() == store.report()
    label_events = [e for e in reopened.audit_entries() if e["type"] == "label"]
    assert len(label_events) == 1
    assert label_events[0]["reviewer"] == "dr-a"


def test_failed_submits_leave_no_audit_trace(store):
    before = len(store.audit_entries())
    item = store.pending_items()[0]
    with pytest.raises(RevisionConflictError):
        store.submit_label(item.item_id, "benign", "dr-a", item.revision + 1)
    assert len(store.audit_entries()) == before


# -- offline queue files -------------------------------------------------------


def test_export_is_blind_and_counts_pending(store, tmp_path):
    out = tmp_path / "queue.jsonl"
    count = export_queue(store, out)
    assert count == 1
    text = out.read_text()
    assert "ai_" not in text
    assert "p29" in text


def test_import_oracle_labels_reaches_perfect_accuracy(store, tmp_path):
    out = tmp_path / "queue.jsonl"
    export_queue(store, out)
    lines = out.read_text().splitlines()
    import json

    filled = [lines[0]]
    for line in lines[1:]:
        row = json.loads(line)
        row["label"] = store.targets()[row["item_id"]]
        row["reviewer"] = "dr-oracle"
        filled.append(json.dumps(row))
    out.write_text("\n".join(filled))
    decisions = import_labels(store, out)
    assert len(decisions) == 1
    assert store.report().ensemble_accuracy == 1.0


def test_import_unknown_item_rejected(store, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"item_id": "ghost", "label": "benign"}\n')
    with pytest.raises(UnknownItemError, match="ghost"):
        import_labels(store, bad)


def test_import_invalid_label_lists_offenders(store, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"item_id": "p29", "label": "ZZ"}\n')
    with pytest.raises(InvalidLabelError, match="ZZ"):
        import_labels(store, bad)
