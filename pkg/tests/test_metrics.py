from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msocc.metrics import (
    ConfusionMatrix,
    confusion_matrix,
    identity_probs,
    precision_recall,
    read_confusion_csv,
    row_normalize,
)
from msocc.survey import ImageRecord, SurveyDataError


def rec(true, pred):
    return ImageRecord("A", "2018-01-01T00:00:00Z", true, pred)


def test_all_correct_is_diagonal():
    cm = confusion_matrix([rec("lynx", "lynx"), rec("fox", "fox"), rec("fox", "fox")])
    assert cm.labels == ("fox", "lynx")
    np.testing.assert_array_equal(cm.counts, [[2, 0], [0, 1]])


def test_two_records():
    cm = confusion_matrix([rec("lynx", "lynx"), rec("lynx", "fox")])
    lynx = cm.labels.index("lynx")
    assert cm.counts[lynx, cm.labels.index("lynx")] == 1
    assert cm.counts[lynx, cm.labels.index("fox")] == 1


def test_fifty_records_against_tally():
    rng = np.random.default_rng(7)
    labels = ["lynx", "roe_deer", "chamois", "fox", "human"]
    records = [rec(rng.choice(labels), rng.choice(labels)) for _ in range(50)]
    cm = confusion_matrix(records)
    tally = Counter((r.label_true, r.label_pred) for r in records)
    for a, la in enumerate(cm.labels):
        for b, lb in enumerate(cm.labels):
            assert cm.counts[a, b] == tally.get((la, lb), 0)
    assert cm.total == 50


def test_missing_prediction_names_row():
    with pytest.raises(SurveyDataError, match="record 1"):
        confusion_matrix([rec("lynx", "lynx"), rec("fox", None)])


def test_identity_metrics():
    m = precision_recall(ConfusionMatrix(["a", "b", "c"], np.eye(3, dtype=int) * 4))
    assert m.accuracy == 1.0
    assert all(v == 1.0 for v in m.precision.values())
    assert all(v == 1.0 for v in m.recall.values())


def test_lynx_training_rates():
    # recall 19/20 and precision 87/100 need TP a multiple of 19 * 87
    tp, fn, fp = 1653, 87, 247
    counts = np.array([[tp, fn], [fp, 5000]])
    m = precision_recall(ConfusionMatrix(["lynx", "other"], counts))
    assert m.recall["lynx"] == 0.95
    assert m.precision["lynx"] == 0.87


def test_chamois_transfer_rates():
    # recall 2/25 and precision 41/50
    tp, fn, fp = 82, 943, 18
    counts = np.array([[tp, fn], [fp, 3000]])
    m = precision_recall(ConfusionMatrix(["chamois", "other"], counts))
    assert m.recall["chamois"] == 0.08
    assert m.precision["chamois"] == 0.82


def test_undefined_metrics_are_none():
    # red deer never occurs and is never predicted
    counts = np.array([[5, 1, 0], [2, 7, 0], [0, 0, 0]])
    m = precision_recall(ConfusionMatrix(["a", "b", "red_deer"], counts))
    assert m.precision["red_deer"] is None
    assert m.recall["red_deer"] is None
    assert "precision(red_deer)" in m.undefined
    d = m.to_dict()
    assert d["classes"][2]["recall"] is None


def test_row_normalize_simple():
    probs = row_normalize(ConfusionMatrix(["a", "b"], [[1, 3], [0, 2]]))
    np.testing.assert_allclose(probs.probs, [[0.25, 0.75], [0.0, 1.0]])
    np.testing.assert_array_equal(row_normalize(ConfusionMatrix(["a", "b"], np.diag([3, 9]))).probs,
                                  np.eye(2))


def test_row_normalize_against_hand_division():
    counts = [[40, 3, 1, 6], [2, 30, 0, 8], [25, 9, 4, 12], [0, 1, 0, 59]]
    probs = row_normalize(ConfusionMatrix(["lynx", "roe_deer", "chamois", "fox"], counts))
    for a, row in enumerate(counts):
        total = sum(row)
        for b, v in enumerate(row):
            assert probs.probs[a, b] == pytest.approx(float(Fraction(v, total)), abs=1e-15)
    assert np.abs(probs.probs.sum(axis=1) - 1).max() < 1e-12


def test_row_normalize_drops_zero_rows_and_rejects_empty():
    with pytest.warns(UserWarning):
        probs = row_normalize(ConfusionMatrix(["a", "b"], [[0, 0], [1, 1]]))
    assert probs.true_labels == ("b",)
    with pytest.raises(ValueError, match="empty confusion matrix"):
        row_normalize(ConfusionMatrix(["a", "b"], np.zeros((2, 2), int)))


def test_confusion_csv_round_trip(tmp_path):
    cm = ConfusionMatrix(["a", "b"], [[1, 3], [2, 2]])
    cm.to_csv(tmp_path / "c.csv")
    probs = read_confusion_csv(tmp_path / "c.csv")
    np.testing.assert_allclose(probs.probs, [[0.25, 0.75], [0.5, 0.5]])
    assert probs.pred_labels == ("a", "b")


def test_identity_probs_rows():
    p = identity_probs(["x", "y"])
    np.testing.assert_array_equal(p.row("y"), [0, 1])
    with pytest.raises(KeyError):
        p.row("z")


count_matrices = st.integers(1, 5).flatmap(
    lambda k: arrays(np.int64, (k, k), elements=st.integers(0, 20))
).filter(lambda a: a.sum() > 0)


@settings(max_examples=100, deadline=None)
@given(count_matrices, st.randoms(use_true_random=False))
def test_metric_properties(counts, rnd):
    labels = [f"c{k}" for k in range(counts.shape[0])]
    cm = ConfusionMatrix(labels, counts)
    m = precision_recall(cm)
    assert m.accuracy == np.trace(counts) / counts.sum()
    # support-weighted recall equals accuracy
    weighted = sum(m.recall[lab] * m.support[lab] for lab in labels if m.recall[lab] is not None)
    assert weighted / cm.total == pytest.approx(m.accuracy, abs=1e-12)
    for lab in labels:
        for v in (m.precision[lab], m.recall[lab]):
            assert v is None or 0.0 <= v <= 1.0
    order = list(range(len(labels)))
    rnd.shuffle(order)
    mp = precision_recall(cm.permuted(order))
    assert mp.precision == m.precision
    assert mp.recall == m.recall
