import numpy as np
import pytest
from hypothesis import given, strategies as st

from poemlab.errors import LengthMismatch
from poemlab.metrics import MetricsReport, aupr, auroc, evaluate, fpr_at_tpr, id_accuracy, threshold_at_tpr

from .oracles import auroc_pairs, average_precision_sweep, fpr_sweep


def test_threshold_examples():
    assert threshold_at_tpr([2.5] * 10) == 2.5
    assert threshold_at_tpr(np.arange(1, 101)) == 6
    assert threshold_at_tpr([4.0, -1.0, 3.0], 1.0) == -1.0


def test_fpr_examples():
    ids = np.arange(1, 101, dtype=float)
    assert fpr_at_tpr(ids, ids - 200) == 0.0
    assert fpr_at_tpr(ids, ids) == 0.95
    assert fpr_at_tpr(ids, ids + 200) == 1.0


def test_auroc_examples():
    assert auroc([5.0, 6.0], [1.0, 2.0]) == 1.0
    assert auroc([1.0, 1.0], [1.0, 1.0, 1.0]) == 0.5
    assert auroc([3.0, 1.0], [2.0, 0.0]) == 0.75


def test_aupr_examples():
    assert aupr([5.0, 6.0], [1.0, 2.0]) == 1.0
    assert aupr([1.0], [2.0]) == 0.5
    assert aupr([3.0, 1.0], [2.0, 0.0]) == pytest.approx(5 / 6, abs=1e-15)


def test_accuracy_examples():
    assert id_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert id_accuracy([1, 1], [2, 2]) == 0.0
    assert id_accuracy([1, 2, 3, 3], [1, 2, 3, 1]) == 0.75
    assert id_accuracy(np.array([[0.0, 0.0], [0.0, 1.0]]), [1, 2]) == 1.0  # tie -> class 1
    with pytest.raises(LengthMismatch):
        id_accuracy([1, 2], [1])


tie_scores = st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=40)


@given(tie_scores, tie_scores, st.sampled_from([0.95, 0.5, 0.8, 1.0, 0.1]))
def test_against_brute_force(a, b, tpr):
    assert auroc(a, b) == pytest.approx(auroc_pairs(a, b), abs=1e-12)
    want_fpr, want_gamma = fpr_sweep(a, b, tpr)
    assert threshold_at_tpr(a, tpr) == want_gamma
    assert fpr_at_tpr(a, b, tpr) == want_fpr
    assert aupr(a, b) == pytest.approx(average_precision_sweep(a, b), abs=1e-12)


@given(tie_scores, tie_scores)
def test_auroc_antisymmetry(a, b):
    assert auroc(a, b) + auroc(b, a) == pytest.approx(1.0, abs=1e-12)


@given(tie_scores, tie_scores)
def test_monotone_invariance(a, b):
    f = lambda v: np.exp(np.asarray(v) / 3.0) * 7 - 2  # noqa: E731
    assert auroc(f(a), f(b)) == pytest.approx(auroc(a, b), abs=1e-12)
    assert aupr(f(a), f(b)) == pytest.approx(aupr(a, b), abs=1e-12)
    assert fpr_at_tpr(f(a), f(b)) == fpr_at_tpr(a, b)


def test_report_roundtrip():
    r = evaluate([3.0, 1.0, 2.2], [2.0, 0.0], [1, 2, 2], [1, 2, 1])
    assert r.auroc == pytest.approx(auroc_pairs([3.0, 1.0, 2.2], [2.0, 0.0]))
    assert MetricsReport.from_json(r.to_json()) == r
    assert MetricsReport.from_csv(r.to_csv()) == r
    assert r.to_csv().splitlines()[0] == "fpr95,auroc,aupr,id_acc,gamma"
    assert '"schema_version": 1' in r.to_json()


def test_empty_scores_rejected():
    with pytest.raises(ValueError):
        auroc([], [1.0])
