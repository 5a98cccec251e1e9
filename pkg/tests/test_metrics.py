import numpy as np
import pytest

from xdhs import metrics as X
from xdhs import model as M
from xdhs.rng import Rng

# Frozen two-class oracle: counts [[25, 5], [10, 60]] with rows = truth
FIXTURE = np.array([[25, 5], [10, 60]], dtype=np.int64)
FIXTURE_OA = 0.85
FIXTURE_KAPPA = 0.29 / 0.44          # (0.85 - 0.56) / (1 - 0.56)
FIXTURE_AA = (25 / 30 + 60 / 70) / 2


def test_fixture_values():
    cm = X.ConfusionMatrix(FIXTURE.copy())
    assert abs(X.oa(cm) - FIXTURE_OA) < 1e-9
    assert abs(X.kappa(cm) - FIXTURE_KAPPA) < 1e-9
    assert abs(X.aa(cm) - FIXTURE_AA) < 1e-9
    assert abs(FIXTURE_KAPPA - 0.659090909090909) < 1e-12
    assert abs(FIXTURE_AA - 0.845238095238095) < 1e-12


def test_accumulate_counts():
    truth = np.array([[1, 1, 2], [2, 2, 0]])
    pred = np.array([[1, 2, 2], [2, 1, 1]])
    rows, cols = np.nonzero(truth > 0)
    cm = X.accumulate(pred, truth, rows, cols, C=2)
    assert np.array_equal(cm.counts, [[1, 1], [1, 2]])
    assert cm.n == 5


def test_accumulate_rejects_unlabeled_and_zero_pred():
    truth = np.array([[0, 1]])
    pred = np.array([[1, 1]])
    with pytest.raises(ValueError, match="truth"):
        X.accumulate(pred, truth, [0], [0], C=2)
    with pytest.raises(ValueError, match="prediction"):
        X.accumulate(np.array([[1, 0]]), np.array([[1, 1]]), [0, 0], [0, 1], C=2)


def test_perfect_and_worst_case():
    cm = X.ConfusionMatrix(np.diag([10, 20, 30]).astype(np.int64))
    assert X.oa(cm) == 1.0 and X.aa(cm) == 1.0 and abs(X.kappa(cm) - 1.0) < 1e-12
    anti = X.ConfusionMatrix(np.array([[0, 10], [10, 0]], dtype=np.int64))
    assert X.oa(anti) == 0.0 and X.kappa(anti) < 0


def test_empty_matrix_rejected():
    cm = X.ConfusionMatrix(np.zeros((3, 3), dtype=np.int64))
    for fn in (X.oa, X.aa, X.kappa):
        with pytest.raises(ValueError, match="empty"):
            fn(cm)


def test_kappa_undefined_when_pe_one():
    # everything is class 1 both in truth and prediction: pe = 1
    cm = X.ConfusionMatrix(np.array([[10, 0], [0, 0]], dtype=np.int64))
    with pytest.raises(ValueError, match="kappa"):
        X.kappa(cm)


def test_aa_missing_class_warn_and_strict():
    cm = X.ConfusionMatrix(np.array([[8, 2, 0], [1, 9, 0], [0, 0, 0]], dtype=np.int64))
    with pytest.warns(UserWarning, match="absent"):
        val = X.aa(cm)
    assert abs(val - (0.8 + 0.9) / 2) < 1e-12
    with pytest.raises(ValueError, match="no true pixels"):
        X.aa(cm, strict=True)
    rec = X.per_class_recall(cm)
    assert rec[0] == 0.8 and rec[1] == 0.9 and np.isnan(rec[2])


def test_permutation_invariance():
    rng = Rng(1)
    counts = (rng.uniform(16).reshape(4, 4) * 50).astype(np.int64) + 1
    cm = X.ConfusionMatrix(counts)
    perm = np.array([2, 0, 3, 1])
    cmp = X.ConfusionMatrix(counts[np.ix_(perm, perm)])
    assert abs(X.oa(cm) - X.oa(cmp)) < 1e-12
    assert abs(X.aa(cm) - X.aa(cmp)) < 1e-12
    assert abs(X.kappa(cm) - X.kappa(cmp)) < 1e-12


def _brute_force(cm):
    # independent recomputation straight from the definitions
    counts = cm.counts
    n = counts.sum()
    po = sum(counts[i, i] for i in range(cm.C)) / n
    pe = sum(counts[i, :].sum() * counts[:, i].sum() for i in range(cm.C)) / (n * n)
    recalls = [counts[i, i] / counts[i, :].sum()
               for i in range(cm.C) if counts[i, :].sum() > 0]
    return po, sum(recalls) / len(recalls), (po - pe) / (1 - pe)


def test_thousand_random_fixtures_against_brute_force():
    rng = Rng(2)
    checked = 0
    while checked < 1000:
        C = 2 + rng.randint_below(6)
        counts = (rng.uniform(C * C).reshape(C, C) * 40).astype(np.int64)
        counts[np.arange(C), np.arange(C)] += 1  # every class present, pe < 1
        cm = X.ConfusionMatrix(counts)
        exp_oa, exp_aa, exp_kappa = _brute_force(cm)
        assert abs(X.oa(cm) - exp_oa) < 1e-9
        assert abs(X.aa(cm) - exp_aa) < 1e-9
        assert abs(X.kappa(cm) - exp_kappa) < 1e-9
        checked += 1


def test_kappa_never_exceeds_oa():
    rng = Rng(3)
    for _ in range(200):
        C = 2 + rng.randint_below(4)
        counts = (rng.uniform(C * C).reshape(C, C) * 30).astype(np.int64)
        counts[np.arange(C), np.arange(C)] += 1
        cm = X.ConfusionMatrix(counts)
        assert X.kappa(cm) <= X.oa(cm) + 1e-12


def test_report_and_text():
    rep = X.report(X.ConfusionMatrix(FIXTURE.copy()))
    text = X.report_text(rep)
    assert "oa = 0.85" in text
    assert "kappa = " in text and "aa = " in text
    assert len(rep.per_class_recall) == 2


def test_predict_tie_breaks_to_lowest_class():
    bb = M.Backbone(3, 4, 1, rng=None)  # zero weights -> all logits equal
    cube = np.zeros((4, 4, 3), dtype=np.float32)
    pred = X.predict(bb, cube)
    assert np.all(pred == 1)


def test_evaluate_end_to_end_shapes():
    bb = M.build_backbone(3, 2, 1, Rng(4))
    cube = Rng(5).gaussian(5 * 5 * 3).reshape(5, 5, 3).astype(np.float32)
    truth = np.ones((5, 5), dtype=np.int64)
    truth[0, 0] = 2
    rows, cols = np.nonzero(truth > 0)
    rep = X.evaluate(bb, cube, truth, rows, cols)
    assert 0.0 <= rep.oa <= 1.0
    assert len(rep.per_class_recall) == 2
