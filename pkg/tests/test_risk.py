import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semsurprise.risk import (
    CostMatrix,
    auroc,
    confusion_matrix,
    evaluate_predictions,
    f1_scores,
    fpr_at_tpr,
    load_cost_matrix,
    nsr,
    save_cost_matrix,
    stratified_split,
)

COSTS = CostMatrix.default().costs


def random_config(r):
    n = r.integers(1, 60, size=3)
    n[1:] = np.maximum(n[1:], 1)
    y = np.repeat([0, 1, 2], n)
    return y, r.integers(0, 3, len(y))


def test_nsr_axioms_over_random_configurations():
    r = np.random.default_rng(0)
    for _ in range(1000):
        y, pred = random_config(r)
        assert nsr(y, np.zeros_like(y)) == 1.0
        assert nsr(y, y) == 0.0
        base = nsr(y, pred)
        wrong = np.flatnonzero(pred != y)
        if len(wrong):
            i = r.choice(wrong)
            fixed = pred.copy()
            fixed[i] = y[i]
            assert nsr(y, fixed) <= base
            assert nsr(y, fixed) < base or COSTS[y[i], pred[i]] == 0


def test_nsr_hand_example():
    y = np.array([0] * 30 + [1] * 20 + [2] * 15)
    pred = y.copy()
    pred[30:40] = 0  # 10 Near -> ID
    pred[50:55] = 1  # 5 Far -> Near
    # (10 * 5 + 5 * 2) / (5 * 20 + 6 * 15)
    assert nsr(y, pred) == pytest.approx(60 / 190, abs=1e-15)


def test_nsr_needs_ood():
    with pytest.raises(ValueError):
        nsr([0, 0], [0, 1])


def test_cost_matrix_rules(tmp_path):
    bad = COSTS.copy()
    bad[1, 0] = 4
    with pytest.raises(ValueError):
        CostMatrix(bad)
    custom = COSTS.copy()
    custom[0, 2] = 3.5
    save_cost_matrix(CostMatrix(custom), tmp_path / "c.csv")
    assert load_cost_matrix(tmp_path / "c.csv") == CostMatrix(custom)


def test_f1_cases():
    y = np.array([0, 1, 2, 0])
    per, macro = f1_scores(y, y)
    assert macro == 1.0 and per.tolist() == [1.0, 1.0, 1.0]
    per, macro = f1_scores([0, 0, 1], [0, 1, 1])
    assert per[2] == 0.0
    # ID: tp1 fp0 fn1 -> 2/3; Near: tp1 fp1 fn0 -> 2/3
    assert per[0] == pytest.approx(2 / 3) and per[1] == pytest.approx(2 / 3)
    assert macro == pytest.approx(4 / 9)


def test_f1_hand_matrix():
    cm = np.array([[8, 1, 1], [2, 5, 3], [0, 1, 4]])
    y = np.concatenate([np.full(cm[i, j], i) for i in range(3) for j in range(3)])
    p = np.concatenate([np.full(cm[i, j], j) for i in range(3) for j in range(3)])
    per, macro = f1_scores(y, p)
    np.testing.assert_allclose(per, [16 / 20, 10 / 17, 8 / 13])
    assert macro == pytest.approx((16 / 20 + 10 / 17 + 8 / 13) / 3)


def brute_f1(y, p):
    out = []
    for c in range(3):
        tp = sum(1 for a, b in zip(y, p) if a == c and b == c)
        fp = sum(1 for a, b in zip(y, p) if a != c and b == c)
        fn = sum(1 for a, b in zip(y, p) if a == c and b != c)
        out.append(0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
    return out


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=500))
def test_f1_brute_force(pairs):
    y, p = map(np.array, zip(*pairs))
    per, macro = f1_scores(y, p)
    want = brute_f1(y, p)
    assert np.max(np.abs(per - want)) < 1e-8
    assert abs(macro - np.mean(want)) < 1e-8


def brute_auroc(id_s, ood_s):
    wins = sum(1.0 if o > i else 0.5 if o == i else 0.0 for o in ood_s for i in id_s)
    return wins / (len(id_s) * len(ood_s))


def brute_fpr95(id_s, ood_s):
    best = None
    for t in sorted(set(id_s) | set(ood_s)):
        tpr = np.mean(np.asarray(ood_s) >= t)
        if tpr >= 0.95:
            best = t
    return float(np.mean(np.asarray(id_s) >= best))


def test_binary_metric_cases():
    assert auroc([0.1, 0.2], [0.8, 0.9]) == 1.0
    assert fpr_at_tpr([0.1, 0.2], [0.8, 0.9]) == 0.0
    assert auroc([0.5, 0.5, 0.5], [0.5, 0.5]) == 0.5


@pytest.mark.parametrize("seed", range(20))
def test_auroc_pair_counting(seed):
    r = np.random.default_rng(seed)
    id_s = np.round(r.normal(0, 1, 20), 1)
    ood_s = np.round(r.normal(0.7, 1, 20), 1)
    assert abs(auroc(id_s, ood_s) - brute_auroc(id_s, ood_s)) < 1e-8


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), n_id=st.integers(1, 250), n_ood=st.integers(1, 250), decimals=st.integers(0, 3))
def test_fpr95_and_auroc_brute_force(seed, n_id, n_ood, decimals):
    r = np.random.default_rng(seed)
    id_s = np.round(r.normal(0, 1, n_id), decimals)
    ood_s = np.round(r.normal(1, 1, n_ood), decimals)
    assert abs(fpr_at_tpr(id_s, ood_s) - brute_fpr95(id_s, ood_s)) < 1e-8
    assert abs(auroc(id_s, ood_s) - brute_auroc(id_s, ood_s)) < 1e-8


def test_lower_is_ood_flips():
    assert auroc([0.9, 0.8], [0.1, 0.2], higher_is_ood=False) == 1.0


def test_confusion_matrix_cases(rng):
    y = np.array([0, 1, 2, 2])
    np.testing.assert_array_equal(confusion_matrix(y, y), np.diag([1, 1, 2]))
    cm = confusion_matrix(y, np.zeros(4, dtype=int))
    assert cm[:, 1:].sum() == 0 and cm[:, 0].tolist() == [1, 1, 2]
    t, p = rng.integers(0, 3, 30), rng.integers(0, 3, 30)
    tally = np.zeros((3, 3), dtype=int)
    for a, b in zip(t, p):
        tally[a, b] += 1
    np.testing.assert_array_equal(confusion_matrix(t, p), tally)


def test_evaluate_predictions():
    y = np.array([0, 1, 2])
    rep = evaluate_predictions(y, y)
    assert rep.nsr == 0.0 and rep.macro_f1 == 1.0


def test_stratified_split_proportions():
    tiers = np.repeat([0, 1, 2], [40, 20, 10])
    tr, te = stratified_split(tiers, 0.5, seed=0)
    assert len(np.intersect1d(tr, te)) == 0 and len(tr) + len(te) == 70
    assert np.bincount(tiers[te]).tolist() == [20, 10, 5]
    tr2, te2 = stratified_split(tiers, 0.5, seed=0)
    assert np.array_equal(te, te2)
