import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multiasl.metrics import actionness_auc, average_precision, map_c, map_s, per_class_ap


def oracle_ap(scores, labels):
    """Precision at each positive computed by counting, ties ranked by original index."""
    n = len(scores)
    precisions = []
    for i in range(n):
        if not labels[i]:
            continue
        # rank of i: items strictly above, or tied with a smaller index, come first
        ahead = [j for j in range(n) if scores[j] > scores[i] or (scores[j] == scores[i] and j < i)]
        rank = len(ahead) + 1
        hits = sum(1 for j in ahead if labels[j]) + 1
        precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def oracle_map(scores, labels):
    aps = [oracle_ap(list(scores[:, c]), list(labels[:, c])) for c in range(scores.shape[1]) if labels[:, c].any()]
    return sum(aps) / len(aps)


def oracle_auc(p, mask):
    pos = [v for v, m in zip(p, mask) if m]
    neg = [v for v, m in zip(p, mask) if not m]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def test_ap_worked_example():
    ap = average_precision([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0])
    assert abs(ap - (1 + 2 / 3) / 2) < 1e-12


def test_ap_perfect_and_single():
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert average_precision([0.3], [1]) == 1.0


def test_ap_needs_a_positive():
    with pytest.raises(ValueError):
        average_precision([0.1, 0.2], [0, 0])


def test_ap_ties_follow_index_order():
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0


def test_map_c_examples():
    labels = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])
    assert map_c(labels * 0.9 + 0.05, labels) == 1.0
    # class 0 ranked perfectly, class 1 has its positive at rank 2
    scores = np.array([[0.9, 0.8], [0.1, 0.5], [0.8, 0.1], [0.2, 0.2]])
    labels = np.array([[1, 1], [0, 0], [1, 0], [0, 0]])
    labels[1, 1] = 0
    scores[:, 1] = [0.5, 0.9, 0.1, 0.2]
    assert per_class_ap(scores, labels)[1] == 0.5
    assert map_c(scores, labels) == 0.75


def test_map_excludes_empty_classes():
    labels = np.array([[1, 0], [0, 0]])
    aps = per_class_ap(np.array([[0.9, 0.2], [0.1, 0.3]]), labels)
    assert aps[0] == 1.0 and np.isnan(aps[1])
    with pytest.raises(ValueError):
        map_c(np.zeros((2, 2)), np.zeros((2, 2)))


def test_map_s_two_samples():
    scores = np.array([[0.9, 0.1, 0.5], [0.2, 0.8, 0.9]])
    labels = np.array([[1, 0, 0], [1, 0, 0]])
    assert map_s(scores, labels) == (1.0 + 1 / 3) / 2


def test_against_independent_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m, c = int(rng.integers(2, 21)), int(rng.integers(1, 7))
        scores = rng.random((m, c))
        labels = (rng.random((m, c)) < 0.4).astype(int)
        labels[0, 0] = 1
        assert abs(map_c(scores, labels) - oracle_map(scores, labels)) < 1e-10
        assert abs(map_s(scores, labels) - oracle_map(scores.T, labels.T)) < 1e-10


def test_oracle_on_20x6_table_with_ties():
    rng = np.random.default_rng(1)
    scores = rng.integers(0, 4, (20, 6)) / 4  # heavy ties
    labels = (rng.random((20, 6)) < 0.5).astype(int)
    labels[0] = 1
    assert abs(map_c(scores, labels) - oracle_map(scores, labels)) < 1e-10


def test_map_on_transpose_symmetric_table():
    rng = np.random.default_rng(2)
    s = rng.random((5, 5))
    s = s + s.T
    lab = (rng.random((5, 5)) < 0.5).astype(int)
    lab = lab | lab.T
    assert abs(map_c(s, lab) - map_s(s, lab)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10_000))
def test_ap_invariant_under_increasing_transform(n, seed):
    rng = np.random.default_rng(seed)
    scores = rng.random(n)
    labels = rng.integers(0, 2, n)
    labels[0] = 1
    ap = average_precision(scores, labels)
    assert 0 <= ap <= 1
    for f in (np.exp, lambda s: 5 * s + 2, lambda s: s ** 3):
        assert abs(average_precision(f(scores), labels) - ap) < 1e-12


def test_auc_examples():
    assert actionness_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert actionness_auc([0.4] * 5, [1, 0, 1, 0, 0]) == 0.5
    with pytest.raises(ValueError):
        actionness_auc([0.1, 0.2], [1, 1])


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        T = int(rng.integers(2, 40))
        p = np.round(rng.random(T), 1)  # ties on purpose
        mask = rng.integers(0, 2, T)
        mask[0], mask[-1] = 1, 0
        assert abs(actionness_auc(p, mask) - oracle_auc(p, mask)) < 1e-12
