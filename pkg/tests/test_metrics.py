import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentaug.metrics import ap, auc, eer, group_auc, report


def pairwise_auc_oracle(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def ap_sweep_oracle(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    thresholds = np.sort(np.unique(scores))[::-1]
    out = 0.0
    prev_recall = 0.0
    for t in thresholds:
        pred = scores >= t
        tp = int((pred & (labels == 1)).sum())
        precision = tp / int(pred.sum())
        recall = tp / n_pos
        out += (recall - prev_recall) * precision
        prev_recall = recall
    return out


def eer_sweep_oracle(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    thresholds = np.concatenate([np.sort(np.unique(scores)), [np.inf]])
    prev = None
    for t in thresholds:
        far = float((neg >= t).mean())
        frr = float((pos < t).mean())
        if frr - far == 0:
            return far
        if frr - far > 0:
            far0, frr0 = prev
            lam = -(frr0 - far0) / ((frr - far) - (frr0 - far0))
            return far0 + lam * (far - far0)
        prev = (far, frr)
    raise AssertionError("no crossing found")


def random_instance(rng, n_max=30, discrete=False):
    n = int(rng.integers(4, n_max + 1))
    while True:
        labels = rng.integers(0, 2, size=n)
        if 0 < labels.sum() < n:
            break
    if discrete:
        scores = rng.integers(0, 5, size=n).astype(float)  # forces ties
    else:
        scores = rng.standard_normal(n)
    return scores, labels


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0

    def test_half_wins(self):
        # pairwise oracle: pairs (0.8,0.9),(0.8,0.3),(0.4,0.9),(0.4,0.3) -> 2 wins
        assert auc([0.8, 0.9, 0.4, 0.3], [1, 0, 1, 0]) == 0.5

    def test_all_ties(self):
        assert auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [1, 1])

    @pytest.mark.parametrize("discrete", [False, True])
    def test_matches_pairwise_oracle(self, rng, discrete):
        for _ in range(100):
            scores, labels = random_instance(rng, discrete=discrete)
            assert auc(scores, labels) == pytest.approx(
                pairwise_auc_oracle(scores, labels), abs=1e-12
            )

    def test_complement_symmetry(self, rng):
        scores = rng.standard_normal(20)
        labels = rng.permutation([1] * 8 + [0] * 12)
        assert auc(scores, labels) + auc(-scores, labels) == pytest.approx(1.0)

    @given(st.integers(0, 2**16))
    @settings(max_examples=30, deadline=None)
    def test_monotone_transform_invariance(self, seed):
        g = np.random.default_rng(seed)
        scores, labels = random_instance(g)
        assert auc(np.exp(scores), labels) == pytest.approx(auc(scores, labels))


class TestApEer:
    def test_perfect(self):
        scores, labels = [3.0, 2.0, 1.0, 0.0], [1, 1, 0, 0]
        assert ap(scores, labels) == 1.0
        assert eer(scores, labels) == 0.0

    def test_inverted(self):
        scores, labels = [0.0, 1.0, 2.0, 3.0], [1, 1, 0, 0]
        assert eer(scores, labels) == 1.0

    @pytest.mark.parametrize("discrete", [False, True])
    def test_match_sweep_oracles(self, rng, discrete):
        for _ in range(100):
            scores, labels = random_instance(rng, n_max=20, discrete=discrete)
            assert ap(scores, labels) == pytest.approx(
                ap_sweep_oracle(scores, labels), abs=1e-9
            )
            assert eer(scores, labels) == pytest.approx(
                eer_sweep_oracle(scores, labels), abs=1e-9
            )

    def test_ap_of_constant_scores_is_prevalence(self, rng):
        # rank-accumulated AP can drop below prevalence for adversarial
        # rankings; the uninformative-scoring case pins it exactly
        for _ in range(20):
            _, labels = random_instance(rng)
            assert ap(np.zeros(len(labels)), labels) == pytest.approx(labels.mean())


class TestGroupAuc:
    def test_singleton_groups_reduce_to_auc(self, rng):
        scores, labels = random_instance(rng)
        groups = np.arange(len(scores))
        assert group_auc(scores, labels, groups) == pytest.approx(auc(scores, labels))

    def test_hand_averaged(self):
        scores = [0.9, 0.1, 0.4, 0.2]
        labels = [1, 1, 0, 0]
        groups = [0, 0, 1, 1]
        assert group_auc(scores, labels, groups) == 1.0

    def test_mixed_label_group_rejected(self):
        with pytest.raises(ValueError):
            group_auc([0.1, 0.9], [0, 1], [0, 0])


def test_report_fields(rng):
    scores, labels = random_instance(rng)
    r = report(scores, labels, split="test")
    assert 0.0 <= r.auc <= 1.0 and 0.0 <= r.eer <= 1.0 and 0.0 <= r.ap <= 1.0
    assert r.n_pos == int(labels.sum()) and r.n_neg == len(labels) - r.n_pos
