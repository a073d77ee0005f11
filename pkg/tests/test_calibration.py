import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from winovis.calibration import LabeledPair, agreement_curve, default_grid, select_threshold


def constructed_pairs():
    """25 positives spread over (0.45, 0.9), 25 negatives over (0, 0.35).

    Deterministic stand-in for the hand-labeled inspection set: any
    threshold between the negative ceiling and the positive floor separates
    the two groups perfectly.
    """
    positives = np.linspace(0.46, 0.89, 25)
    negatives = np.linspace(0.01, 0.34, 25)
    pairs = [LabeledPair(f"p{k}", float(v), True) for k, v in enumerate(positives)]
    pairs += [LabeledPair(f"n{k}", float(v), False) for k, v in enumerate(negatives)]
    return pairs


class TestAgreementCurve:
    def test_all_positive_at_one(self):
        pairs = [LabeledPair(f"i{k}", 1.0, True) for k in range(5)]
        curve = dict(agreement_curve(pairs, default_grid()))
        for t, a in curve.items():
            assert a == (1.0 if t < 1.0 else 0.0)

    def test_constructed_set_has_full_agreement_plateau(self):
        curve = dict(agreement_curve(constructed_pairs(), default_grid()))
        assert curve[0.35] == 1.0
        assert curve[0.4] == 1.0
        assert curve[0.3] < 1.0   # a negative at 0.34 is misclassified
        assert curve[0.5] < 1.0   # a positive at 0.46 is misclassified

    def test_single_pair_hand_evaluation(self):
        curve = agreement_curve([LabeledPair("a", 0.5, False)], [0.4, 0.6])
        assert curve == [(0.4, 0.0), (0.6, 1.0)]

    def test_empty_inputs_error(self):
        with pytest.raises(ValueError, match="no labeled pairs"):
            agreement_curve([], [0.5])
        with pytest.raises(ValueError, match="empty threshold grid"):
            agreement_curve([LabeledPair("a", 0.5, True)], [])

    def test_grid_must_ascend(self):
        with pytest.raises(ValueError, match="ascending"):
            agreement_curve([LabeledPair("a", 0.5, True)], [0.4, 0.4])

    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=40),
           st.integers(0, 20))
    def test_label_flip_mirrors_curve(self, raw, grid_seed):
        pairs = [LabeledPair(f"i{k}", v, label) for k, (v, label) in enumerate(raw)]
        flipped = [LabeledPair(p.instance_id, p.iou_value, not p.human_positive) for p in pairs]
        grid = default_grid()
        for (t1, a1), (t2, a2) in zip(agreement_curve(pairs, grid),
                                      agreement_curve(flipped, grid)):
            assert t1 == t2
            assert a1 == pytest.approx(1.0 - a2)

    @given(st.permutations(list(range(8))))
    def test_permutation_invariance(self, order):
        base = constructed_pairs()[:8]
        shuffled = [base[i] for i in order]
        grid = default_grid()
        assert agreement_curve(base, grid) == agreement_curve(shuffled, grid)


class TestSelectThreshold:
    def test_smallest_argmax(self):
        assert select_threshold([(0.2, 0.8), (0.4, 1.0), (0.6, 1.0)]) == 0.4

    def test_constant_curve_picks_first(self):
        assert select_threshold([(0.1, 0.7), (0.2, 0.7), (0.3, 0.7)]) == 0.1

    def test_constructed_set(self):
        pairs = constructed_pairs()
        assert select_threshold(agreement_curve(pairs, default_grid())) == 0.35
        late_grid = [round(0.4 + 0.05 * k, 10) for k in range(13)]
        assert select_threshold(agreement_curve(pairs, late_grid)) == 0.4

    def test_returns_grid_member_with_max_agreement(self):
        rng = np.random.default_rng(5)
        pairs = [LabeledPair(f"i{k}", float(v), bool(rng.integers(2)))
                 for k, v in enumerate(rng.random(30))]
        curve = agreement_curve(pairs, default_grid())
        chosen = select_threshold(curve)
        lookup = dict(curve)
        assert chosen in lookup
        assert lookup[chosen] == max(a for _, a in curve)

    def test_empty_curve_errors(self):
        with pytest.raises(ValueError):
            select_threshold([])


class TestLabeledPair:
    def test_range_check(self):
        with pytest.raises(ValueError):
            LabeledPair("a", 1.2, True)
