"""Key-set similarity ranking and the subregion selection loss."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fploc.errors import FplocError
from fploc.model import Fingerprint, LabeledSample, partition
from fploc.subregion import (
    LossCurve,
    choose_m,
    mji,
    rank_subregions,
    score_subregions,
    selection_indicator,
    selection_loss,
    selection_loss_curve,
)
from tests.conftest import make_rfm

feature_sets = st.frozensets(
    st.text(alphabet="abcdefgh", min_size=1, max_size=2), max_size=10
)


class TestMji:
    def test_identical_sets_score_one(self):
        assert mji({"a", "b", "c"}, {"a", "b", "c"}) == 1.0

    def test_measured_superset_still_scores_one(self):
        assert mji({"a", "b", "c", "d"}, {"a", "b", "c"}) == 1.0

    def test_small_coverage_scores_low(self):
        assert mji({"a"}, {"a", "b", "c", "d", "e"}) == pytest.approx(0.2)

    def test_empty_cell_scores_zero(self):
        assert mji({"a", "b"}, set()) == 0.0

    def test_four_qualitative_configurations(self):
        cell = {f"f{i}" for i in range(10)}
        nine_subset = set(sorted(cell)[:9])
        superset = cell | {"extra"}
        two_subset = set(sorted(cell)[:2])
        one_overlap = {sorted(cell)[0], "x1", "x2", "x3"}
        scores = [
            mji(nine_subset, cell),
            mji(superset, cell),
            mji(two_subset, cell),
            mji(one_overlap, cell),
        ]
        assert scores[1] >= scores[0] > scores[2] >= scores[3]
        assert min(scores[0], scores[1]) >= 0.9
        assert max(scores[2], scores[3]) <= 0.2

    def test_plain_jaccard_penalises_supersets(self):
        cell = {"a", "b", "c"}
        assert mji(cell | {"d"}, cell, formula="jaccard") == pytest.approx(0.75)
        assert mji(cell | {"d"}, cell, formula="coverage") == 1.0

    @settings(max_examples=100, deadline=None)
    @given(feature_sets, feature_sets)
    def test_bounds_and_degenerate_cases(self, user, cell):
        for formula in ("coverage", "jaccard"):
            score = mji(user, cell, formula)
            assert 0.0 <= score <= 1.0
            if user and user == cell:
                assert score == 1.0
            if not user & cell:
                assert score == 0.0


def _three_cell_index():
    # 6x2 m -> 3 cells of 2x2; distinct feature pools per cell
    return partition(
        make_rfm(
            {
                (1.0, 1.0): {"a": -50.0, "b": -55.0},
                (3.0, 1.0): {"b": -60.0, "c": -65.0},
                (5.0, 1.0): {"d": -70.0},
            },
            width=6.0,
            height=2.0,
        )
    )


class TestRankSubregions:
    def test_full_m_is_a_permutation(self):
        index = _three_cell_index()
        fp = Fingerprint({"a": -50.0})
        assert sorted(rank_subregions(fp, index, 3)) == [0, 1, 2]

    def test_unique_match_ranks_first(self):
        index = _three_cell_index()
        fp = Fingerprint({"d": -70.0})
        assert rank_subregions(fp, index, 1) == [2]

    def test_ties_break_by_ascending_cell_index(self):
        rfm = make_rfm(
            {
                (1.0, 1.0): {"a": -50.0, "b": -50.0},
                (3.0, 1.0): {"a": -50.0, "b": -50.0},
                (5.0, 1.0): {"a": -50.0, "x": -50.0, "y": -50.0, "z": -50.0,
                             "w": -50.0, "v": -50.0, "u": -50.0, "t": -50.0,
                             "s": -50.0, "r": -50.0},
            },
            width=6.0,
            height=2.0,
        )
        index = partition(rfm)
        fp = Fingerprint({"a": -50.0, "b": -50.0})
        # cells 0 and 1 both score 1.0, cell 2 scores 0.1
        scores = {s.cell_index: s.score for s in score_subregions(fp, index)}
        assert scores[0] == scores[1] == 1.0 and scores[2] == pytest.approx(0.1)
        assert rank_subregions(fp, index, 2) == [0, 1]

    def test_m_out_of_range(self):
        index = _three_cell_index()
        fp = Fingerprint({"a": -50.0})
        for bad in (0, 4):
            with pytest.raises(FplocError) as err:
                rank_subregions(fp, index, bad)
            assert err.value.code == "bad-m"


class TestSelectionIndicator:
    def test_membership(self):
        index = _three_cell_index()
        assert selection_indicator((3.0, 1.0), [1, 2], index) == 1
        assert selection_indicator((3.0, 1.0), [2], index) == 0

    def test_all_cells_always_hit(self):
        index = _three_cell_index()
        assert selection_indicator((0.2, 0.2), [0, 1, 2], index) == 1

    def test_outside_roi(self):
        index = _three_cell_index()
        with pytest.raises(FplocError) as err:
            selection_indicator((7.0, 1.0), [0], index)
        assert err.value.code == "outside-roi"


class TestSelectionLoss:
    def test_selecting_every_cell_gives_zero_loss(self):
        index = _three_cell_index()
        validation = [
            LabeledSample((1.0, 1.0), Fingerprint({"a": -50.0})),
            LabeledSample((5.0, 1.0), Fingerprint({"c": -60.0})),
        ]
        assert selection_loss(validation, index, 3) == 0.0

    def test_disjoint_fingerprints_follow_tie_break(self):
        index = _three_cell_index()
        # fingerprint disjoint from every cell: ranking is 0, 1, 2 by tie-break
        validation = [
            LabeledSample((1.0, 1.0), Fingerprint({"zz": -50.0})),  # cell 0: hit at m=1
            LabeledSample((5.0, 1.0), Fingerprint({"zz": -50.0})),  # cell 2: miss until m=3
        ]
        assert selection_loss(validation, index, 1) == pytest.approx(0.5)
        assert selection_loss(validation, index, 2) == pytest.approx(0.5)
        assert selection_loss(validation, index, 3) == 0.0

    def test_empty_validation_raises(self):
        index = _three_cell_index()
        with pytest.raises(FplocError) as err:
            selection_loss([], index, 1)
        assert err.value.code == "empty-validation"

    def test_samples_in_empty_cells_are_excluded(self, caplog):
        rfm = make_rfm(
            {(1.0, 1.0): {"a": -50.0}, (3.0, 1.0): {"b": -60.0}},
            width=6.0,
            height=2.0,
        )
        index = partition(rfm)  # cell 2 is empty
        validation = [
            LabeledSample((1.0, 1.0), Fingerprint({"a": -50.0})),
            LabeledSample((5.0, 1.0), Fingerprint({"a": -50.0})),  # empty cell
        ]
        with caplog.at_level("WARNING"):
            loss = selection_loss(validation, index, 1)
        assert loss == 0.0  # only the first sample counts
        assert any("empty cells" in r.message for r in caplog.records)

    def test_curve_matches_per_m_loss(self):
        index = _three_cell_index()
        validation = [
            LabeledSample((1.0, 1.0), Fingerprint({"a": -50.0, "b": -55.0})),
            LabeledSample((3.0, 1.0), Fingerprint({"b": -60.0})),
            LabeledSample((5.0, 1.0), Fingerprint({"c": -65.0, "d": -70.0})),
        ]
        curve = selection_loss_curve(validation, index)
        for m, loss in curve.points:
            assert loss == pytest.approx(selection_loss(validation, index, m))


class TestChooseM:
    def test_flat_curve_picks_one(self):
        curve = LossCurve(tuple((m, 0.25) for m in range(1, 11)))
        assert choose_m(curve, flatness_tol=0.01) == 1

    def test_linear_then_flat_curve(self):
        curve = LossCurve(tuple((m, max(0.0, 0.5 - 0.1 * m)) for m in range(1, 16)))
        assert choose_m(curve, flatness_tol=0.01) == 5

    def test_never_flat_returns_m_max(self):
        curve = LossCurve(tuple((m, 1.0 / m) for m in range(1, 7)))
        # drops over any 5-step window exceed the tolerance until the end
        assert choose_m(curve, flatness_tol=1e-9) == 6

    def test_bad_tolerance(self):
        curve = LossCurve(((1, 0.5), (2, 0.4)))
        with pytest.raises(ValueError):
            choose_m(curve, flatness_tol=0.0)
