"""Core model: fingerprints, partition, observable features, JSONL ingest."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fploc.errors import FplocError
from fploc.ingest import parse_record, read_samples, sample_to_record, write_samples
from fploc.model import (
    Fingerprint,
    LabeledSample,
    Rfm,
    RoiGeometry,
    partition,
)
from tests.conftest import make_rfm


class TestFingerprint:
    def test_valid_range(self):
        fp = Fingerprint({"a": -60.0, "b": -99.9, "c": 0.0})
        assert fp.keys == {"a", "b", "c"}
        assert len(fp) == 3

    def test_floor_value_forbidden(self):
        with pytest.raises(ValueError):
            Fingerprint({"a": -100.0})

    def test_positive_value_forbidden(self):
        with pytest.raises(ValueError):
            Fingerprint({"a": 0.5})

    def test_empty_feature_id_forbidden(self):
        with pytest.raises(ValueError):
            Fingerprint({"": -50.0})


class TestRoiGeometry:
    def test_grid_shape(self):
        roi = RoiGeometry(width=13.8, height=8.7, cell_size=2.0)
        assert roi.n_cols == 7
        assert roi.n_rows == 5
        assert roi.n_cells == 35

    def test_cell_of_interior(self):
        roi = RoiGeometry(width=4.0, height=4.0, cell_size=2.0)
        assert roi.cell_of((0.5, 0.5)) == 0
        assert roi.cell_of((2.5, 0.5)) == 1
        assert roi.cell_of((0.5, 2.5)) == 2
        assert roi.cell_of((2.5, 2.5)) == 3

    def test_shared_edge_goes_to_lower_cell(self):
        roi = RoiGeometry(width=4.0, height=4.0, cell_size=2.0)
        assert roi.cell_of((2.0, 0.5)) == 0  # vertical edge between 0 and 1
        assert roi.cell_of((0.5, 2.0)) == 0  # horizontal edge between 0 and 2
        assert roi.cell_of((2.0, 2.0)) == 0  # corner shared by all four

    def test_outside_raises(self):
        roi = RoiGeometry(width=4.0, height=4.0)
        with pytest.raises(FplocError) as err:
            roi.cell_of((4.5, 1.0))
        assert err.value.code == "outside-roi"

    def test_roi_edge_is_inside(self):
        roi = RoiGeometry(width=13.8, height=8.7, cell_size=2.0)
        assert roi.cell_of((13.8, 8.7)) == roi.n_cells - 1


class TestPartition:
    def test_single_sample_at_origin_maps_to_cell_zero(self):
        rfm = make_rfm({(0.0, 0.0): {"a": -50.0}}, width=4.0, height=4.0)
        index = partition(rfm)
        assert index.assignment[0] == 0

    def test_one_sample_per_quadrant(self):
        rfm = make_rfm(
            {
                (1.0, 1.0): {"a": -50.0},
                (3.0, 1.0): {"b": -50.0},
                (1.0, 3.0): {"c": -50.0},
                (3.0, 3.0): {"d": -50.0},
            },
            width=4.0,
            height=4.0,
        )
        index = partition(rfm)
        assert index.n_cells == 4
        assert all(len(c.sample_indices) == 1 for c in index.cells)

    def test_reference_region_35_cells_34_non_empty(self):
        # ~120 m^2 region carved into 2x2 m cells: 35 cells, one kept empty.
        roi = RoiGeometry(width=13.8, height=8.7, cell_size=2.0)
        obs = {}
        for cell in range(roi.n_cells):
            if cell == 17:
                continue  # the empty one
            x0, y0, _, _ = roi.cell_bounds(cell)
            x = min(x0 + 0.5, 13.8)
            y = min(y0 + 0.5, 8.7)
            obs[(x, y)] = {f"ap{cell}": -60.0}
        rfm = make_rfm(obs, width=13.8, height=8.7, cell_size=2.0)
        index = partition(rfm)
        assert index.n_cells == 35
        assert len(index.non_empty_cells) == 34
        assert index.cells[17].is_empty

    def test_empty_rfm_rejected(self):
        with pytest.raises(FplocError) as err:
            Rfm.build([], RoiGeometry(width=4.0, height=4.0))
        assert err.value.code == "empty-rfm"

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=0.0, max_value=10.0, allow_nan=False),
                st.floats(min_value=0.0, max_value=6.0, allow_nan=False),
            ),
            min_size=1,
            max_size=40,
        )
    )
    def test_partition_covers_every_sample_exactly_once(self, locations):
        samples = [
            LabeledSample((x, y), Fingerprint({"a": -50.0})) for x, y in locations
        ]
        rfm = Rfm.build(samples, RoiGeometry(width=10.0, height=6.0, cell_size=2.0))
        index = partition(rfm)
        assert sorted(index.assignment) == list(range(len(samples)))
        scattered = sorted(i for c in index.cells for i in c.sample_indices)
        assert scattered == list(range(len(samples)))
        for i, cell in index.assignment.items():
            assert i in index.cells[cell].sample_indices


class TestObservableFeatures:
    def test_union_of_two_singletons(self):
        rfm = make_rfm(
            {(0.5, 0.5): {"a": -60.0}, (1.0, 1.0): {"b": -70.0}},
            width=4.0,
            height=4.0,
        )
        index = partition(rfm)
        assert index.observable_features(0) == {"a", "b"}

    def test_empty_cell_yields_empty_set(self):
        rfm = make_rfm({(0.5, 0.5): {"a": -60.0}}, width=4.0, height=4.0)
        index = partition(rfm)
        assert index.observable_features(3) == frozenset()

    def test_union_over_cells_equals_universe(self):
        # 399 distinct features spread over the region
        obs = {}
        fid = 0
        for i in range(20):
            for j in range(20):
                if fid >= 399:
                    break
                obs[(i * 0.5 + 0.1, j * 0.4 + 0.1)] = {
                    f"ap{fid:03d}": -55.0,
                    f"ap{(fid + 1) % 399:03d}": -70.0,
                }
                fid += 1
        rfm = make_rfm(obs, width=10.0, height=8.0)
        index = partition(rfm)
        union = frozenset().union(*(c.observable_features for c in index.cells))
        assert union == rfm.feature_universe
        assert len(union) == 399

    def test_bad_cell_raises(self):
        rfm = make_rfm({(0.5, 0.5): {"a": -60.0}}, width=4.0, height=4.0)
        index = partition(rfm)
        with pytest.raises(FplocError) as err:
            index.observable_features(99)
        assert err.value.code == "bad-cell"


class TestIngest:
    def test_parse_basic_record(self):
        sample = parse_record('{"x": 1.5, "y": 2.0, "t": 3.0, "obs": {"a": -42.5}}')
        assert sample.location == (1.5, 2.0)
        assert sample.fingerprint.timestamp == 3.0
        assert sample.fingerprint.observations == {"a": -42.5}

    def test_at_or_below_floor_becomes_absence(self):
        sample = parse_record('{"x": 0, "y": 0, "obs": {"a": -100, "b": -130.5, "c": -99.5}}')
        assert sample.fingerprint.keys == {"c"}

    def test_rss_above_zero_rejected(self):
        with pytest.raises(FplocError) as err:
            parse_record('{"x": 0, "y": 0, "obs": {"a": 3.0}}')
        assert err.value.code == "bad-rss"

    def test_malformed_json_rejected(self):
        with pytest.raises(FplocError) as err:
            parse_record('{"x": 0, "y":', lineno=7)
        assert err.value.code == "bad-record"
        assert "line 7" in str(err.value)

    def test_roundtrip(self, tmp_path):
        samples = [
            LabeledSample((0.5, 1.5), Fingerprint({"b": -60.0, "a": -42.0}, timestamp=9.0)),
            LabeledSample((2.0, 0.0), Fingerprint({"c": -1.25})),
        ]
        path = tmp_path / "records.jsonl"
        write_samples(path, samples)
        assert read_samples(path) == samples

    @settings(max_examples=60, deadline=None)
    @given(
        st.dictionaries(
            st.text(
                alphabet=st.characters(whitelist_categories=("Ll", "Nd")),
                min_size=1,
                max_size=8,
            ),
            st.floats(min_value=-150.0, max_value=0.0, allow_nan=False),
            max_size=6,
        )
    )
    def test_ingest_keeps_exactly_the_measurable_values(self, obs):
        line = json.dumps({"x": 1.0, "y": 1.0, "obs": obs})
        sample = parse_record(line)
        expected = {k: v for k, v in obs.items() if v > -100.0}
        assert sample.fingerprint.observations == pytest.approx(expected)
