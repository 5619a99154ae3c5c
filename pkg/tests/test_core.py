import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from llmpred.core import ChannelSet, NormState, Series, Window, denormalize, load_csv_dataset, max_normalize, split_windows
from llmpred.errors import DegenerateSeries, EmptyDataset, MissingFile, ParseError, SeriesTooShort


class TestLoadCsv:
    def test_three_rows_two_features(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("date,f0,f1\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,3,4\n2016-07-01 02:00:00,5,6\n")
        cs = load_csv_dataset(p)
        assert (cs.C, cs.L) == (2, 3)
        np.testing.assert_array_equal(cs.as_array(), [[1, 2], [3, 4], [5, 6]])

    def test_bad_cell_reports_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("date,f0,f1\nt,1,2\nt,abc,4\n")
        with pytest.raises(ParseError) as ei:
            load_csv_dataset(p)
        assert ei.value.row == 2
        assert ei.value.col == 1

    def test_selected_channel_remapped(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("date,f0,f1\nt,1,2\nt,3,4\n")
        cs = load_csv_dataset(p, [1])
        assert cs.C == 1
        assert cs.channels[0].channel_id == 0
        np.testing.assert_array_equal(cs.channels[0].values, [2, 4])

    def test_missing_and_empty(self, tmp_path):
        with pytest.raises(MissingFile):
            load_csv_dataset(tmp_path / "nope.csv")
        p = tmp_path / "e.csv"
        p.write_text("date,f0\n")
        with pytest.raises(EmptyDataset):
            load_csv_dataset(p)

    def test_non_finite_cell_rejected(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("date,f0\nt,nan\n")
        with pytest.raises(ParseError):
            load_csv_dataset(p)


class TestWindows:
    def test_offsets_by_hand(self):
        cs = ChannelSet.from_array(np.arange(10.0))
        ws = split_windows(cs, 3, 3)
        assert [w.offset for w in ws] == [0, 3]
        np.testing.assert_array_equal(ws[1].history.as_array()[:, 0], [3, 4, 5])
        np.testing.assert_array_equal(ws[1].target.as_array()[:, 0], [6, 7, 8])

    @pytest.mark.parametrize("stride", [1, 2, 7, 100])
    def test_exact_fit_gives_one_window(self, stride):
        cs = ChannelSet.from_array(np.arange(8.0))
        assert len(split_windows(cs, 4, stride)) == 1

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            split_windows(ChannelSet.from_array(np.arange(5.0)), 3)

    @given(st.integers(2, 200), st.integers(1, 20))
    def test_targets_tile_without_overlap(self, L, H):
        if L < 2 * H:
            return
        ws = split_windows(ChannelSet.from_array(np.arange(float(L))), H)
        covered = np.concatenate([w.target.as_array()[:, 0] for w in ws])
        np.testing.assert_array_equal(covered, np.arange(H, H + len(ws) * H))

    def test_window_json_round_trip(self):
        cs = ChannelSet.from_array(np.arange(12.0).reshape(6, 2))
        w = split_windows(cs, 3)[0]
        back = Window.from_dict(json.loads(json.dumps(w.to_dict())))
        assert back.offset == w.offset
        assert back.history == w.history and back.target == w.target


class TestNormalize:
    def test_examples(self):
        out, st_ = max_normalize(np.array([2.0, -4.0]))
        np.testing.assert_array_equal(out, [0.5, -1.0])
        assert st_.scale == 4.0
        out, st_ = max_normalize([0.5])
        assert out[0] == 1.0 and st_.scale == 0.5
        with pytest.raises(DegenerateSeries):
            max_normalize([0.0, 0.0])

    def test_denormalize_examples(self):
        np.testing.assert_array_equal(denormalize([0.5, -1.0], NormState(4.0)), [2.0, -4.0])
        np.testing.assert_array_equal(denormalize([0.3, 0.7], NormState(1.0)), [0.3, 0.7])

    def test_series_in_series_out(self):
        s = Series([1.0, -3.0], channel_id=2)
        n, _ = max_normalize(s)
        assert isinstance(n, Series) and n.channel_id == 2

    def test_series_is_read_only(self):
        s = Series([1.0, 2.0])
        with pytest.raises(ValueError):
            s.values[0] = 5.0

    @settings(max_examples=200)
    @given(arrays(np.float64, st.integers(1, 64), elements=st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)))
    def test_round_trip_and_range(self, x):
        if not np.any(x):
            return
        n, state = max_normalize(x)
        assert np.all(np.abs(n) <= 1.0)
        assert np.isclose(np.max(np.abs(n)), 1.0)
        assert np.max(np.abs(denormalize(n, state) - x)) < 1e-12 * state.scale

    def test_serialization_field_names(self):
        s = Series([1.0, 2.0], 3)
        assert set(s.to_dict()) == {"values", "channel_id"}
        assert NormState(2.0).to_dict() == {"scale": 2.0}
        assert Series.from_dict(s.to_dict()) == s
