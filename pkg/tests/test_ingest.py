import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtdlab.errors import DataError, ParseError
from mtdlab.fingerprint import FeatureSchema
from mtdlab.ingest import (
    EventSample,
    load_dataset,
    parse_perf_intervals,
    save_dataset,
    window_aggregate,
)


class TestParsePerfIntervals:
    def test_single_data_line(self):
        samples = parse_perf_intervals("5.001003,1234,,context-switches,4001440000,100.00,,\n")
        assert samples == [EventSample(5.001003, "context-switches", 1234)]

    def test_comments_and_blank_lines_skipped(self):
        text = "# started on Sat Aug 9\n\n# interval mode\n1.0,5,,cs,1000,100.00,,\n"
        samples = parse_perf_intervals(text)
        assert len(samples) == 1

    def test_not_counted_becomes_missing(self):
        samples = parse_perf_intervals("5.001003,<not counted>,,branch-misses,0,0.00,,\n")
        assert samples == [EventSample(5.001003, "branch-misses", None)]

    def test_bytes_input_accepted(self):
        samples = parse_perf_intervals(b"1.5,10,,cs,1000,100.00,,\n")
        assert samples[0].count == 10

    def test_malformed_count_reports_line_number(self):
        text = "1.0,5,,cs,1,100.00,,\n2.0,5,,cs,1,100.00,,\n3.0,junk,,cs,1,100.00,,\n"
        with pytest.raises(ParseError, match="line 3"):
            parse_perf_intervals(text)

    def test_too_few_fields_errors(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_perf_intervals("1.0,5,cs\n")

    def test_negative_count_errors(self):
        with pytest.raises(ParseError):
            parse_perf_intervals("1.0,-5,,cs,1,100.00,,\n")

    def test_empty_event_name_errors(self):
        with pytest.raises(ParseError):
            parse_perf_intervals("1.0,5,,,1,100.00,,\n")

    def test_decreasing_timestamp_same_event_errors(self):
        text = "2.0,5,,cs,1,100.00,,\n1.0,5,,cs,1,100.00,,\n"
        with pytest.raises(ParseError, match="line 2"):
            parse_perf_intervals(text)

    def test_interleaved_events_keep_independent_clocks(self):
        text = "2.0,5,,cs,1,100.00,,\n1.0,9,,faults,1,100.00,,\n"
        assert len(parse_perf_intervals(text)) == 2

    def test_invalid_utf8_is_a_parse_error(self):
        with pytest.raises(ParseError):
            parse_perf_intervals(b"\xff\xfe\x00bad")

    @given(st.binary(max_size=300))
    @settings(max_examples=150, deadline=None)
    def test_never_panics_on_arbitrary_bytes(self, blob):
        try:
            result = parse_perf_intervals(blob)
        except ParseError:
            return
        assert isinstance(result, list)


class TestWindowAggregate:
    def test_two_samples_one_window(self):
        samples = [EventSample(1.0, "cs", 3), EventSample(3.0, "cs", 4)]
        rows, dropped = window_aggregate(samples, FeatureSchema(("cs",)), 5.0)
        assert rows.tolist() == [[7.0]]
        assert dropped == []

    def test_half_open_window_boundary(self):
        samples = [EventSample(4.9, "cs", 1), EventSample(5.1, "cs", 2)]
        rows, _ = window_aggregate(samples, FeatureSchema(("cs",)), 5.0)
        assert rows.tolist() == [[1.0], [2.0]]

    def test_multiwindow_fixture_matches_hand_sums(self, fixtures_dir):
        samples = parse_perf_intervals((fixtures_dir / "perf" / "multiwindow.txt").read_bytes())
        schema = FeatureSchema(("cs", "page-faults", "kmem:kmalloc"))
        rows, dropped = window_aggregate(samples, schema, 5.0)
        assert dropped == []
        assert rows.tolist() == [
            [30.0, 10.0, 2.0],
            [120.0, 15.0, 10.0],
            [130.0, 10.0, 21.0],
            [270.0, 15.0, 110.0],
        ]

    def test_window_missing_an_event_is_dropped_and_reported(self):
        samples = [
            EventSample(1.0, "cs", 3),
            EventSample(1.0, "faults", 2),
            EventSample(6.0, "cs", 5),
        ]
        schema = FeatureSchema(("cs", "faults"))
        rows, dropped = window_aggregate(samples, schema, 5.0)
        assert rows.tolist() == [[3.0, 2.0]]
        assert len(dropped) == 1
        assert dropped[0].index == 1
        assert dropped[0].missing_events == ("faults",)

    def test_zero_fill_keeps_incomplete_windows(self):
        samples = [
            EventSample(1.0, "cs", 3),
            EventSample(1.0, "faults", 2),
            EventSample(6.0, "cs", 5),
        ]
        schema = FeatureSchema(("cs", "faults"))
        rows, dropped = window_aggregate(samples, schema, 5.0, zero_fill=True)
        assert rows.tolist() == [[3.0, 2.0], [5.0, 0.0]]
        assert dropped == []

    def test_not_counted_is_missing_not_zero(self):
        samples = [
            EventSample(1.0, "cs", 3),
            EventSample(2.0, "cs", None),
        ]
        rows, dropped = window_aggregate(samples, FeatureSchema(("cs",)), 5.0)
        assert rows.tolist() == [[3.0]]

    def test_event_never_observed_errors_with_names(self):
        samples = [EventSample(1.0, "cs", 3)]
        with pytest.raises(DataError, match="faults"):
            window_aggregate(samples, FeatureSchema(("cs", "faults")), 5.0)

    def test_nonpositive_window_errors(self):
        with pytest.raises(ValueError):
            window_aggregate([], FeatureSchema(("cs",)), 0.0)

    def test_mass_conservation(self):
        rng = np.random.default_rng(4)
        schema = FeatureSchema(("a", "b"))
        samples = []
        for k in range(6):
            for name in schema.names:
                for _ in range(3):
                    t = k * 5.0 + rng.uniform(0.0, 4.999)
                    samples.append(EventSample(t, name, int(rng.integers(0, 100))))
        samples.sort(key=lambda s: s.timestamp)
        rows, dropped = window_aggregate(samples, schema, 5.0)
        assert dropped == []
        for j, name in enumerate(schema.names):
            total = sum(s.count for s in samples if s.event == name)
            assert rows[:, j].sum() == total


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        schema = FeatureSchema(("a", "b", "c"))
        rows = np.array([[1.0, 2.5, -3.125], [0.0, 1e-9, 42.0]])
        path = tmp_path / "data.csv"
        save_dataset(path, schema, rows)
        schema2, rows2 = load_dataset(path)
        assert schema2.names == schema.names
        assert np.array_equal(rows2, rows)

    def test_ragged_row_errors_with_row_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1.0,2.0\n3.0\n", encoding="utf-8")
        with pytest.raises(DataError, match="row 2"):
            load_dataset(path)

    def test_non_numeric_cell_errors_with_location(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1.0,oops\n", encoding="utf-8")
        with pytest.raises(DataError, match="'b'"):
            load_dataset(path)

    def test_duplicate_header_errors(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,a\n1.0,2.0\n", encoding="utf-8")
        with pytest.raises(DataError, match="duplicate"):
            load_dataset(path)

    def test_empty_file_errors(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError):
            load_dataset(path)

    def test_eight_hour_dataset_rewrites_byte_identically(self, tmp_path):
        # 5760 five-second windows is one 8-hour monitoring session.
        rng = np.random.default_rng(11)
        schema = FeatureSchema(tuple(f"ev{i}" for i in range(46)))
        rows = np.abs(rng.normal(1000.0, 250.0, size=(5760, 46)))
        first = tmp_path / "first.csv"
        second = tmp_path / "second.csv"
        save_dataset(first, schema, rows)
        loaded_schema, loaded_rows = load_dataset(first)
        save_dataset(second, loaded_schema, loaded_rows)
        assert first.read_bytes() == second.read_bytes()
