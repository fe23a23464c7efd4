import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_session
from fusewake.core import (
    ALERT,
    DROWSY,
    US_PER_S,
    AlignmentError,
    SessionFormatError,
    align_streams,
    estimate_clock_offset,
    frame_times_us,
    load_session,
    majority_label,
    session_lines,
    validate_session,
    window_count,
    window_session,
    write_session,
)
from fusewake.synth import generate_session


def nearest_slot_keep(t_us, physio_end_us, fps, tol_us):
    """Brute force: distance from every frame to every nominal slot inside coverage."""
    k = np.arange(0, int(physio_end_us * fps / 1e6) + 2)
    slots = np.array([round(i * 1e6 / fps) for i in k])
    slots = slots[(slots >= 0) & (slots <= physio_end_us)]
    d = np.abs(np.asarray(t_us, dtype=float)[:, None] - slots[None, :]).min(axis=1)
    return (d <= tol_us) & (np.asarray(t_us) >= 0)


class TestSessionFile:
    def test_ten_second_file_counts(self, tmp_path):
        path = tmp_path / "s.jsonl"
        write_session(make_session(10), path)
        s = load_session(path)
        assert len(s.frames) == 300
        assert len(s.physio["EEG"]) == 1
        assert len(s.physio["EEG"][0].samples) == 2560

    def test_round_trip_bytes(self, tmp_path):
        s = generate_session(5, 120.0)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_session(s, a)
        write_session(load_session(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_five_eye_landmarks(self, tmp_path):
        lines = list(session_lines(make_session(2)))
        rec = json.loads(lines[3])
        rec["left_eye"] = rec["left_eye"][:5]
        lines[3] = json.dumps(rec)
        path = tmp_path / "bad.jsonl"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SessionFormatError, match="landmark count") as exc:
            load_session(path)
        assert exc.value.line == 4

    def test_malformed_line_reports_number(self, tmp_path):
        lines = list(session_lines(make_session(2)))
        lines[5] = "{not json"
        path = tmp_path / "bad.jsonl"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SessionFormatError, match="line 6"):
            load_session(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_session(tmp_path / "nope.jsonl")

    def test_non_monotone_frames(self):
        s = make_session(2)
        s.frames.t_us[10] = s.frames.t_us[9] - 1
        with pytest.raises(SessionFormatError, match="non-decreasing"):
            validate_session(s)

    def test_header_first_and_lf(self, tmp_path):
        path = tmp_path / "s.jsonl"
        write_session(make_session(2), path)
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert json.loads(raw.split(b"\n")[0])["type"] == "header"


class TestAlignment:
    def test_zero_offset_identity(self):
        s = make_session(10)
        assert align_streams(s, 10) is s

    def test_shift_8ms_keeps_all_frames(self):
        s = make_session(10, frame_shift_us=8000)
        out = align_streams(s, 10)
        assert len(out.frames) == len(s.frames)

    def test_shift_15ms_matches_oracle(self):
        shift = np.zeros(300, dtype=np.int64)
        shift[100:200] = 15000
        s = make_session(10, frame_shift_us=shift)
        out = align_streams(s, 10)
        keep = nearest_slot_keep(s.frames.t_us, 10 * US_PER_S, 30.0, 10_000)
        assert keep.sum() == 200
        np.testing.assert_array_equal(out.frames.t_us, s.frames.t_us[keep])

    def test_declared_offset_is_corrected(self):
        s = make_session(10, frame_shift_us=15000, declared_offset_us=15000)
        assert estimate_clock_offset(s) == 15000
        out = align_streams(s, 10)
        assert len(out.frames) == 300
        np.testing.assert_array_equal(out.frames.t_us, frame_times_us(np.arange(300), 30.0))

    def test_marker_median_ignores_outlier(self):
        s = make_session(10)
        s.sync_markers = [
            {"video_us": 3000, "physio_us": 0},
            {"video_us": 1_003_000, "physio_us": 1_000_000},
            {"video_us": 2_090_000, "physio_us": 2_000_000},
        ]
        assert estimate_clock_offset(s) == 3000

    def test_excess_drift_errors(self):
        s = make_session(10, declared_offset_us=150_000)
        with pytest.raises(AlignmentError, match="10x tolerance"):
            align_streams(s, 10)

    def test_empty_stream_errors(self):
        s = make_session(2)
        s.physio = {}
        with pytest.raises(AlignmentError):
            align_streams(s)

    @settings(max_examples=200)
    @given(st.integers(-30_000, 30_000), st.integers(-9_000, 9_000))
    def test_idempotent_and_monotone(self, declared, undeclared):
        s = make_session(4, frame_shift_us=declared + undeclared, declared_offset_us=declared)
        once = align_streams(s, 10)
        twice = align_streams(once, 10)
        assert twice is once
        assert np.all(np.diff(once.frames.t_us) >= 0)

    @settings(max_examples=200)
    @given(st.lists(st.integers(-16_000, 16_000), min_size=90, max_size=90))
    def test_undeclared_shift_oracle(self, shifts):
        shifts = np.sort(shifts)  # keeps timestamps monotone
        s = make_session(3, frame_shift_us=shifts)
        keep = nearest_slot_keep(s.frames.t_us, 3 * US_PER_S, 30.0, 10_000)
        if not keep.any():
            with pytest.raises(AlignmentError):
                align_streams(s, 10)
            return
        out = align_streams(s, 10)
        np.testing.assert_array_equal(out.frames.t_us, s.frames.t_us[keep])

    def test_everything_dropped_errors(self):
        with pytest.raises(AlignmentError, match="no frame"):
            align_streams(make_session(3, frame_shift_us=15000), 10)


class TestWindowing:
    def test_count_120s(self):
        s = make_session(120)
        assert len(window_session(s, 60, 5)) == 13
        assert window_count(120, 60, 5) == 13

    def test_window_equals_duration(self):
        assert len(window_session(make_session(10), 10, 5)) == 1

    def test_half_and_half_is_drowsy(self):
        s = make_session(10, labels=[(0, ALERT), (5 * US_PER_S, DROWSY)])
        (w,) = window_session(s, 10, 10)
        assert w.label == DROWSY

    def test_majority(self):
        spans = [(0, 6, ALERT), (6, 10, DROWSY)]
        assert majority_label(spans, 0, 10) == ALERT
        assert majority_label(spans, 4, 10) == DROWSY

    def test_window_longer_than_session(self):
        with pytest.raises(ValueError, match="longer than session"):
            window_session(make_session(10), 20, 5)

    def test_contents_inside_bounds(self):
        s = make_session(20)
        for w in window_session(s, 6, 2):
            assert np.all(w.frames.t_us >= w.start_us)
            assert np.all(w.frames.t_us < w.end_us)
            assert len(w.frames) == 180
            assert len(w.physio["EEG"]) == 6 * 256

    @settings(max_examples=100)
    @given(st.integers(2, 20), st.integers(1, 20))
    def test_coverage_bound(self, window_s, stride_s):
        stride_s = min(stride_s, window_s)
        s = make_session(24)
        ws = window_session(s, window_s, stride_s)
        hits = np.zeros(len(s.frames), dtype=int)
        for w in ws:
            lo, hi = np.searchsorted(s.frames.t_us, [w.start_us, w.end_us])
            hits[lo:hi] += 1
            assert w.end_us <= s.duration_us
        assert hits.max() <= int(np.ceil(window_s / stride_s))

    def test_deterministic(self):
        s = make_session(20)
        a = [(w.start_us, w.label, len(w.frames)) for w in window_session(s, 6, 2)]
        b = [(w.start_us, w.label, len(w.frames)) for w in window_session(replace(s), 6, 2)]
        assert a == b
