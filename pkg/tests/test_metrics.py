"""Run-scoring helpers: DOA stats, track counts, segmental SNR, ERLE."""

import math

import numpy as np
import pytest

from hearbeam.metrics import (
    active_track_counts,
    doa_errors,
    doa_stats,
    echo_only_mask,
    erle_db,
    estimate_latency,
    fit_gain,
    longest_exact_count_window,
    nearest_mic_channel,
    segmental_snr_db,
    segmental_snr_gain_db,
    selected_id_set,
    switch_count,
    track_discontinuities,
    tracks_on_truth,
)


def rec(sid=None, az=None, sources=()):
    return {
        "selected_id": sid,
        "selected_azimuth": az,
        "sources": [
            {"id": i, "azimuth": a, "active": act} for i, (a, act) in enumerate(sources)
        ],
    }


def truth(*sources, far=None):
    return {
        "sources": [
            {"name": f"s{i}", "azimuth": a, "active": act, "far_end": i == far}
            for i, (a, act) in enumerate(sources)
        ]
    }


class TestDoaErrors:
    def test_perfect_track_scores_zero(self):
        records = [rec(0, 90.0)] * 5
        truths = [truth((90.0, True))] * 5
        errors = doa_errors(records, truths)
        assert np.allclose(errors, 0.0)

    def test_constant_offset_measured(self):
        errors = doa_errors([rec(0, 95.0)], [truth((90.0, True))])
        assert errors[0] == pytest.approx(5.0)

    def test_wraparound_error_is_short_way(self):
        errors = doa_errors([rec(0, 358.0)], [truth((2.0, True))])
        assert errors[0] == pytest.approx(4.0)

    def test_nearest_active_source_wins(self):
        errors = doa_errors([rec(0, 100.0)], [truth((90.0, True), (250.0, True))])
        assert errors[0] == pytest.approx(10.0)

    def test_inactive_sources_ignored(self):
        errors = doa_errors([rec(0, 100.0)], [truth((98.0, False), (250.0, True))])
        assert errors[0] == pytest.approx(150.0)

    def test_no_selection_scores_nan(self):
        errors = doa_errors([rec(None, None)], [truth((90.0, True))])
        assert np.isnan(errors[0])


class TestDoaStats:
    def test_stats_over_known_distribution(self):
        errors = np.array([1.0, 2.0, 3.0, 4.0, np.nan])
        stats = doa_stats(errors)
        assert stats["frames"] == 4
        assert stats["median"] == pytest.approx(2.5)
        assert stats["max"] == pytest.approx(4.0)

    def test_all_nan_reports_empty(self):
        stats = doa_stats(np.array([np.nan]))
        assert stats["frames"] == 0
        assert math.isnan(stats["median"])


class TestTrackDiscontinuities:
    def test_within_id_jump_measured(self):
        jumps = track_discontinuities([rec(0, 90.0), rec(0, 130.0)])
        assert jumps.tolist() == [40.0]

    def test_id_change_not_a_discontinuity(self):
        jumps = track_discontinuities([rec(0, 90.0), rec(1, 270.0)])
        assert len(jumps) == 0

    def test_wraparound_jump_is_short_way(self):
        jumps = track_discontinuities([rec(0, 359.0), rec(0, 1.0)])
        assert jumps[0] == pytest.approx(2.0)


class TestSwitchCount:
    def test_counts_id_changes_across_gaps(self):
        records = [rec(0, 0.0), rec(0, 0.0), rec(1, 0.0), rec(None), rec(1, 0.0), rec(2, 0.0)]
        assert switch_count(records) == 2

    def test_no_selection_never_counts(self):
        assert switch_count([rec(None), rec(None)]) == 0

    def test_id_set_in_first_seen_order(self):
        records = [rec(2, 0.0), rec(0, 0.0), rec(2, 0.0)]
        assert selected_id_set(records) == [2, 0]


class TestCountWindow:
    def test_counts_only_active_tracks(self):
        r = rec(0, 30.0, sources=[(30.0, True), (120.0, False)])
        assert active_track_counts([r]).tolist() == [1]

    def test_track_off_truth_detected(self):
        r = rec(0, 30.0, sources=[(55.0, True)])
        assert not tracks_on_truth(r, truth((30.0, True)), tol_deg=15.0)
        assert tracks_on_truth(r, truth((50.0, True)), tol_deg=15.0)

    def test_longest_window_spans_clean_run(self):
        good = rec(0, 30.0, sources=[(30.0, True), (120.0, True)])
        bad = rec(0, 30.0, sources=[(30.0, True)])
        records = [bad, good, good, good, bad, good, good]
        truths = [truth((30.0, True), (120.0, True))] * len(records)
        length, start = longest_exact_count_window(
            records, truths, expected=2, tol_deg=15.0, frame_rate=10.0
        )
        assert length == pytest.approx(0.3)
        assert start == pytest.approx(0.1)


class TestSegmentalSnr:
    def test_identical_signals_hit_clamp(self):
        x = np.random.default_rng(0).standard_normal(4096)
        assert segmental_snr_db(x, x) == pytest.approx(35.0)

    def test_known_snr_recovered(self):
        rng = np.random.default_rng(1)
        ref = rng.standard_normal(65536)
        noise = rng.standard_normal(65536) * 10 ** (-10 / 20)
        measured = segmental_snr_db(ref, ref + noise, fit=False)
        assert measured == pytest.approx(10.0, abs=1.0)

    def test_gain_fit_ignores_level_change(self):
        x = np.random.default_rng(2).standard_normal(4096)
        assert segmental_snr_db(x, 0.5 * x) == pytest.approx(35.0)
        assert segmental_snr_db(x, 0.5 * x, fit=False) < 10.0

    def test_fit_gain_recovers_scale(self):
        x = np.random.default_rng(3).standard_normal(1024)
        assert fit_gain(x, 0.25 * x) == pytest.approx(4.0)

    def test_gain_report_aligns_latency(self):
        rng = np.random.default_rng(4)
        clean = rng.standard_normal(8192)
        noise = rng.standard_normal(8192)
        raw = clean + 0.3 * noise
        processed = np.concatenate([np.zeros(256), clean + 0.03 * noise])
        report = segmental_snr_gain_db(clean, processed, raw, latency_samples=256)
        assert report["gain_db"] == pytest.approx(20.0, abs=1.5)

    def test_silent_segments_excluded(self):
        ref = np.concatenate([np.zeros(2048), np.ones(2048)])
        noisy = ref + 0.1
        # the silent half would score -20 dB; it must not drag the mean
        assert segmental_snr_db(ref, noisy, fit=False) == pytest.approx(20.0, abs=0.1)


class TestEstimateLatency:
    def test_recovers_known_shift(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(8192)
        delayed = np.concatenate([np.zeros(512), x])
        assert estimate_latency(x, delayed) == 512

    def test_zero_lag(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(4096)
        assert estimate_latency(x, x) == 0

    def test_search_window_is_capped(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(8192)
        delayed = np.concatenate([np.zeros(700), x])
        assert estimate_latency(x, delayed, max_lag=256) <= 256

    def test_survives_filtering_and_noise(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(16384)
        warped = np.convolve(x, [0.2, 0.9, 0.3], mode="same")
        delayed = np.concatenate([np.zeros(256), warped + 0.1 * rng.standard_normal(16384)])
        assert abs(estimate_latency(x, delayed) - 256) <= 1


class TestNearestMic:
    def test_picks_closest_position(self):
        positions = np.array([[0.03, 0.0, 0.0], [-0.03, 0.0, 0.0], [0.0, 0.03, 0.0]])
        assert nearest_mic_channel(None, positions, np.array([1.0, 0.0])) == 0
        assert nearest_mic_channel(None, positions, np.array([0.0, 2.0])) == 2


class TestErle:
    def test_mask_requires_far_only(self):
        truths = [
            truth((30.0, True), (75.0, True), far=1),
            truth((30.0, False), (75.0, True), far=1),
            truth((30.0, False), (75.0, False), far=1),
        ]
        assert echo_only_mask(truths).tolist() == [False, True, False]

    def test_ratio_over_masked_tail(self):
        powers = [(100.0, 1.0)] * 20
        mask = np.ones(20, dtype=bool)
        assert erle_db(powers, mask, frame_rate=2.0, after_s=5.0) == pytest.approx(20.0)

    def test_settle_time_skips_early_frames(self):
        powers = [(1.0, 1.0)] * 10 + [(100.0, 1.0)] * 10
        mask = np.ones(20, dtype=bool)
        assert erle_db(powers, mask, frame_rate=2.0, after_s=5.0) == pytest.approx(20.0)

    def test_no_far_frames_reads_zero(self):
        assert erle_db([None] * 10, np.ones(10, dtype=bool), 2.0) == 0.0
