import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hearbeam.dsp import AudioFormat, fractional_delay, stft
from hearbeam.localization import (
    ArrayGeometry,
    AzimuthGrid,
    SourceEstimate,
    circular_distance,
    export_source_map,
    extract_peaks,
    gcc_phat,
    smooth_azimuth,
    srp_maps,
    srp_phat,
    srp_vote_map,
    unit_sphere_point,
)
from tests.conftest import brute_force_xcorr_tdoa, plane_wave_mic_signals


def bandlimited_noise(n, seed, smooth=6):
    rng = np.random.default_rng(seed)
    return np.convolve(rng.standard_normal(n), np.ones(smooth) / smooth, mode="same")


class TestGeometry:
    def test_circular_preset(self):
        geom = ArrayGeometry.circular()
        assert geom.num_mics == 4
        pos = np.asarray(geom.mic_positions)
        np.testing.assert_allclose(np.linalg.norm(pos, axis=1), 0.032, atol=1e-12)
        np.testing.assert_allclose(geom.centroid(), 0.0, atol=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            ArrayGeometry(((0.0, 0.0, 0.0),))
        with pytest.raises(ValueError):
            ArrayGeometry(((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)))

    def test_farfield_delay_sign(self):
        # The mic facing the source receives the wavefront early.
        geom = ArrayGeometry.circular()
        delays = geom.farfield_delays(0.0)
        assert delays[0] < 0 < delays[2]
        assert delays[1] == pytest.approx(0.0, abs=1e-18)


class TestGccPhat:
    def test_identical_signals(self):
        x = bandlimited_noise(1024, 0)
        tdoa, peak = gcc_phat(x, x, max_lag=64)
        assert tdoa == pytest.approx(0.0, abs=0.01)
        assert peak > 0

    @pytest.mark.parametrize("delay", [8, -3])
    def test_integer_delay_vs_brute_force(self, delay):
        x = bandlimited_noise(8192, 1)
        y = fractional_delay(x, delay)
        expected = brute_force_xcorr_tdoa(x, y, 64)
        assert expected == delay
        tdoa, _ = gcc_phat(x, y, max_lag=64)
        assert tdoa == pytest.approx(expected, abs=0.01)

    def test_fractional_delay(self):
        x = bandlimited_noise(2048, 2)
        y = fractional_delay(x, 2.5)
        tdoa, _ = gcc_phat(x, y, max_lag=32)
        assert tdoa == pytest.approx(2.5, abs=0.05)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            gcc_phat(np.zeros(100), np.zeros(99), 10)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_antisymmetry(self, seed):
        x = bandlimited_noise(512, seed)
        y = np.roll(bandlimited_noise(512, seed + 1) * 0.3 + x, 5)
        t_xy, _ = gcc_phat(x, y, 40)
        t_yx, _ = gcc_phat(y, x, 40)
        assert t_xy == pytest.approx(-t_yx, abs=0.01)


class TestSrpPhat:
    def make_spectral(self, mic_signals, fmt, offset=2048):
        window = mic_signals[:, offset : offset + fmt.frame_len]
        return stft(window, fmt)

    def test_single_source_at_90(self, fmt, geometry):
        src = bandlimited_noise(8192, 3)
        mics = plane_wave_mic_signals(src, geometry, 90.0, fmt.sample_rate)
        grid = AzimuthGrid()
        power = srp_phat(self.make_spectral(mics, fmt), geometry, grid)
        assert np.all(np.isfinite(power))
        best = float(grid.points[np.argmax(power)])
        assert circular_distance(best, 90.0) <= grid.resolution

    def test_identical_channels_no_confident_peak(self, fmt, geometry):
        src = bandlimited_noise(8192, 4)
        mics = np.tile(src, (4, 1))
        grid = AzimuthGrid()
        power = srp_phat(self.make_spectral(mics, fmt), geometry, grid)
        assert np.all(np.isfinite(power))
        # Zero TDOA on every pair: no azimuth stands out enough to detect.
        assert extract_peaks(power, grid) == []

    def test_two_opposite_sources(self, fmt, geometry):
        a = bandlimited_noise(8192, 5)
        b = bandlimited_noise(8192, 6)
        mics = plane_wave_mic_signals(a, geometry, 0.0, fmt.sample_rate)
        mics += plane_wave_mic_signals(b, geometry, 180.0, fmt.sample_rate)
        grid = AzimuthGrid()
        # Average a few frames to stabilize the two-source map.
        power = np.zeros(len(grid.points))
        for off in range(1024, 7000, 512):
            power += srp_phat(self.make_spectral(mics, fmt, off), geometry, grid)
        peaks = extract_peaks(power, grid, max_sources=2, min_separation=60.0)
        assert len(peaks) == 2
        found = sorted(p.azimuth for p in peaks)
        assert circular_distance(found[0], 0.0) <= grid.resolution
        assert circular_distance(found[1], 180.0) <= grid.resolution

    def test_channel_count_mismatch(self, fmt, geometry):
        bad = stft(np.zeros((2, 512)), AudioFormat(channels=2))
        with pytest.raises(ValueError):
            srp_phat(bad, geometry, AzimuthGrid())

    def test_gain_invariance(self, fmt, geometry):
        src = bandlimited_noise(8192, 7)
        mics = plane_wave_mic_signals(src, geometry, 40.0, fmt.sample_rate)
        grid = AzimuthGrid()
        base = srp_phat(self.make_spectral(mics, fmt), geometry, grid)
        scaled = mics.copy()
        scaled[2] *= 10.0
        after = srp_phat(self.make_spectral(scaled, fmt), geometry, grid)
        np.testing.assert_allclose(after, base, rtol=1e-6)

    def test_rotation_equivariance(self, fmt, geometry):
        src = bandlimited_noise(8192, 8)
        grid = AzimuthGrid()
        mics = plane_wave_mic_signals(src, geometry, 60.0, fmt.sample_rate)
        i0 = np.argmax(srp_phat(self.make_spectral(mics, fmt), geometry, grid))
        mics = plane_wave_mic_signals(src, geometry, 65.0, fmt.sample_rate)
        i1 = np.argmax(srp_phat(self.make_spectral(mics, fmt), geometry, grid))
        assert (i1 - i0) % len(grid.points) == 1

    @pytest.mark.slow
    def test_doa_accuracy_sweep(self, fmt, geometry):
        grid = AzimuthGrid()
        rng = np.random.default_rng(99)
        errors_clean, errors_noisy = [], []
        for k in range(36):
            truth = k * 10.0
            src = bandlimited_noise(6144, 100 + k)
            mics = plane_wave_mic_signals(src, geometry, truth, fmt.sample_rate)
            power = np.zeros(len(grid.points))
            for off in range(512, 5000, 512):
                power += srp_phat(self.make_spectral(mics, fmt, off), geometry, grid)
            errors_clean.append(
                circular_distance(float(grid.points[np.argmax(power)]), truth)
            )
            snr_scale = np.sqrt(np.mean(src**2)) / 10.0  # 20 dB SNR
            noisy = mics + rng.standard_normal(mics.shape) * snr_scale
            power = np.zeros(len(grid.points))
            for off in range(512, 5000, 512):
                power += srp_phat(self.make_spectral(noisy, fmt, off), geometry, grid)
            errors_noisy.append(
                circular_distance(float(grid.points[np.argmax(power)]), truth)
            )
        assert np.median(errors_clean) <= grid.resolution
        assert np.median(errors_noisy) <= 2 * grid.resolution


class TestVoteMap:
    def make_spectral(self, mic_signals, fmt, offset=2048):
        window = mic_signals[:, offset : offset + fmt.frame_len]
        return stft(window, fmt)

    def test_broadband_map_matches_srp_phat(self, fmt, geometry):
        src = bandlimited_noise(8192, 11)
        mics = plane_wave_mic_signals(src, geometry, 45.0, fmt.sample_rate)
        grid = AzimuthGrid()
        spectral = self.make_spectral(mics, fmt)
        broad, _ = srp_maps(spectral, geometry, grid)
        np.testing.assert_allclose(
            broad, srp_phat(spectral, geometry, grid), rtol=1e-9
        )

    def test_vote_map_alias(self, fmt, geometry):
        src = bandlimited_noise(8192, 11)
        mics = plane_wave_mic_signals(src, geometry, 45.0, fmt.sample_rate)
        grid = AzimuthGrid()
        spectral = self.make_spectral(mics, fmt)
        np.testing.assert_array_equal(
            srp_vote_map(spectral, geometry, grid),
            srp_maps(spectral, geometry, grid)[1],
        )

    def test_single_source_votes_concentrate(self, fmt, geometry):
        grid = AzimuthGrid()
        src = bandlimited_noise(8192, 12)
        mics = plane_wave_mic_signals(src, geometry, 90.0, fmt.sample_rate)
        _, votes = srp_maps(self.make_spectral(mics, fmt), geometry, grid)
        assert np.all(votes >= 0.0)
        best = float(grid.points[np.argmax(votes)])
        assert circular_distance(best, 90.0) <= grid.resolution
        near = sum(
            v
            for a, v in zip(grid.points, votes)
            if circular_distance(float(a), 90.0) <= 15.0
        )
        assert near >= 0.8 * votes.sum()

    def test_silence_votes_nothing(self, fmt, geometry):
        grid = AzimuthGrid()
        spectral = stft(np.zeros((4, fmt.frame_len)), fmt)
        _, votes = srp_maps(spectral, geometry, grid)
        assert np.all(votes == 0.0)

    def test_quiet_talker_keeps_a_vote_mode(self, fmt, geometry):
        # Simultaneous talkers 12 dB apart: broadband power may bury the
        # quiet one, but their bins keep voting for separate azimuths.
        grid = AzimuthGrid()
        loud = bandlimited_noise(8192, 13)
        quiet = bandlimited_noise(8192, 14) * 0.25
        mics = plane_wave_mic_signals(loud, geometry, 0.0, fmt.sample_rate)
        mics += plane_wave_mic_signals(quiet, geometry, 120.0, fmt.sample_rate)
        votes = np.zeros(len(grid.points))
        for off in range(1024, 7000, 512):
            votes += srp_maps(self.make_spectral(mics, fmt, off), geometry, grid)[1]
        total = votes.sum()

        def share(az):
            near = sum(
                v
                for a, v in zip(grid.points, votes)
                if circular_distance(float(a), az) <= 15.0
            )
            return near / total

        assert share(0.0) > share(120.0) > 0.02


class TestExtractPeaks:
    def synthetic_map(self, grid, peaks):
        power = np.full(len(grid.points), 0.05)
        for az, height in peaks:
            d = np.array([circular_distance(a, az) for a in grid.points])
            power += height * np.exp(-0.5 * (d / 12.0) ** 2)
        return power

    def exhaustive_local_maxima(self, power):
        n = len(power)
        return [
            i
            for i in range(n)
            if power[i] >= power[(i - 1) % n] and power[i] >= power[(i + 1) % n]
        ]

    def test_unimodal(self):
        grid = AzimuthGrid()
        power = self.synthetic_map(grid, [(135.0, 1.0)])
        peaks = extract_peaks(power, grid)
        assert len(peaks) == 1
        assert peaks[0].azimuth == 135.0

    def test_flat_map_empty(self):
        grid = AzimuthGrid()
        assert extract_peaks(np.ones(len(grid.points)), grid) == []

    def test_four_peaks_descending(self):
        grid = AzimuthGrid()
        spec = [(20.0, 1.0), (110.0, 0.8), (200.0, 0.6), (290.0, 0.4)]
        power = self.synthetic_map(grid, spec)
        oracle = self.exhaustive_local_maxima(power)
        peaks = extract_peaks(power, grid, max_sources=4, min_separation=20.0)
        assert len(peaks) == 4
        assert [p.azimuth for p in peaks] == [20.0, 110.0, 200.0, 290.0]
        assert all(p.power >= q.power for p, q in zip(peaks, peaks[1:]))
        for p in peaks:
            assert int(p.azimuth / grid.resolution) in oracle

    def test_min_separation_suppression(self):
        grid = AzimuthGrid()
        power = self.synthetic_map(grid, [(100.0, 1.0), (112.0, 0.9)])
        peaks = extract_peaks(power, grid, max_sources=4, min_separation=20.0)
        assert len(peaks) == 1

    def test_validation(self):
        grid = AzimuthGrid()
        with pytest.raises(ValueError):
            extract_peaks(np.ones(72), grid, max_sources=0)
        with pytest.raises(ValueError):
            extract_peaks(np.ones(72), grid, min_separation=2.0)


class TestSmoothAzimuth:
    def test_wraparound_midpoint(self):
        assert smooth_azimuth(350.0, 10.0, 0.5) == pytest.approx(0.0, abs=1e-9)

    def test_alpha_one_returns_observation(self):
        assert smooth_azimuth(123.0, 47.0, 1.0) == 47.0

    def test_alpha_zero_returns_previous(self):
        assert smooth_azimuth(123.0, 47.0, 0.0) == 123.0

    def test_linear_region(self):
        assert smooth_azimuth(100.0, 120.0, 0.25) == pytest.approx(105.0, abs=0.1)

    @given(
        prev=st.floats(0, 359.999),
        obs=st.floats(0, 359.999),
        alpha=st.floats(0, 1),
    )
    @settings(max_examples=100, deadline=None)
    def test_result_in_range_and_between(self, prev, obs, alpha):
        out = smooth_azimuth(prev, obs, alpha)
        assert 0.0 <= out < 360.0
        # The smoothed angle never overshoots the shorter arc between inputs.
        arc = circular_distance(prev, obs)
        assert circular_distance(out, prev) <= arc + 1e-6
        assert circular_distance(out, obs) <= arc + 1e-6


class TestExportSourceMap:
    def test_cardinal_points(self):
        rec = export_source_map(
            [SourceEstimate(0.0, 1.0, 0.5), SourceEstimate(90.0, 2.0, 0.6)]
        )
        assert rec["sources"][0]["point"] == [1.0, 0.0, 0.0]
        assert rec["sources"][1]["point"] == [0.0, 1.0, 0.0]

    def test_empty_still_emits(self):
        assert export_source_map([]) == {"sources": []}

    def test_unit_sphere_z_zero(self):
        for az in range(0, 360, 30):
            x, y, z = unit_sphere_point(float(az))
            assert z == 0.0
            assert x**2 + y**2 == pytest.approx(1.0, abs=1e-12)
