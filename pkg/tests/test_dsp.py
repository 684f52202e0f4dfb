import numpy as np
import pytest

from cardiosep import dsp
from cardiosep.dsp import (ComplexSpectrogram, fit_stats, hann_window, istft,
                           log_mag, normalize, denormalize, stft)

SR = 4000.0


def naive_dft_frame(x, w):
    """Direct DFT of one windowed frame, the oracle for stft columns."""
    n = len(x)
    k = np.arange(n // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / n)
    return basis @ (x * w)


class TestStft:
    def test_sine_bin_localization(self):
        t = np.arange(int(SR)) / SR
        x = np.sin(2 * np.pi * 250.0 * t)
        spec = stft(x, 256, 64, sample_rate=SR)
        mags = np.abs(spec.bins)
        interior = range(4, spec.n_frames - 4)
        for frame in interior:
            assert np.argmax(mags[:, frame]) == 16  # 250 * 256 / 4000

    def test_matches_naive_dft(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(1024)
        spec = stft(x, 256, 64)
        w = hann_window(256)
        for frame in (0, 3, spec.n_frames - 1):
            expected = naive_dft_frame(x[frame * 64:frame * 64 + 256], w)
            np.testing.assert_allclose(spec.bins[:, frame], expected, atol=1e-9)

    def test_zero_signal(self):
        spec = stft(np.zeros(1000), 256, 64)
        assert np.all(spec.bins == 0)

    def test_exact_one_frame(self):
        spec = stft(np.ones(256), 256, 64)
        assert spec.n_frames == 1

    def test_short_signal_rejected(self):
        with pytest.raises(ValueError):
            stft(np.zeros(100), 256, 64)

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValueError):
            stft(np.zeros(1000), 250, 64)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal(2000)
        b = rng.standard_normal(2000)
        lhs = stft(a + b, 256, 64).bins
        rhs = stft(a, 256, 64).bins + stft(b, 256, 64).bins
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestIstft:
    def test_round_trip_interior(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(int(2 * SR))
        spec = stft(x, 256, 64)
        y = istft(spec)
        core = slice(256, len(y) - 256)
        err = np.linalg.norm(y[core] - x[core]) / np.linalg.norm(x[core])
        assert err < 1e-6

    def test_zero_spectrogram(self):
        spec = ComplexSpectrogram(np.zeros((129, 5), complex), 256, 64, SR)
        assert np.all(istft(spec) == 0)

    def test_single_frame_inverse(self):
        # oracle: the inverse of one frame is the windowed input divided by w^2
        w = hann_window(256)
        t = np.arange(256) / SR
        x = np.sin(2 * np.pi * 125.0 * t)
        spec = ComplexSpectrogram(np.fft.rfft(x * w)[:, None], 256, 64, SR)
        y = istft(spec)
        good = w * w > 1e-12
        np.testing.assert_allclose(y[good], x[good], atol=1e-6)

    def test_output_length(self):
        spec = stft(np.zeros(1000), 256, 64)
        assert len(istft(spec)) == (spec.n_frames - 1) * 64 + 256

    def test_non_cola_hop_rejected(self):
        spec = stft(np.zeros(1000), 256, 96)
        with pytest.raises(ValueError):
            istft(spec)

    def test_parseval_window_compensated(self):
        # zero edges so every sample sees the full overlap-add weight
        rng = np.random.default_rng(3)
        x = np.zeros(4096)
        x[256:-256] = rng.standard_normal(4096 - 512)
        spec = stft(x, 256, 64)
        doubled = np.ones(129)
        doubled[1:-1] = 2.0  # one-sided spectrum: interior bins count twice
        spec_energy = np.sum(doubled[:, None] * np.abs(spec.bins) ** 2) / 256
        w = hann_window(256)
        overlap_weight = np.sum(w ** 2) / 64  # sum of w^2 across overlapping frames
        assert spec_energy / overlap_weight == pytest.approx(np.sum(x ** 2), rel=1e-6)


class TestLogMag:
    def test_floor_clamp(self):
        spec = ComplexSpectrogram(np.zeros((129, 3), complex), 256, 64, SR)
        frames = log_mag(spec, floor=1e-5)
        np.testing.assert_allclose(frames, np.log(1e-5))

    def test_unit_magnitude(self):
        spec = ComplexSpectrogram(np.ones((129, 2), complex), 256, 64, SR)
        np.testing.assert_allclose(log_mag(spec), 0.0, atol=1e-15)

    def test_e_squared(self):
        spec = ComplexSpectrogram(np.full((129, 2), np.e ** 2, complex), 256, 64, SR)
        np.testing.assert_allclose(log_mag(spec), 2.0)

    def test_nonpositive_floor_rejected(self):
        spec = ComplexSpectrogram(np.ones((129, 2), complex), 256, 64, SR)
        with pytest.raises(ValueError):
            log_mag(spec, floor=0.0)


class TestStats:
    def test_self_normalization(self):
        rng = np.random.default_rng(4)
        frames = rng.standard_normal((50, 9)) * 3.0 + 1.0
        stats = fit_stats(frames)
        normed = normalize(frames, stats)
        np.testing.assert_allclose(normed.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(normed.std(axis=0), 1.0, atol=1e-9)

    def test_constant_bin_floored_to_zero(self):
        frames = np.ones((10, 4))
        stats = fit_stats(frames)
        normed = normalize(frames, stats)
        np.testing.assert_allclose(normed, 0.0)

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        frames = rng.standard_normal((20, 6))
        stats = fit_stats(frames)
        back = denormalize(normalize(frames, stats), stats)
        np.testing.assert_allclose(back, frames, atol=1e-9)

    def test_too_few_frames_rejected(self):
        with pytest.raises(ValueError):
            fit_stats(np.ones((1, 4)))
