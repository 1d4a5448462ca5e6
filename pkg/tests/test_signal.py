import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualcodec.exceptions import ConfigError, DimensionError, LengthError, StateError
from dualcodec.signal import (
    ComplexSpectrogram,
    TransformParams,
    WaveformBuffer,
    amp_inverse,
    amp_transform,
    analyze,
    chunk,
    istft,
    stft,
    synthesize,
    unchunk,
)


def _periodic_hann(n):
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2 * np.pi * k / n)


def _spec(c, transformed=False):
    return ComplexSpectrogram.from_complex(c, 256, 128, transformed)


class TestWaveformBuffer:
    def test_mono_vector_promoted(self):
        w = WaveformBuffer(np.zeros(10), 16000)
        assert w.samples.shape == (1, 10)

    def test_rejects_three_channels(self):
        with pytest.raises(DimensionError):
            WaveformBuffer(np.zeros((3, 10)), 16000)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            WaveformBuffer(np.array([0.0, np.nan]), 16000)

    def test_rejects_bad_rate(self):
        with pytest.raises(ConfigError):
            WaveformBuffer(np.zeros(4), 0)


class TestStft:
    def test_frame_count_full_profile(self):
        wave = WaveformBuffer(np.zeros((2, 67072)), 44100)
        spec = stft(wave, 2048, 1024)
        assert spec.data.shape == (4, 1024, 64)
        assert spec.transformed is False

    @pytest.mark.parametrize("n", [256, 300, 383, 384, 1000])
    def test_frame_count_formula(self, n):
        spec = stft(WaveformBuffer(np.ones(n), 16000), 256, 128)
        assert spec.n_frames == (n - 256) // 128 + 1

    def test_zero_in_zero_out(self):
        spec = stft(WaveformBuffer(np.zeros(2048), 16000), 256, 128)
        assert not np.any(spec.data)

    def test_too_short(self):
        with pytest.raises(LengthError):
            stft(WaveformBuffer(np.zeros(255), 16000), 256, 128)

    @pytest.mark.parametrize("window, hop", [(256, 64), (200, 100), (256, 100)])
    def test_window_hop_constraints(self, window, hop):
        with pytest.raises(ConfigError):
            stft(WaveformBuffer(np.zeros(4096), 16000), window, hop)

    def test_bin_center_sine_concentrated(self):
        # independent oracle: direct DFT of one Hann-windowed frame
        n, k = 256, 10
        t = np.arange(4096)
        x = np.sin(2 * np.pi * k * t / n)
        spec = stft(WaveformBuffer(x, 16000), n, n // 2)
        mag = np.abs(spec.to_complex()[0])
        assert np.all(np.argmax(mag[1:], axis=0) + 1 == k)
        frame = x[:n] * _periodic_hann(n)
        ref = np.abs(np.array([np.sum(frame * np.exp(-2j * np.pi * b * np.arange(n) / n)) for b in range(1, n // 2)]))
        np.testing.assert_allclose(mag[1:, 0], ref, atol=1e-9)
        # a Hann window leaks only into the two adjacent bins
        off = np.delete(mag[:, 0], [k - 1, k, k + 1])
        assert np.max(off) < 0.01 * mag[k, 0]
        assert np.sum(off**2) < 0.01 * mag[k, 0] ** 2

    def test_nyquist_packed_into_dc_slot(self):
        n = 256
        x = np.cos(np.pi * np.arange(2048))  # alternating +-1: pure Nyquist
        spec = stft(WaveformBuffer(x, 16000), n, n // 2)
        c = spec.to_complex()[0]
        full = np.fft.rfft(x[:n] * _periodic_hann(n))
        assert c[0, 0].imag == pytest.approx(full[n // 2].real)
        assert c[0, 0].real == pytest.approx(full[0].real, abs=1e-9)


class TestIstft:
    def test_round_trip_white_noise_interior(self, rng):
        x = rng.standard_normal((2, 8192))
        spec = stft(WaveformBuffer(x, 16000), 256, 128)
        y = istft(spec, 16000).samples
        interior = slice(128, y.shape[1] - 128)
        err = np.max(np.abs(y[:, interior] - x[:, interior]))
        assert err < 1e-4 * np.sqrt(np.mean(x**2))

    def test_zero_spectrogram(self):
        spec = _spec(np.zeros((1, 128, 5), dtype=complex))
        assert not np.any(istft(spec).samples)

    def test_single_frame_reproduces_window_normalized_frame(self, rng):
        # one frame: overlap-add output = frame * w / w^2 = frame where w > 0
        x = rng.standard_normal(256)
        y = istft(stft(WaveformBuffer(x, 8000), 256, 128)).samples[0]
        w = _periodic_hann(256)
        nz = w > 1e-6
        np.testing.assert_allclose(y[nz], x[nz], atol=1e-9)
        assert y[0] == 0.0

    def test_rejects_transformed(self):
        with pytest.raises(StateError):
            istft(_spec(np.zeros((1, 128, 2), dtype=complex), transformed=True))


class TestAmplitudeTransform:
    @pytest.mark.parametrize(
        "c, alpha, beta, expected",
        [(1 + 0j, 0.5, 1.0, 1 + 0j), (4 + 0j, 0.5, 0.5, 1 + 0j), (0j, 0.65, 0.34, 0j)],
    )
    def test_forward_values(self, c, alpha, beta, expected):
        out = amp_transform(_spec(np.full((1, 1, 1), c)), TransformParams(alpha, beta)).to_complex()
        assert out[0, 0, 0] == pytest.approx(expected)

    @pytest.mark.parametrize("c, expected", [(1 + 0j, 4 + 0j), (0j, 0j)])
    def test_inverse_values(self, c, expected):
        out = amp_inverse(_spec(np.full((1, 1, 1), c), True), TransformParams(0.5, 0.5)).to_complex()
        assert out[0, 0, 0] == pytest.approx(expected)

    def test_phase_preserved(self, rng):
        c = rng.standard_normal((1, 16, 4)) + 1j * rng.standard_normal((1, 16, 4))
        out = amp_transform(_spec(c), TransformParams()).to_complex()
        np.testing.assert_allclose(np.angle(out), np.angle(c), atol=1e-12)

    def test_magnitude_bound(self, rng):
        c = 5 * (rng.standard_normal((2, 16, 4)) + 1j * rng.standard_normal((2, 16, 4)))
        p = TransformParams()
        out = np.abs(amp_transform(_spec(c), p).to_complex())
        assert np.all(out <= p.beta * np.max(np.abs(c)) ** p.alpha + 1e-12)

    def test_state_flags(self):
        s = _spec(np.ones((1, 1, 1), dtype=complex))
        with pytest.raises(StateError):
            amp_inverse(s, TransformParams())
        with pytest.raises(StateError):
            amp_transform(amp_transform(s, TransformParams()), TransformParams())

    @pytest.mark.parametrize("alpha, beta", [(0.0, 1.0), (1.5, 1.0), (0.5, 0.0)])
    def test_param_validation(self, alpha, beta):
        with pytest.raises(ConfigError):
            TransformParams(alpha, beta)

    @settings(max_examples=50, deadline=None)
    @given(
        alpha=st.floats(0.1, 1.0),
        beta=st.floats(0.05, 5.0),
        seed=st.integers(0, 2**31),
    )
    def test_round_trip_property(self, alpha, beta, seed):
        r = np.random.default_rng(seed)
        c = r.standard_normal((2, 8, 3)) * 10 + 1j * r.standard_normal((2, 8, 3)) * 10
        p = TransformParams(alpha, beta)
        back = amp_inverse(amp_transform(_spec(c), p), p).to_complex()
        assert np.max(np.abs(back - c)) <= 1e-6 * np.max(np.abs(c))


class TestChunking:
    def test_counts_and_padding(self):
        data = np.arange(2 * 4 * 37, dtype=float).reshape(2, 4, 37)
        spec = ComplexSpectrogram(data, 8, 4, transformed=True)
        chunks = chunk(spec, 16)
        assert len(chunks) == 3
        assert all(c.data.shape == (2, 4, 16) for c in chunks)
        assert not np.any(chunks[-1].data[:, :, 5:])
        np.testing.assert_array_equal(unchunk(chunks, 37).data, data)

    def test_requires_transformed(self):
        with pytest.raises(StateError):
            chunk(ComplexSpectrogram(np.zeros((2, 4, 8)), 8, 4), 4)

    @settings(max_examples=30, deadline=None)
    @given(t=st.integers(1, 100), t_chunk=st.integers(1, 40))
    def test_chunk_count_property(self, t, t_chunk):
        spec = ComplexSpectrogram(np.ones((2, 2, t)), 8, 4, transformed=True)
        chunks = chunk(spec, t_chunk)
        assert len(chunks) == -(-t // t_chunk)
        assert unchunk(chunks, t).data.shape == (2, 2, t)


class TestModelDomain:
    def test_analyze_synthesize_round_trip(self, toy_cfg, rng):
        x = 0.3 * rng.standard_normal((1, 4224))
        y = synthesize(analyze(WaveformBuffer(x, 16000), toy_cfg.signal), toy_cfg.signal, 4224).samples
        np.testing.assert_allclose(y[:, 128:-128], x[:, 128:-128], atol=1e-9)
