import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualcodec.exceptions import DimensionError, DomainError
from dualcodec.metrics import MetricReport, MetricRow, evaluate_pair, log_spectral_distance, si_sdr
from dualcodec.signal import WaveformBuffer


def _orthogonal_noise(ref, energy, rng):
    n = rng.standard_normal(ref.shape)
    n -= np.dot(n, ref) / np.dot(ref, ref) * ref
    return n * np.sqrt(energy / np.dot(n, n))


class TestSiSdr:
    @pytest.mark.parametrize("db", [-5.0, 0.0, 20.0, 45.0])
    def test_known_ratio(self, rng, db):
        ref = rng.standard_normal(4000)
        est = ref + _orthogonal_noise(ref, np.dot(ref, ref) / 10 ** (db / 10), rng)
        assert si_sdr(ref, est) == pytest.approx(db, abs=1e-9)

    def test_zero_estimate_is_zero_db(self, rng):
        assert si_sdr(rng.standard_normal(100), np.zeros(100)) == pytest.approx(0.0, abs=1e-9)

    def test_perfect_estimate_capped(self, rng):
        ref = rng.standard_normal(100)
        assert si_sdr(ref, ref) == 100.0

    def test_zero_reference(self):
        with pytest.raises(DomainError):
            si_sdr(np.zeros(10), np.ones(10))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            si_sdr(np.ones(10), np.ones(11))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 100.0), st.integers(0, 2**31))
    def test_scale_invariant(self, scale, seed):
        r = np.random.default_rng(seed)
        ref, est = r.standard_normal(256), r.standard_normal(256)
        assert si_sdr(ref, scale * est) == pytest.approx(si_sdr(ref, est), abs=1e-6)

    def test_channel_average(self, rng):
        ref = rng.standard_normal((2, 3000))
        est = np.stack([ref[0] + _orthogonal_noise(ref[0], np.dot(ref[0], ref[0]) / 10, rng),
                        ref[1] + _orthogonal_noise(ref[1], np.dot(ref[1], ref[1]) / 1000, rng)])
        assert si_sdr(ref, est) == pytest.approx(20.0, abs=1e-9)


class TestLsd:
    def test_identical_is_zero(self, rng):
        x = rng.standard_normal(8192)
        assert log_spectral_distance(x, x) == 0.0

    def test_tenfold_gain_is_one(self, rng):
        x = rng.standard_normal(8192)
        assert log_spectral_distance(x, 10 * x) == pytest.approx(1.0, abs=1e-6)

    def test_symmetric(self, rng):
        a, b = rng.standard_normal(4096), rng.standard_normal(4096)
        assert log_spectral_distance(a, b) == pytest.approx(log_spectral_distance(b, a))

    def test_short_signal_padded(self, rng):
        assert np.isfinite(log_spectral_distance(rng.standard_normal(500), rng.standard_normal(500)))


class TestReport:
    def test_csv_with_mean_row(self, tmp_path):
        report = MetricReport([MetricRow("a.wav", 10.0, 1.0), MetricRow("b.wav", 20.0, 3.0)])
        report.write_csv(tmp_path / "m.csv")
        with open(tmp_path / "m.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["file", "si_sdr_db", "lsd"]
        assert rows[-1] == ["MEAN", "15.000000", "2.000000"]

    def test_evaluate_pair_truncates_to_shorter(self, rng):
        x = rng.standard_normal((1, 3000))
        row = evaluate_pair("x", WaveformBuffer(x, 16000), WaveformBuffer(x[:, :2500], 16000))
        assert row.si_sdr_db == 100.0 and row.lsd == 0.0

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            evaluate_pair("x", WaveformBuffer(np.ones((1, 100)), 16000), WaveformBuffer(np.ones((2, 100)), 16000))
