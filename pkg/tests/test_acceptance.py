"""Acceptance criteria 1 to 11.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting. Criteria 8 and 9 share one session-scoped training run: three
toy-profile seeds for 2,000 steps each on a synthetic tone corpus.
"""

import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualcodec.autodiff import Initializer, Tensor, no_grad, ops
from dualcodec.codec import (
    PAD,
    ActivationMeter,
    EncodedSequence,
    SequenceMeta,
    decode,
    encode_sequence,
    pair_schedule,
)
from dualcodec.config import FsqConfig, full_profile, toy_profile
from dualcodec.corpus import tone_corpus
from dualcodec.fsq import fsq_dropout, indices_to_levels, is_on_grid, levels_to_indices, quantize
from dualcodec.metrics import log_spectral_distance, si_sdr
from dualcodec.net import CodecModel
from dualcodec.signal import ComplexSpectrogram, TransformParams, WaveformBuffer, amp_inverse, amp_transform, istft, n_samples_for, stft
from dualcodec.train import smoothing_ratio, train_loop

SEEDS = (0, 1, 2)
CHUNK = (2, 128, 16)


def _perturbed_model(seed, dtype=np.float64):
    """Random toy model in which no layer is left at its zero initialization."""
    model = CodecModel(toy_profile(), Initializer(seed, dtype=dtype))
    rng = np.random.default_rng(seed + 100)
    for _, p in model.named_parameters():
        if not np.any(p.data):
            p.data = rng.normal(0.0, 0.05, size=p.shape).astype(dtype)
    return model.eval()


# criterion 1 -----------------------------------------------------------------------


class TestConfigArithmetic:
    def test_criterion_1(self, record):
        cfg = full_profile().validate()
        codebook = cfg.fsq.codebook_size
        kbps = cfg.bitrate_bps / 1000
        ratio = cfg.compression_ratio
        rate = cfg.latent_rate_hz
        expected_kbps = 128 * math.log2(14641) / (32 * 1024 / 44100) / 1000
        ok = (codebook == 14641 and abs(kbps - 2.38) <= 0.01 and abs(kbps - expected_kbps) < 1e-12
              and ratio == 128.0 and round(rate, 2) == 10.77 and round(rate) == 11)
        record(1, "configuration arithmetic", ok,
               f"codebook={codebook} bitrate={kbps:.4f} kbps ratio={ratio:g}x latent_rate={rate:.4f} Hz")
        assert ok


# criterion 2 -----------------------------------------------------------------------


class TestBoundaryCondition:
    def test_criterion_2(self, record):
        rng = np.random.default_rng(2)
        worst = {}
        for dtype in (np.float32, np.float64):
            model = _perturbed_model(21, dtype)
            err = 0.0
            for _ in range(5):
                left = (3 * rng.standard_normal((2,) + CHUNK)).astype(dtype)
                right = (3 * rng.standard_normal((2,) + CHUNK)).astype(dtype)
                with no_grad():
                    cc_l = model.upsample(Tensor(rng.uniform(-1, 1, (2, 16, 4)).astype(dtype)))
                    cc_r = model.upsample(Tensor(rng.uniform(-1, 1, (2, 16, 4)).astype(dtype)))
                    out_l, out_r = model.decode_denoise(left, right, 0.002, 0.002, cc_l, cc_r)
                err = max(err, np.max(np.abs(out_l.data - left)), np.max(np.abs(out_r.data - right)))
            worst[np.dtype(dtype).name] = err
        ok = all(v == 0.0 for v in worst.values())
        record(2, "boundary at sigma_min", ok, ", ".join(f"{k}: max |out - in| = {v:g}" for k, v in worst.items()))
        assert ok


# criterion 3 -----------------------------------------------------------------------


class TestCausality:
    def test_criterion_3(self, record):
        rng = np.random.default_rng(3)
        model = _perturbed_model(31)
        failures = 0
        for _ in range(50):
            left = rng.standard_normal((1,) + CHUNK)
            lat_l = rng.uniform(-1, 1, (1, 16, 4))
            sig_l = float(np.exp(rng.uniform(np.log(0.002), np.log(80))))
            outs = []
            for _ in range(2):
                right = rng.standard_normal((1,) + CHUNK) * rng.uniform(0.1, 50)
                sig_r = float(np.exp(rng.uniform(np.log(0.002), np.log(80))))
                with no_grad():
                    cc_l = model.upsample(Tensor(lat_l))
                    cc_r = model.upsample(Tensor(rng.uniform(-1, 1, (1, 16, 4))))
                    out_l, _ = model.decode_denoise(left, right, sig_l, sig_r, cc_l, cc_r)
                outs.append(out_l.data)
            failures += not np.array_equal(outs[0], outs[1])
        ok = failures == 0
        record(3, "causality", ok, f"{50 - failures}/50 trials bitwise invariant")
        assert ok


# criterion 4 -----------------------------------------------------------------------


class TestGradients:
    def test_criterion_4(self, record):
        rng = np.random.default_rng(4)
        model = _perturbed_model(41).train()
        x = rng.standard_normal((1,) + CHUNK)
        noisy_r = x + 0.7 * rng.standard_normal((1,) + CHUNK)
        weights = rng.standard_normal((2, 1) + CHUNK)

        def loss():
            z = model.encode(Tensor(x))
            cc = model.upsample(ops.tanh(z))
            out_l, out_r = model.decode_denoise(x, noisy_r, 0.3, 0.7, cc, cc)
            return (out_l * Tensor(weights[0])).sum() + (out_r * Tensor(weights[1])).sum()

        model.zero_grad()
        loss().backward()
        named = list(model.named_parameters())
        worst, eps = 0.0, 1e-6
        for k in range(20):
            name, p = named[rng.integers(len(named))]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            analytic = float(p.grad[idx])
            orig = p.data[idx]
            with no_grad():
                p.data[idx] = orig + eps
                up = float(loss().data)
                p.data[idx] = orig - eps
                down = float(loss().data)
                p.data[idx] = orig
            numeric = (up - down) / (2 * eps)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, rel)
        ok = worst < 1e-3
        record(4, "gradient check (20 parameters, float64)", ok, f"max relative error {worst:.2e}")
        assert ok


# criterion 5 -----------------------------------------------------------------------


class TestFsqSuite:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=4, max_size=4))
    def test_idempotence(self, values):
        cfg = FsqConfig(n=5, d=4)
        q = quantize(Tensor(np.array(values)), cfg).numpy()
        again = quantize(Tensor(np.arctanh(np.clip(q, -1 + 1e-15, 1 - 1e-15))), cfg).numpy()
        np.testing.assert_array_equal(again, q)

    def test_criterion_5(self, record):
        checks = {}
        rng = np.random.default_rng(5)
        cfg = FsqConfig(n=5, d=4)
        q = quantize(Tensor(3 * rng.standard_normal((1000, 4))), cfg).numpy()
        checks["idempotence"] = np.array_equal(
            quantize(Tensor(np.arctanh(np.clip(q, -1 + 1e-15, 1 - 1e-15))), cfg).numpy(), q)

        small = FsqConfig(n=1, d=3)
        codes = np.arange(27)
        levels = indices_to_levels(codes, small).numpy()
        back = levels_to_indices(levels, small).indices
        distinct = len({tuple(v) for v in levels}) == 27
        checks["bijection n=1 d=3"] = distinct and np.array_equal(back, codes) and np.all(is_on_grid(levels, 1))

        u = rng.uniform(-1, 1, (10_000, 4))
        qu = quantize(Tensor(np.arctanh(u)), cfg).numpy()
        checks["utilization"] = all(len(np.unique(qu[:, j])) == 11 for j in range(4))

        z = rng.standard_normal((32, 16, 4))
        p1 = [fsq_dropout(Tensor(z), FsqConfig(dropout_p=1.0), rng).numpy() for _ in range(20)]
        checks["p=1 passthrough"] = all(np.array_equal(v, np.tanh(z)) for v in p1)
        p0 = [fsq_dropout(Tensor(z), FsqConfig(dropout_p=0.0), rng).numpy() for _ in range(20)]
        checks["p=0 grid"] = all(np.all(is_on_grid(v, 5)) for v in p0)

        ok = all(checks.values())
        record(5, "FSQ suite", ok, ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()))
        assert ok


# criterion 6 -----------------------------------------------------------------------


class TestScheduleOracle:
    def test_criterion_6(self, record):
        hand = {
            (5, 3): [[(0, 1), (2, 3), (4, PAD)], [(PAD, 0), (1, 2), (3, 4)], [(0, 1), (2, 3), (4, PAD)]],
            (2, 4): [[(0, 1)], [(PAD, 0), (1, PAD)], [(0, 1)], [(PAD, 0), (1, PAD)]],
            (1, 1): [[(0, PAD)]],
        }
        oracle_ok = all(pair_schedule(t, s).steps == steps for (t, s), steps in hand.items())
        partition_ok = True
        for t in range(1, 65):
            for s in range(1, 9):
                for pairs in pair_schedule(t, s).steps:
                    idx = sorted(i for pair in pairs for i in pair if i != PAD)
                    partition_ok &= idx == list(range(t))
        ok = oracle_ok and partition_ok
        record(6, "parallel schedule oracle", ok,
               f"hand-enumerated={'ok' if oracle_ok else 'FAIL'}, partition T<=64 S<=8={'ok' if partition_ok else 'FAIL'}")
        assert ok


# criterion 7 -----------------------------------------------------------------------


class TestSignalRoundTrips:
    def test_criterion_7(self, record):
        rng = np.random.default_rng(7)
        c = 20 * (rng.standard_normal((4, 1024, 40)) + 1j * rng.standard_normal((4, 1024, 40)))
        spec = ComplexSpectrogram.from_complex(c, 2048, 1024, False)
        amp_err = 0.0
        for alpha, beta in [(0.65, 0.34), (0.5, 1.0), (1.0, 1.0), (0.2, 3.0)]:
            p = TransformParams(alpha, beta)
            back = amp_inverse(amp_transform(spec, p), p).to_complex()
            amp_err = max(amp_err, np.max(np.abs(back - c)) / np.max(np.abs(c)))

        x = rng.standard_normal((2, 67072))
        y = istft(stft(WaveformBuffer(x, 44100), 2048, 1024), 44100).samples
        inner = slice(1024, x.shape[1] - 1024)
        stft_err = np.max(np.abs(y[:, inner] - x[:, inner])) / np.sqrt(np.mean(x**2))
        ok = amp_err <= 1e-6 and stft_err <= 1e-4
        record(7, "signal round trips", ok, f"amplitude rel err {amp_err:.2e}, istft interior rel err {stft_err:.2e}")
        assert ok


# criteria 8 and 9 --------------------------------------------------------------------


@pytest.fixture(scope="session")
def trained_toy():
    """Three toy-profile models trained for 2,000 steps on the tone corpus."""
    data = tone_corpus(64, 1.0, 16000, seed=123)
    runs = []
    for seed in SEEDS:
        cfg = toy_profile()
        cfg.train.seed = seed
        result = train_loop(cfg, data)
        model = CodecModel(cfg, Initializer(0, materialize=False))
        model.load_state_dict(result.ema.shadow)
        runs.append((seed, smoothing_ratio(result.losses), model.eval()))
    return runs


@pytest.fixture(scope="session")
def held_out():
    return tone_corpus(8, 1.0, 16000, seed=999)


@pytest.mark.slow
class TestToyTraining:
    def test_criterion_8(self, record, trained_toy, held_out):
        ratios, gains = [], []
        for seed, ratio, model in trained_toy:
            ratios.append(ratio)
            per_file = []
            for k, wave in enumerate(held_out):
                seq = encode_sequence(model, wave, "continuous")
                est = decode(model, seq, "parallel", 4, np.random.default_rng(k)).wave
                base = si_sdr(wave, np.zeros_like(wave.samples))
                per_file.append(si_sdr(wave, est) - base)
            gains.append(float(np.mean(per_file)))
        med_ratio, med_gain = float(np.median(ratios)), float(np.median(gains))
        ok = med_ratio < 0.5 and med_gain >= 10.0
        record(8, "toy training", ok,
               f"median loss ratio {med_ratio:.3f} (need < 0.5; seeds {np.round(ratios, 3).tolist()}), "
               f"median SI-SDR gain over zero baseline {med_gain:.2f} dB (need >= 10; seeds {np.round(gains, 2).tolist()})")
        assert ok

    def test_criterion_9(self, record, trained_toy, held_out):
        wins = []
        detail = []
        for seed, _, model in trained_toy:
            lsd = {}
            for s in (1, 4):
                vals = []
                for k, wave in enumerate(held_out):
                    seq = encode_sequence(model, wave, "continuous")
                    est = decode(model, seq, "parallel", s, np.random.default_rng(k)).wave
                    vals.append(log_spectral_distance(wave, est))
                lsd[s] = float(np.mean(vals))
            wins.append(lsd[4] - lsd[1])
            detail.append(f"seed {seed}: S=1 {lsd[1]:.4f}, S=4 {lsd[4]:.4f}")
        ok = float(np.median(wins)) <= 0.0
        record(9, "parallel S=4 LSD <= S=1", ok, "; ".join(detail))
        assert ok


# criterion 10 ----------------------------------------------------------------------------


class TestMemoryAccounting:
    def test_criterion_10(self, record):
        cfg = toy_profile()
        model = CodecModel(cfg, Initializer(10)).eval()
        rng = np.random.default_rng(10)
        peaks = {"ar": [], "parallel": []}
        lengths = (4, 8, 16)
        for t in lengths:
            meta = SequenceMeta.from_config(cfg, n_samples_for(t * cfg.signal.t_chunk, 256, 128))
            seq = EncodedSequence("continuous", meta, latents=rng.uniform(-0.9, 0.9, (t, 16, 4)))
            for strategy in peaks:
                with ActivationMeter() as meter:
                    res = decode(model, seq, strategy, 4, np.random.default_rng(0), meter)
                peaks[strategy].append(res.peak_bytes)
        ar = np.array(peaks["ar"], dtype=float)
        par = np.array(peaks["parallel"], dtype=float)
        ar_spread = (ar.max() - ar.min()) / ar.mean()
        slope, intercept = np.polyfit(lengths, par, 1)
        residual = np.max(np.abs(np.polyval([slope, intercept], lengths) - par)) / par.max()
        ok = ar_spread < 0.05 and slope > 0 and residual < 0.05 and par[-1] / par[0] > 2
        record(10, "activation memory", ok,
               f"AR peaks {ar.astype(int).tolist()} (spread {ar_spread:.3f}); parallel peaks "
               f"{par.astype(int).tolist()} (slope {slope:.0f} B/chunk, linear-fit residual {residual:.3f})")
        assert ok


# criterion 11 ----------------------------------------------------------------------------


def _cli(args, cwd):
    env = dict(os.environ, DUALCODEC_THREADS="1")
    proc = subprocess.run([sys.executable, "-m", "dualcodec.cli", *args], cwd=cwd, env=env,
                          capture_output=True)
    assert proc.returncode == 0, proc.stderr.decode()
    return proc.stdout


def _pipeline(root: Path) -> dict[str, bytes]:
    root.mkdir()
    g = ["--profile", "toy", "--seed", "11"]
    outputs = {}
    outputs["corpus.out"] = _cli([*g, "corpus", "data", "--count", "4", "--seconds", "0.6"], root)
    outputs["train.out"] = _cli([*g, "train", "--data", "data", "--steps", "20", "--out", "m.dckp"], root)
    (root / "dec").mkdir()
    for mode, ext in (("continuous", "dclt"), ("discrete", "dctk")):
        outputs[f"encode-{mode}.out"] = _cli([*g, "encode", "m.dckp", "data/000_tone.wav", f"x.{ext}", "--mode", mode], root)
        outputs[f"inspect-{mode}.out"] = _cli(["inspect", f"x.{ext}"], root)
        for strategy in ("ar", "parallel"):
            name = f"dec/{mode}-{strategy}.wav"
            outputs[name + ".out"] = _cli([*g, "decode", "m.dckp", f"x.{ext}", name, "--strategy", strategy,
                                          "--steps", "2"], root)
    (root / "est").mkdir()
    (root / "est" / "000_tone.wav").write_bytes((root / "dec" / "continuous-parallel.wav").read_bytes())
    (root / "ref").mkdir()
    (root / "ref" / "000_tone.wav").write_bytes((root / "data" / "000_tone.wav").read_bytes())
    outputs["eval.out"] = _cli(["eval", "ref", "est", "metrics.csv"], root)
    outputs["inspect-ckpt.out"] = _cli(["inspect", "m.dckp"], root)
    for path in sorted(root.rglob("*")):
        if path.is_file():
            outputs[str(path.relative_to(root))] = path.read_bytes()
    return outputs


class TestDeterminism:
    def test_criterion_11(self, record, tmp_path):
        first = _pipeline(tmp_path / "a")
        second = _pipeline(tmp_path / "b")
        differing = sorted(k for k in first if first[k] != second.get(k)) + sorted(set(second) - set(first))
        ok = not differing and len(first) > 15
        record(11, "CLI determinism", ok,
               f"{len(first)} outputs compared" + (f"; differing: {differing}" if differing else ", all bitwise identical"))
        assert ok
