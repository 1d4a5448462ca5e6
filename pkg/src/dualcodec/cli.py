"""Command-line interface: ``dualcodec {train,encode,decode,eval,inspect,corpus}``.

Exit codes:
    0 success
    1 unexpected failure
    2 training data missing (no directory or no WAV files)
    3 non-finite loss during training
    4 profile mismatch between checkpoint, config flags and audio
    5 corrupt or incompatible latent/token file
    6 unmatched files in evaluation
    7 unknown or truncated file in inspect
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .audio_io import read_wav, write_wav
from .autodiff.checkpoint import MAGIC as CHECKPOINT_MAGIC
from .codec import ActivationMeter, decode, encode_sequence, pair_schedule
from .config import CodecConfig, FsqConfig, profile
from .corpus import write_corpus
from .exceptions import ConfigError, DataError, DimensionError, LengthError, NonFiniteError, UsageError
from .formats import LATENT_MAGIC, TOKEN_MAGIC, read_header, read_sequence, write_sequence
from .fsq import bitrate
from .metrics import MetricReport, evaluate_pair
from .train import load_checkpoint, train_loop

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_NO_DATA = 2
EXIT_NAN = 3
EXIT_PROFILE = 4
EXIT_CORRUPT = 5
EXIT_UNMATCHED = 6
EXIT_UNKNOWN_FORMAT = 7

THREADS_ENV = "DUALCODEC_THREADS"
LATENT_FRAME_CHANNELS = 64

log = logging.getLogger("dualcodec")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _resolve_config(args) -> CodecConfig | None:
    """Config from ``--config`` / ``--profile`` / ``--seed``; ``None`` if none of them was given."""
    cfg = None
    if args.config:
        cfg = CodecConfig.from_file(args.config)
    elif args.profile:
        cfg = profile(args.profile)
    if cfg is not None and args.profile and cfg.profile != args.profile:
        raise CliError(EXIT_PROFILE, f"--profile {args.profile} conflicts with config profile {cfg.profile}")
    if cfg is not None and args.seed is not None:
        cfg.train.seed = args.seed
    return cfg


def _load_model(path: str, args):
    try:
        ckpt = load_checkpoint(path)
    except (DataError, OSError, ConfigError) as exc:
        raise CliError(EXIT_FAILURE, f"cannot load checkpoint: {exc}") from None
    flags = _resolve_config(args)
    if flags is not None:
        ours = (flags.profile, flags.signal, flags.model, flags.fsq)
        theirs = (ckpt.cfg.profile, ckpt.cfg.signal, ckpt.cfg.model, ckpt.cfg.fsq)
        if ours != theirs:
            raise CliError(EXIT_PROFILE, f"checkpoint profile {ckpt.cfg.profile!r} does not match the requested configuration")
    return ckpt.model(use_ema=ckpt.cfg.decode.use_ema)


def _wav_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".wav")


# commands -----------------------------------------------------------------------------


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise CliError(EXIT_NO_DATA, f"data directory {data_dir} does not exist")
    files = _wav_files(data_dir)
    if not files:
        raise CliError(EXIT_NO_DATA, f"no WAV files in {data_dir}")
    cfg = _resolve_config(args) or profile("toy")
    if args.steps is not None:
        cfg.train.steps = args.steps
    cfg.validate()
    try:
        dataset = [read_wav(p) for p in files]
    except DataError as exc:
        raise CliError(EXIT_NO_DATA, str(exc)) from None
    out = Path(args.out)
    loss_csv = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    if loss_csv.exists():
        loss_csv.unlink()
    try:
        result = train_loop(cfg, dataset, loss_csv=loss_csv, checkpoint=out)
    except NonFiniteError as exc:
        raise CliError(EXIT_NAN, f"training aborted: {exc}") from None
    except DataError as exc:
        raise CliError(EXIT_NO_DATA, str(exc)) from None
    print(f"trained {cfg.train.steps} steps; final smoothed loss {result.records[-1].smoothed_loss:.6g}")
    print(f"checkpoint: {out}")
    print(f"loss log: {loss_csv}")
    return EXIT_OK


def cmd_encode(args) -> int:
    model = _load_model(args.checkpoint, args)
    try:
        wave = read_wav(args.input)
    except DataError as exc:
        raise CliError(EXIT_FAILURE, str(exc)) from None
    try:
        seq = encode_sequence(model, wave, args.mode)
    except ConfigError as exc:
        raise CliError(EXIT_PROFILE, str(exc)) from None
    except LengthError as exc:
        raise CliError(EXIT_FAILURE, str(exc)) from None
    write_sequence(args.output, seq)
    kind = "tokens" if args.mode == "discrete" else "latents"
    print(f"encoded {seq.n_chunks} chunks of {kind} to {args.output}")
    return EXIT_OK


def cmd_decode(args) -> int:
    model = _load_model(args.checkpoint, args)
    try:
        seq = read_sequence(args.input)
    except (DataError, OSError) as exc:
        raise CliError(EXIT_CORRUPT, f"cannot read {args.input}: {exc}") from None
    strategy = args.strategy or model.cfg.decode.strategy
    steps = args.steps or model.cfg.decode.steps
    seed = args.seed if args.seed is not None else model.cfg.train.seed
    try:
        with ActivationMeter() as meter:
            result = decode(model, seq, strategy, steps, np.random.default_rng(seed), meter)
    except (DataError, DimensionError, UsageError, ConfigError) as exc:
        raise CliError(EXIT_CORRUPT, f"cannot decode {args.input}: {exc}") from None
    write_wav(args.output, result.wave)
    print(f"strategy={strategy} steps={steps} decoder_calls={result.calls} "
          f"peak_activation_bytes={result.peak_bytes}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ref_dir, est_dir = Path(args.reference), Path(args.estimate)
    for d in (ref_dir, est_dir):
        if not d.is_dir():
            raise CliError(EXIT_UNMATCHED, f"{d} is not a directory")
    refs = {p.name: p for p in _wav_files(ref_dir)}
    ests = {p.name: p for p in _wav_files(est_dir)}
    common = sorted(set(refs) & set(ests))
    unmatched = sorted(set(refs) ^ set(ests))
    if common:
        rows = [evaluate_pair(name, read_wav(refs[name]), read_wav(ests[name])) for name in common]
        report = MetricReport(rows)
        report.write_csv(args.output)
        agg = report.aggregate
        print(f"{len(rows)} files: mean SI-SDR {agg.si_sdr_db:.3f} dB, mean LSD {agg.lsd:.4f}")
    if unmatched or not common:
        for name in unmatched:
            print(f"unmatched: {name}", file=sys.stderr)
        raise CliError(EXIT_UNMATCHED, "no matching file names" if not common else f"{len(unmatched)} unmatched files")
    return EXIT_OK


def describe_header(header) -> list[str]:
    """Human-readable summary lines for a DCTK/DCLT header."""
    meta = header.meta
    chunk_seconds = meta.chunk_seconds
    values = header.k * header.d
    lines = [
        f"format: {header.magic.decode()} v{header.version} ({header.kind})",
        f"chunks: {header.n_chunks}",
        f"summary embeddings per chunk (K): {header.k}",
        f"dimensions per embedding (d): {header.d}",
        f"sample rate: {meta.sample_rate} Hz, channels: {meta.channels}",
        f"window: {meta.window}, hop: {meta.hop}, frames per chunk: {meta.t_chunk}",
        f"samples: {meta.n_samples} ({meta.n_samples / meta.sample_rate:.3f} s)",
        f"chunk duration: {chunk_seconds:.5f} s",
    ]
    if header.n is not None:
        fsq = FsqConfig(n=header.n, d=header.d)
        bps = bitrate(fsq, header.k, chunk_seconds)
        lines.append(f"levels per dimension: {fsq.levels}, codebook size: {fsq.codebook_size}")
        lines.append(f"bitrate: {bps / 1000:.2f} kbps ({bps:.1f} bps)")
    rate = values / LATENT_FRAME_CHANNELS / chunk_seconds
    lines.append(f"latent rate: {rate:.2f} Hz (~{round(rate)} Hz)")
    ratio = meta.channels * meta.t_chunk * meta.hop / values
    lines.append(f"compression ratio: {ratio:g}x")
    return lines


def cmd_inspect(args) -> int:
    path = Path(args.path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CliError(EXIT_UNKNOWN_FORMAT, str(exc)) from None
    magic = raw[:4]
    if magic in (TOKEN_MAGIC, LATENT_MAGIC):
        try:
            header, offset = read_header(raw)
            read_sequence(path)
        except DataError as exc:
            raise CliError(EXIT_UNKNOWN_FORMAT, f"{path}: {exc}") from None
        print("\n".join(describe_header(header)))
        return EXIT_OK
    if magic == CHECKPOINT_MAGIC:
        try:
            ckpt = load_checkpoint(path)
        except DataError as exc:
            raise CliError(EXIT_UNKNOWN_FORMAT, str(exc)) from None
        cfg = ckpt.cfg
        n_raw = sum(v.size for v in ckpt.raw.values())
        print(f"format: DCKP checkpoint, profile {cfg.profile}, step {ckpt.step}")
        print(f"parameters: {n_raw} (EMA copy: {'yes' if ckpt.ema else 'no'})")
        print(f"bitrate: {cfg.bitrate_bps / 1000:.2f} kbps")
        print(f"latent rate: {cfg.latent_rate_hz:.2f} Hz (~{round(cfg.latent_rate_hz)} Hz)")
        print(f"compression ratio: {cfg.compression_ratio:g}x")
        return EXIT_OK
    raise CliError(EXIT_UNKNOWN_FORMAT, f"{path}: unknown magic {magic!r}")


def cmd_corpus(args) -> int:
    cfg = _resolve_config(args) or profile("toy")
    paths = write_corpus(args.output, args.count, args.seconds, cfg.signal.sample_rate,
                         seed=args.seed if args.seed is not None else 0, channels=cfg.signal.channels,
                         kinds=args.kind)
    print(f"wrote {len(paths)} files to {args.output}")
    return EXIT_OK


def cmd_schedule(args) -> int:
    sched = pair_schedule(args.chunks, args.steps)
    for s, pairs in enumerate(sched.steps, start=1):
        print(f"step {s}: " + ", ".join(f"({'PAD' if a < 0 else a},{'PAD' if b < 0 else b})" for a, b in pairs))
    print(f"decoder calls: {sched.calls}")
    return EXIT_OK


# parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualcodec", description="Consistency-trained audio codec.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="YAML config file (optional 'profile' key plus section overrides)")
    parser.add_argument("--profile", choices=["full", "toy", "custom"], help="base configuration profile")
    parser.add_argument("--seed", type=int, help="seed for training and decoding noise")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a directory of WAV files")
    p.add_argument("--data", required=True, help="directory with WAV files")
    p.add_argument("--steps", type=int, help="optimizer steps (default: profile value)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--loss-csv", help="loss log path (default: <out>.loss.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode a WAV file to latents (DCLT) or tokens (DCTK)")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mode", choices=["continuous", "discrete"], default="continuous")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a DCLT/DCTK file to WAV")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--strategy", choices=["ar", "parallel"])
    p.add_argument("--steps", type=int, help="denoising steps")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="SI-SDR and log-spectral distance over matching WAV names")
    p.add_argument("reference")
    p.add_argument("estimate")
    p.add_argument("output", help="CSV report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="print the header of a DCTK, DCLT or DCKP file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("corpus", help="write a synthetic corpus of WAV files")
    p.add_argument("output")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--kind", choices=["mixed", "tones"], default="mixed")
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("schedule", help="print the parallel decoding pair schedule")
    p.add_argument("chunks", type=int)
    p.add_argument("steps", type=int)
    p.set_defaults(func=cmd_schedule)
    return parser


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise CliError(EXIT_FAILURE, f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise CliError(EXIT_FAILURE, f"{THREADS_ENV} must be a positive integer, got {value!r}")
    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_PROFILE


if __name__ == "__main__":
    sys.exit(main())
