"""Command-line entry point.

Verbs: gen-data, train, sample, eval, analyze-tokens, spectrum.
Exit codes: 0 success, 2 usage/config error, 3 data error, 4 internal
invariant violation. Every command writes its fully resolved config next
to its outputs, and all randomness is derived from the logged seed.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import load_config, write_resolved
from .data import (
    denormalize,
    gen_synthetic,
    load_sequence,
    normalize,
    save_sequence,
    RadarSequence,
)
from .diffusion import make_schedule
from .exceptions import (
    ContractError,
    DimensionError,
    FileFormatError,
    ParameterError,
)
from .metrics import (
    evaluate_forecasts,
    radial_psd,
    spatial_tokens,
    temporal_tokens,
    token_similarity,
)
from .sampling import ensemble_forecast
from .training import restore, train_run

_DATA_STREAM = 2
_SAMPLE_STREAM = 3


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtca",
        description="Train, sample and verify the desk-scale nowcasting model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic rainfall sequences")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on .rseq files")
    _add_config_flags(p)
    p.add_argument("--data", help="directory of training sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--progress", action="store_true", help="print running loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate ensemble forecasts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--conditions", required=True, help=".rseq file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--ensemble", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="strided chain length")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score forecasts against truth sequences")
    _add_config_flags(p)
    p.add_argument("--forecasts", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-tokens", help="token cosine-similarity matrix")
    _add_config_flags(p)
    p.add_argument("--a", required=True, dest="file_a")
    p.add_argument("--b", required=True, dest="file_b")
    p.add_argument(
        "--mode", choices=("spatial", "temporal", "pred-obs"), default="pred-obs"
    )
    p.add_argument("--out", required=True, help="CSV path for the matrix")
    p.set_defaults(func=cmd_analyze_tokens)

    p = sub.add_parser("spectrum", help="radially averaged power spectrum")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--frame", type=int, default=None,
                   help="single frame index (default: mean over frames)")
    p.set_defaults(func=cmd_spectrum)

    return parser


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.set)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    frames = cfg.frames_cond + cfg.frames_pred
    params = cfg.blob_params()
    for i in range(args.count):
        seq = gen_synthetic(
            params, frames, cfg.height, cfg.width,
            seed=[seed, _DATA_STREAM, i],
            timestep_minutes=cfg.timestep_minutes,
        )
        save_sequence(out / f"seq_{i:04d}.rseq", seq)
    print(f"wrote {args.count} sequences to {out} (seed={seed})")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    data_dir = args.data or cfg.data_dir
    if not data_dir:
        raise ParameterError("no data directory: pass --data or set data_dir")
    progress = None
    if args.progress:
        every = max(1, cfg.train_steps // 20)

        def progress(step, value, _every=every):
            if step % _every == 0:
                print(f"step {step} loss {value:.5f}")

    result = train_run(cfg, data_dir, args.out, resume=args.resume,
                       progress=progress)
    print(
        f"trained steps {result.start_step + 1}..{cfg.train_steps}, "
        f"checkpoint at {result.checkpoint_path} (seed={cfg.seed})"
    )
    return 0


def cmd_sample(args) -> int:
    cfg, model, _, _ = restore(args.checkpoint)
    seed = cfg.seed if args.seed is None else args.seed
    n_members = cfg.ensemble if args.ensemble is None else args.ensemble
    steps = cfg.sample_steps if args.steps is None else args.steps
    steps = steps if steps else None
    sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)

    cond_path = Path(args.conditions)
    files = sorted(cond_path.glob("*.rseq")) if cond_path.is_dir() else [cond_path]
    if not files:
        raise ParameterError(f"no .rseq files under {cond_path}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)

    for idx, path in enumerate(files):
        seq = load_sequence(path)
        if seq.frames < cfg.frames_cond:
            raise ParameterError(
                f"{path}: {seq.frames} frames < condition count {cfg.frames_cond}"
            )
        if seq.height != cfg.height or seq.width != cfg.width:
            raise ParameterError(
                f"{path}: field {seq.height}x{seq.width} does not match model "
                f"{cfg.height}x{cfg.width}"
            )
        cond = normalize(seq.values[: cfg.frames_cond], cfg.rain_cap)
        members = ensemble_forecast(
            model, sched, cond, n_members,
            seed_parts=(seed, _SAMPLE_STREAM, idx), steps=steps,
        )
        rates = denormalize(members, cfg.rain_cap)
        for j in range(n_members):
            save_sequence(
                out / f"{path.stem}_m{j}.rseq",
                RadarSequence(rates[j], seq.timestep_minutes),
            )
    print(
        f"wrote {n_members} members x {len(files)} condition sets to {out} "
        f"(seed={seed})"
    )
    return 0


def _load_truth_and_members(cfg, forecasts_dir: Path, truth_dir: Path):
    truth_files = sorted(truth_dir.glob("*.rseq"))
    if not truth_files:
        raise ParameterError(f"no truth sequences under {truth_dir}")
    frames_pred = cfg.frames_pred
    truths, member_sets, cadence = [], [], None
    for path in truth_files:
        seq = load_sequence(path)
        cadence = seq.timestep_minutes if cadence is None else cadence
        if seq.frames == cfg.frames_cond + frames_pred:
            truth = seq.values[cfg.frames_cond:]
        elif seq.frames == frames_pred:
            truth = seq.values
        else:
            raise ParameterError(
                f"{path}: {seq.frames} frames, expected {frames_pred} or "
                f"{cfg.frames_cond + frames_pred}"
            )
        member_files = sorted(forecasts_dir.glob(f"{path.stem}_m*.rseq"))
        if not member_files:
            raise ParameterError(f"no forecast members for {path.stem}")
        members = []
        for mf in member_files:
            mseq = load_sequence(mf)
            if mseq.values.shape != truth.shape:
                raise DimensionError(
                    f"{mf}: forecast shape {mseq.values.shape} != truth "
                    f"{truth.shape}"
                )
            members.append(mseq.values)
        truths.append(truth)
        member_sets.append(np.stack(members))
    counts = {m.shape[0] for m in member_sets}
    if len(counts) != 1:
        raise ParameterError(f"uneven ensemble sizes across samples: {counts}")
    return np.stack(member_sets), np.stack(truths), cadence


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    members, truth, cadence = _load_truth_and_members(
        cfg, Path(args.forecasts), Path(args.truth)
    )
    report = evaluate_forecasts(
        members, truth,
        thresholds=cfg.threshold_list(),
        fss_window=cfg.fss_window,
        timestep_minutes=cadence or cfg.timestep_minutes,
        patch=cfg.patch,
    )
    out = Path(args.out)
    report.write(out)
    write_resolved(cfg, out)
    for key, value in report.summary().items():
        print(f"{key}={value}")
    return 0


def cmd_analyze_tokens(args) -> int:
    cfg = load_config(args.config, args.set)
    seq_a = load_sequence(args.file_a)
    seq_b = load_sequence(args.file_b)
    if seq_a.values.shape != seq_b.values.shape:
        raise DimensionError(
            f"sequences differ in shape: {seq_a.values.shape} vs "
            f"{seq_b.values.shape}"
        )
    if args.mode == "spatial":
        tok_a = spatial_tokens(seq_a.values, cfg.patch)
        tok_b = spatial_tokens(seq_b.values, cfg.patch)
    else:  # temporal and pred-obs share the per-frame token construction
        tok_a = temporal_tokens(seq_a.values, cfg.patch)
        tok_b = temporal_tokens(seq_b.values, cfg.patch)
    sim = token_similarity(tok_a, tok_b)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, sim.matrix, delimiter=",")
    print(f"similarity_global_mean={sim.global_mean!r}")
    if sim.zero_norm_tokens:
        print(f"warning: {sim.zero_norm_tokens} zero-norm tokens scored as 0")
    return 0


def cmd_spectrum(args) -> int:
    seq = load_sequence(args.input)
    if args.frame is not None:
        if not 0 <= args.frame < seq.frames:
            raise ParameterError(
                f"frame {args.frame} out of range 0..{seq.frames - 1}"
            )
        field = seq.values[args.frame]
    else:
        field = seq.values.mean(axis=0)
    spec = radial_psd(field)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wavenumber", "wavelength", "power"])
        lengths = spec.wavelengths()
        for k in range(1, spec.wavenumber.size):
            writer.writerow(
                [int(spec.wavenumber[k]), repr(float(lengths[k - 1])),
                 repr(float(spec.power[k]))]
            )
    print(f"wrote spectrum ({spec.wavenumber.size - 1} rings) to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ParameterError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ContractError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
