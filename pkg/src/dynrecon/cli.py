"""Command-line entry points: simulate, reconstruct, evaluate.

Exit codes: 0 success, 1 unreadable input, 2 malformed configuration,
3 non-finite loss during training, 4 dataset/checkpoint shape mismatch.
"""
import argparse
import os
import sys

import numpy as np

from . import io
from .generator import generate_batch
from .kspace import gridding_recon
from .metrics import evaluate as evaluate_series
from .metrics import latent_alignment
from .phantom import acquire
from .trainer import TrainingDiverged, expand_latents, train

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_NONFINITE, EXIT_SHAPE = 0, 1, 2, 3, 4


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    return code


def _config(args):
    cfg = io.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "preset", None) is not None:
        cfg["preset"] = args.preset
    io.validate_config(cfg)
    return cfg


def cmd_simulate(args):
    cfg = _config(args)
    dataset, truth, _ = acquire(io.phantom_config(cfg))
    io.write_dataset(args.out, dataset, truth)
    print(f"wrote {dataset.n_frames} frames ({dataset.grid}x{dataset.grid}, "
          f"{dataset.n_coils} coils) to {args.out}")
    return EXIT_OK


def _write_frames(out_dir, images):
    frame_dir = os.path.join(out_dir, "frames")
    os.makedirs(frame_dir, exist_ok=True)
    vmax = float(np.max(np.abs(images)))
    for i, img in enumerate(images):
        io.write_pgm(os.path.join(frame_dir, f"frame_{i:04d}.pgm"), img, vmax)


def cmd_reconstruct(args):
    cfg = _config(args)
    tc = io.train_config(cfg)
    dataset = io.read_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    M = dataset.n_frames
    loss_path = os.path.join(args.out, "loss.csv")
    with open(loss_path, "w", encoding="utf-8") as loss_fh:
        loss_fh.write(",".join(io.LOSS_COLUMNS) + "\n")

        def monitor(level_index, epoch, params, Z, record):
            loss_fh.write(io.loss_row(record))
            loss_fh.flush()
            print(f"level {record.level} epoch {epoch} {record.mode} "
                  f"total={record.cost.total:.6g} data={record.cost.data:.6g}", flush=True)

        def on_level_end(level_index, params, Z):
            io.write_checkpoint(os.path.join(args.out, f"level_{level_index + 1}.gsck"),
                                params, expand_latents(Z, M))

        try:
            params, Z, _ = train(tc, dataset, monitor=monitor, on_level_end=on_level_end)
        except TrainingDiverged as exc:
            return _fail(EXIT_NONFINITE, str(exc))
    io.write_checkpoint(os.path.join(args.out, "final.gsck"), params, Z)
    io.write_latents_csv(os.path.join(args.out, "latents.csv"), Z)
    _write_frames(args.out, generate_batch(params, Z))
    print(f"wrote checkpoint, logs and {M} frames to {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    dataset = io.read_dataset(args.dataset)
    if dataset.truth is None:
        return _fail(EXIT_INPUT, "dataset has no ground-truth section")
    params, Z = io.read_checkpoint(args.checkpoint)
    M, N = dataset.n_frames, dataset.grid
    if Z.shape != (M, params.latent_dim) or params.out_size != N:
        return _fail(EXIT_SHAPE,
                     f"checkpoint ({len(Z)} latents, {params.out_size}x{params.out_size} output) "
                     f"does not match dataset ({M} frames, {N}x{N})")
    truth = dataset.truth.images.astype(np.complex128)
    recon = generate_batch(params, Z).astype(np.complex128)
    grid = np.stack([gridding_recon(f, dataset.coils) for f in dataset.frames])
    report = evaluate_series(truth, recon)
    baseline = evaluate_series(truth, grid)
    align = latent_alignment(Z, dataset.truth.phases) if M >= 8 else (float("nan"),) * 2
    io.write_report(args.out, report, baseline, align)
    print(f"SER {report.ser_db:.3f} dB (gridding {baseline.ser_db:.3f} dB), "
          f"PSNR {report.psnr_db:.3f} dB, SSIM {report.ssim:.4f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="dynrecon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a phantom acquisition")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", required=True, help="output GSTM dataset path")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="train generator and latents on a dataset")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--dataset", required=True, help="GSTM dataset path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--preset", choices=("desk64", "paper340"))
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score a checkpoint against ground truth")
    p.add_argument("--dataset", required=True, help="GSTM dataset with ground truth")
    p.add_argument("--checkpoint", required=True, help="GSCK checkpoint path")
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except io.ConfigError as exc:
        return _fail(EXIT_CONFIG, f"{args.config}: {exc}")
    except (OSError, io.FormatError) as exc:
        return _fail(EXIT_INPUT, str(exc))


if __name__ == "__main__":
    sys.exit(main())
