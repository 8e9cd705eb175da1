"""Command-line experiment runner.

Subcommands: ``train`` one model, ``eval`` a checkpoint, ``sweep-fig4``
(NMSE vs feedback bits at several uplink pilot lengths, uncorrelated
fading), ``sweep-fig5`` (NMSE vs path count under Doppler fading), and
``export-frames`` (channel realizations to .npz).  Sweeps exit 0 only if
every grid point trained to completion and the trend checks passed.
"""

from __future__ import annotations

import argparse
import os
import sys

from .channel import sample_frame_batch, save_frames
from .config import ExperimentConfig
from .errors import TrainingDivergedError
from .experiments import (
    SCALES,
    evaluate_checkpoint,
    run_fig4_sweep,
    run_fig5_sweep,
)
from .networks import save_model
from .numerics import Rng
from .training import TrainConfig, evaluate_model, nmse_db, save_history_csv, train

__all__ = ["main"]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of experiment settings")
    p.add_argument("--paths", type=int, help="number of propagation paths P")
    p.add_argument("--antennas", type=int, help="BS antenna count M")
    p.add_argument("--b-bits", type=int, help="feedback bits per slot B")
    p.add_argument("--l-ul", type=int, help="uplink pilot length")
    p.add_argument("--l-dl", type=int, help="downlink pilot length")
    p.add_argument("--snr-db", type=float, help="per-link SNR in dB")
    p.add_argument("--t-slots", type=int, help="slots per frame T")
    p.add_argument(
        "--rho-override",
        type=float,
        help="force the fading correlation instead of deriving it from Doppler",
    )


def _build_config(args, defaults: dict | None = None) -> ExperimentConfig:
    if args.config:
        with open(args.config) as f:
            cfg = ExperimentConfig.from_json(f.read())
    else:
        cfg = ExperimentConfig(**(defaults or {}))
    overrides = {
        "n_paths": args.paths,
        "m_antennas": args.antennas,
        "b_bits": getattr(args, "b_bits", None),
        "l_ul": args.l_ul,
        "l_dl": args.l_dl,
        "snr_db": args.snr_db,
        "t_slots": args.t_slots,
        "rho_override": args.rho_override,
        "seed": args.seed,
    }
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None})


def _progress_printer(every: int):
    def hook(it, loss, lr):
        if it % every == 0:
            print(f"  iter {it:6d}  loss {loss:10.4f}  lr {lr:.2e}", flush=True)

    return hook


def _cmd_train(args) -> int:
    preset = SCALES[args.scale]
    cfg = _build_config(args, {"m_antennas": preset.m_antennas})
    tcfg = TrainConfig(
        iterations=args.iterations or preset.iterations,
        batch_size=args.batch_size or preset.batch_size,
        seed=args.seed,
    )
    print(f"training {args.variant} ({args.scale} scale) for {tcfg.iterations} iterations")
    try:
        model, history = train(
            tcfg, cfg, args.variant, dims=preset.dims,
            progress=_progress_printer(max(1, tcfg.iterations // 20)),
        )
    except TrainingDivergedError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    ratios = evaluate_model(model, cfg, args.frames, args.seed)
    per_slot = nmse_db(ratios)
    for t, val in enumerate(per_slot, start=1):
        print(f"slot {t}: NMSE {val:+.2f} dB")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        ckpt = os.path.join(args.out, f"{args.variant}.ckpt")
        save_model(ckpt, model, cfg, preset.dims)
        save_history_csv(os.path.join(args.out, f"{args.variant}_history.csv"), history)
        print(f"saved {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    cfg = None
    if args.config:
        with open(args.config) as f:
            cfg = ExperimentConfig.from_json(f.read())
    per_slot = evaluate_checkpoint(args.ckpt, cfg, args.frames, args.seed)
    for t, val in enumerate(per_slot, start=1):
        print(f"slot {t}: NMSE {val:+.2f} dB")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "eval.csv")
        with open(path, "w") as f:
            f.write("t,nmse_db\n")
            for t, val in enumerate(per_slot, start=1):
                f.write(f"{t},{val:.6f}\n")
        print(f"saved {path}")
    return 0


def _finish_sweep(result, out_dir, csv_name: str) -> int:
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, csv_name)
        result.to_csv(path)
        print(f"saved {path}")
    for note in result.notes:
        print(note)
    for failure in result.failures:
        print(f"FAILED point: {failure}")
    if result.completed and result.trend_ok:
        print("sweep complete: all points trained, trend checks passed")
        return 0
    print("sweep failed: incomplete points or trend violations", file=sys.stderr)
    return 1


def _cmd_fig4(args) -> int:
    preset = SCALES[args.scale]
    defaults = {
        "n_paths": 4 if args.scale == "desk" else 8,
        "m_antennas": preset.m_antennas,
        "snr_db": preset.snr_db,
        "t_slots": preset.fig4_slots,
    }
    cfg = _build_config(args, defaults)
    result = run_fig4_sweep(
        cfg, args.b_values, args.lul_values, scale=args.scale, out_dir=args.out,
        progress=_progress_printer(1000) if args.verbose else None,
    )
    t_final = cfg.t_slots
    for row in result.rows:
        if row.t == t_final:
            print(
                f"{row.variant:9s} B={row.b_bits:2d} L_ul={row.l_ul}  "
                f"NMSE {row.nmse_db:+.2f} dB  ({row.runtime_s:.0f}s)"
            )
    return _finish_sweep(result, args.out, "fig4.csv")


def _cmd_fig5(args) -> int:
    preset = SCALES[args.scale]
    cfg = _build_config(
        args,
        {
            "b_bits": 20,
            "l_ul": 2,
            "l_dl": 2,
            "m_antennas": preset.m_antennas,
            "snr_db": preset.snr_db,
            "t_slots": preset.fig5_slots,
        },
    )
    result = run_fig5_sweep(
        cfg, args.p_values, scale=args.scale, out_dir=args.out,
        progress=_progress_printer(1000) if args.verbose else None,
    )
    t_final = cfg.t_slots
    for row in result.rows:
        if row.t == t_final:
            print(
                f"{row.variant:9s} P={row.n_paths:2d}  "
                f"NMSE {row.nmse_db:+.2f} dB  ({row.runtime_s:.0f}s)"
            )
    return _finish_sweep(result, args.out, "fig5.csv")


def _cmd_export_frames(args) -> int:
    cfg = _build_config(args)
    batch = sample_frame_batch(cfg, args.frames, Rng(args.seed))
    save_frames(args.file, batch, cfg)
    print(f"wrote {args.frames} frames to {args.file}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hyperrnn",
        description="End-to-end downlink channel estimation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model and report per-slot NMSE")
    p_train.add_argument("--variant", choices=("hyperrnn", "baseline"), default="hyperrnn")
    p_train.add_argument("--scale", choices=tuple(SCALES), default="desk")
    p_train.add_argument("--iterations", type=int, default=0, help="override preset iterations")
    p_train.add_argument("--batch-size", type=int, default=0, help="override preset batch size")
    p_train.add_argument("--frames", type=int, default=10_000, help="evaluation frames")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", help="directory for checkpoint and history CSV")
    _add_config_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--frames", type=int, default=10_000)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", help="directory for the per-slot CSV")
    p_eval.add_argument("--config", help="JSON experiment settings (defaults to the checkpoint's)")
    p_eval.set_defaults(func=_cmd_eval)

    p_fig4 = sub.add_parser(
        "sweep-fig4", help="NMSE vs feedback bits for several uplink pilot lengths"
    )
    p_fig4.add_argument("--b-values", type=_int_list, default=[5, 10, 20])
    p_fig4.add_argument("--lul-values", type=_int_list, default=[1, 2, 4])
    p_fig4.add_argument("--scale", choices=tuple(SCALES), default="desk")
    p_fig4.add_argument("--seed", type=int, default=0)
    p_fig4.add_argument("--out", help="directory for CSV and checkpoints")
    p_fig4.add_argument("--verbose", action="store_true")
    _add_config_flags(p_fig4)
    p_fig4.set_defaults(func=_cmd_fig4)

    p_fig5 = sub.add_parser("sweep-fig5", help="NMSE vs path count under Doppler fading")
    p_fig5.add_argument("--p-values", type=_int_list, default=[2, 8])
    p_fig5.add_argument("--scale", choices=tuple(SCALES), default="desk")
    p_fig5.add_argument("--seed", type=int, default=0)
    p_fig5.add_argument("--out", help="directory for CSV and checkpoints")
    p_fig5.add_argument("--verbose", action="store_true")
    _add_config_flags(p_fig5)
    p_fig5.set_defaults(func=_cmd_fig5)

    p_exp = sub.add_parser("export-frames", help="sample channel frames to an .npz file")
    p_exp.add_argument("--frames", type=int, default=1000)
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--file", required=True, help="output .npz path")
    _add_config_flags(p_exp)
    p_exp.set_defaults(func=_cmd_export_frames)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
