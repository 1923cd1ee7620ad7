"""Command-line interface.

Subcommands: nmse (estimation-error sweep), train (agent training),
compare (movable vs fixed antenna evaluation), heatmap (gain-map export).
Common flags: --config, --seed, --out.  The default output directory can
also be set through the MAOTFS_OUT environment variable.  Exit code 0 on
success; failures print a one-line JSON error to stderr and exit 1.
"""

import argparse
import json
import os
import sys

from .config import ExperimentConfig, default_config
from . import experiments


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return default_config()
    return ExperimentConfig.from_file(path)


def _out_dir(args) -> str:
    return args.out or os.environ.get("MAOTFS_OUT", "out")


def _add_common(parser):
    parser.add_argument("--config", help="JSON experiment configuration file")
    parser.add_argument("--seed", type=int, default=0, help="master random seed")
    parser.add_argument("--out", help="output directory (default: $MAOTFS_OUT or ./out)")


def _parse_floats(text):
    return [float(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maotfs",
        description="Movable-antenna OTFS simulation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_nmse = sub.add_parser("nmse", help="channel-estimation error sweep")
    _add_common(p_nmse)
    p_nmse.add_argument("--snr", default="0,5,10,15,20",
                        help="comma-separated SNR list in dB")
    p_nmse.add_argument("--seeds", type=int, default=20,
                        help="number of channel seeds per SNR")
    p_nmse.add_argument("--workers", type=int, default=1,
                        help="worker processes for the sweep")

    p_train = sub.add_parser("train", help="train the positioning agent")
    _add_common(p_train)
    p_train.add_argument("--episodes", type=int, help="override episode count")
    p_train.add_argument("--alpha", default=None,
                         help="learning rate, or comma-separated list for a sweep")

    p_cmp = sub.add_parser("compare", help="evaluate movable vs fixed antenna")
    _add_common(p_cmp)
    p_cmp.add_argument("--checkpoint", required=True, help="trained network checkpoint")
    p_cmp.add_argument("--n-envs", type=int, default=50,
                       help="number of evaluation environments")

    p_map = sub.add_parser("heatmap", help="export a gain heatmap")
    _add_common(p_map)
    p_map.add_argument("--checkpoint", help="optional checkpoint for the MA trajectory")

    return parser


def run(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _out_dir(args)

    if args.command == "nmse":
        _, summary = experiments.run_nmse_sweep(
            cfg, _parse_floats(args.snr), args.seeds, args.seed, out_dir,
            workers=args.workers,
        )
        for row in summary:
            print(f"snr={row['snr_db']:g} {row['method']}: "
                  f"median nmse {row['median_nmse_db']:.2f} dB ({row['n_ok']} ok)")
    elif args.command == "train":
        if args.episodes is not None:
            cfg.agent.episodes = args.episodes
        alphas = _parse_floats(args.alpha) if args.alpha else None
        results = experiments.run_drl_training(cfg, args.seed, out_dir, alphas=alphas)
        for alpha, (_, logs, _) in results.items():
            tail = logs[-1].mean_reward_est if logs else float("nan")
            print(f"alpha={alpha:g}: {len(logs)} episodes, last mean reward {tail:.4f}")
    elif args.command == "compare":
        _, win_fraction = experiments.run_ma_vs_fpa(
            cfg, args.checkpoint, args.n_envs, args.seed, out_dir
        )
        print(f"win fraction: {win_fraction:.3f} over {args.n_envs} environments")
    elif args.command == "heatmap":
        gains, ma_final, fpa = experiments.export_heatmap(
            cfg, args.seed, out_dir, checkpoint_path=args.checkpoint
        )
        print(f"heatmap written; max gain {gains.max():.4g}, "
              f"MA final {ma_final}, FPA {fpa}")
    else:  # pragma: no cover - argparse enforces the choices
        raise ValueError(f"unknown command {args.command!r}")
    print(f"outputs in {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
