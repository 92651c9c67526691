"""Command-line driver.

Commands: gradcheck | gen-data | train | eval | ablate | explain.
Exit codes: 0 success, 1 validation failure, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys


def _default_threads() -> None:
    # Single-threaded BLAS keeps runs bit-reproducible across invocations.
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


_default_threads()

from .checkpoint import CheckpointError  # noqa: E402
from .config import Config, ConfigError, dump_config, load_config  # noqa: E402


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmi",
        description="Pairwise modality interaction: training, evaluation, "
                    "gradient checks, ablations, and explain dumps.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gradcheck", help="finite-difference check of every component")

    p = sub.add_parser("gen-data", help="generate a synthetic train/test pair")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    for name in ("train", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
        if name == "eval":
            p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("ablate", help="train and evaluate an axis of variants")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", required=True,
                   choices=["fusion", "interaction", "loc_components"])

    p = sub.add_parser("explain", help="dump fusion weights and attention maps")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--example", required=True, help="video id to explain")
    return parser


def _load(args) -> Config:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_gradcheck() -> int:
    from .checks import run_gradcheck_suite

    ok = run_gradcheck_suite(report=print)
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 2


def cmd_gen_data(args) -> int:
    from .synth import SynthSpec, gen_caption_set, gen_localization_set

    cfg = _load(args)
    base = dict(seed=cfg.seed, n_positions=cfg.positions,
                modality_dims=cfg.modality_dims,
                segment_frac=(cfg.segment_lo, cfg.segment_hi), noise=cfg.noise,
                coupling=cfg.coupling, word_dim=cfg.synth_word_dim)
    os.makedirs(args.out, exist_ok=True)
    if cfg.synth_task == "loc":
        train_spec = SynthSpec(num_videos=cfg.num_train, **base)
        test_spec = SynthSpec(num_videos=cfg.num_test,
                              **{**base, "seed": cfg.seed + 500000})
        train_set = gen_localization_set(train_spec, os.path.join(args.out, "train"))
        gen_localization_set(test_spec, os.path.join(args.out, "test"))
        # The test split must share the train split's embedding table.
        with open(train_set.embedding_path, "r", encoding="utf-8") as src:
            payload = src.read()
        with open(os.path.join(args.out, "test", "embeddings.txt"), "w",
                  encoding="utf-8") as dst:
            dst.write(payload)
    else:
        train_spec = SynthSpec(num_videos=cfg.num_train, **base)
        test_spec = SynthSpec(num_videos=cfg.num_test,
                              **{**base, "seed": cfg.seed + 500000})
        gen_caption_set(train_spec, os.path.join(args.out, "train"))
        gen_caption_set(test_spec, os.path.join(args.out, "test"))
    print(f"generated {cfg.synth_task} data under {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import train_captioner, train_localizer

    cfg = _load(args)
    cfg.require_paths("train_dir")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config_used.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    if cfg.task == "loc":
        ckpt = train_localizer(cfg, args.out)
    else:
        ckpt = train_captioner(cfg, args.out)
    print(f"checkpoint written to {ckpt}")
    return 0


def cmd_eval(args) -> int:
    from .train import eval_captioner, eval_localizer

    cfg = _load(args)
    cfg.require_paths("test_dir")
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint does not exist: {args.checkpoint}")
    if cfg.task == "loc":
        metrics = eval_localizer(cfg, args.checkpoint, args.out)
        print("IoU " + " ".join(str(m) for m in sorted(metrics)))
        print("R@1 " + " ".join(f"{metrics[m]:.2f}" for m in sorted(metrics)))
    else:
        metrics = eval_captioner(cfg, args.checkpoint, args.out)
        print(" ".join(metrics.keys()))
        print(" ".join(f"{v:.2f}" for v in metrics.values()))
    return 0


def cmd_ablate(args) -> int:
    from .train import run_ablation

    cfg = _load(args)
    cfg.require_paths("train_dir", "test_dir")
    rows = run_ablation(cfg, args.axis, args.out)
    print("variant seeds R@1@0.3 R@1@0.5 R@1@0.7")
    for row in rows:
        seeds = ",".join(str(s) for s in row["seeds"])
        vals = " ".join(f"{row['mean'][m]:.2f}" for m in (0.3, 0.5, 0.7))
        print(f"{row['variant']} {seeds} {vals}")
    return 0


def cmd_explain(args) -> int:
    from .train import explain

    cfg = _load(args)
    cfg.require_paths("test_dir")
    files = explain(cfg, args.checkpoint, args.example, args.out)
    for path in files:
        print(path)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    from .train import NumericalError

    try:
        if args.command == "gradcheck":
            return cmd_gradcheck()
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        if args.command == "explain":
            return cmd_explain(args)
        raise AssertionError(f"unhandled command {args.command}")
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
