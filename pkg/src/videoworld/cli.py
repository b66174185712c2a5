"""Command-line entry points: gen-data, train-stage1, train-stage2, rollout,
evaluate, serve."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_run_config
from .data import VideoClip, save_clip_dir
from .dynamics import rollout
from .pipeline import (
    evaluate,
    generate_dataset,
    load_bundle,
    load_eval_clips,
    train_stage1,
    train_stage2,
    write_report,
)
from .seeding import make_rng


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run config file (key = value lines)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", required=True, help="output directory")


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    train_dir, eval_dir = generate_dataset(cfg, Path(args.out))
    print(f"wrote {cfg.dataset.num_clips} training clips to {train_dir}")
    print(f"wrote {cfg.dataset.eval_clips} eval clips to {eval_dir}")
    return 0


def cmd_train_stage1(args) -> int:
    cfg = _load_config(args)
    results = train_stage1(cfg, Path(args.data), Path(args.out))
    for kind, result in results.items():
        print(
            f"{kind}: {len(result.losses)} steps, "
            f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}, "
            f"~{result.flops_estimate:.3e} FLOPs -> {result.checkpoint_path}"
        )
    return 0


def cmd_train_stage2(args) -> int:
    cfg = _load_config(args)
    result = train_stage2(cfg, Path(args.data), Path(args.out))
    print(
        f"dynamics: {len(result.losses)} steps, "
        f"masked CE {result.losses[0]:.4f} -> {result.losses[-1]:.4f}, "
        f"~{result.flops_estimate:.3e} FLOPs -> {result.checkpoint_path}"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    report = evaluate(cfg, Path(args.data), Path(args.ckpt))
    text_path, json_path = write_report(report, Path(args.out))
    print(report.to_grid())
    print(f"report written to {text_path} and {json_path}")
    return 0


def cmd_rollout(args) -> int:
    cfg = _load_config(args)
    bundle = load_bundle(Path(args.ckpt))
    tok_clips, lam_clips = load_eval_clips(Path(args.data) / "eval", cfg.dataset)
    clip = tok_clips[args.clip]
    prompt = VideoClip(clip.frames[: args.prompt_frames], fps=clip.fps)
    rng = make_rng(cfg.seed, "cli-rollout")
    if args.actions:
        actions = np.array([int(v) for v in args.actions.split(",")], dtype=np.int64)
    else:
        actions = rng.integers(0, cfg.dynamics.num_actions, size=args.num_actions)
    prompt_actions = None
    if args.prompt_frames >= 2:
        prompt_actions = bundle.lam.infer_actions(
            VideoClip(lam_clips[args.clip].frames[: args.prompt_frames], fps=clip.fps)
        )
    out = rollout(
        prompt, actions, bundle.tokenizer, bundle.dynamics, cfg.dynamics, rng, prompt_actions
    )
    save_clip_dir(Path(args.out), out)
    print(f"rolled out {len(actions)} actions {actions.tolist()} -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    bundle = load_bundle(Path(args.ckpt))
    serve(bundle, host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="videoworld")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="materialize the synthetic dataset")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-stage1", help="train the tokenizer and the action model")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="train the dynamics model on frozen stage-1 models")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("evaluate", help="run the full evaluation protocol")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rollout", help="generate frames from a prompt and actions")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", type=int, default=0, help="eval clip index for the prompt")
    p.add_argument("--prompt-frames", type=int, default=1)
    p.add_argument("--num-actions", type=int, default=6)
    p.add_argument("--actions", default="", help="comma-separated action ids")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("serve", help="start the interactive rollout service")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="", help="unused; present for CLI uniformity")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
