"""Command-line interface: train, eval, sweep, render, baseline."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autodiff import load_checkpoint
from .baselines import make_baseline
from .config import RunConfig
from .evaluate import run_eval
from .model import GaloppNetwork, GaloppPolicy
from .sweep import PRECONFIGURED, sweep
from .training import train

POLICIES = ("galopp", "rs", "rsec", "gs")


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _build_policy(name: str, config: RunConfig, checkpoint: str | None,
                  stochastic: bool = False):
    if name == "galopp":
        network = GaloppNetwork(config.network_spec(), seed=config.seed)
        if checkpoint:
            arrays, _ = load_checkpoint(checkpoint)
            network.load_state_dict(arrays)
        return GaloppPolicy(network, deterministic=not stochastic,
                            center_on=config.center_local_on)
    return make_baseline(name)


def _cmd_train(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.json")
    env = config.build_env()
    network = GaloppNetwork(config.network_spec(), seed=config.seed)
    if args.checkpoint:
        arrays, _ = load_checkpoint(args.checkpoint)
        network.load_state_dict(arrays)
    result = train(env, network, config.episodes, config.episode_length,
                   out_dir, seed=config.seed, config=config.ppo(),
                   eval_every=config.eval_every,
                   eval_episodes=config.eval_episodes,
                   checkpoint_every=config.checkpoint_every,
                   center_on=config.center_local_on,
                   meta={"config": config.to_dict()})
    print(f"trained {result.episodes} episodes in {result.wall_seconds:.0f}s")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"learning curve: {result.curve_path}")
    return 0


def _cmd_eval(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.json")
    env = config.build_env()
    policy = _build_policy(args.policy, config, args.checkpoint,
                           stochastic=args.stochastic)
    report, _ = run_eval(env, policy, args.episodes, config.episode_length,
                         config.seed, config=config.to_dict())
    report.save(out_dir)
    ci = f" +- {report.ci95:.1f}" if report.ci95 is not None else ""
    print(f"{report.policy}: mean episode reward {report.mean_reward:.1f}{ci} "
          f"over {report.n_episodes} episodes "
          f"(disconnected {100 * report.disconnect_mean:.1f}% of aux steps)")
    return 0


def _cmd_baseline(args) -> int:
    if args.policy == "galopp":
        print("baseline expects one of rs, rsec, gs", file=sys.stderr)
        return 2
    return _cmd_eval(args)


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    values = (json.loads(f"[{args.values}]") if args.values
              else PRECONFIGURED.get(args.parameter))
    if values is None:
        print(f"no preconfigured values for {args.parameter}; pass --values",
              file=sys.stderr)
        return 2
    checkpoints = None
    if args.checkpoint:
        try:
            parsed = json.loads(args.checkpoint)
            checkpoints = parsed if isinstance(parsed, dict) else args.checkpoint
        except json.JSONDecodeError:
            checkpoints = args.checkpoint
    rows = sweep(config, args.parameter, values, args.out, mode=args.mode,
                 policy=args.policy, eval_episodes=args.episodes,
                 checkpoints=checkpoints)
    for row in rows:
        ci = f" +- {row.ci95:.1f}" if row.ci95 is not None else ""
        print(f"{row.parameter}={row.value}: {row.mean_reward:.1f}{ci}")
    print(f"results in {args.out}/sweep.csv")
    return 0


def _cmd_render(args) -> int:
    from .render import render_episode

    config = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = config.build_env()
    policy = _build_policy(args.policy, config, args.checkpoint,
                           stochastic=args.stochastic)
    horizon = args.steps or config.episode_length
    _, logs = run_eval(env, policy, 1, horizon, config.seed,
                       record_trajectories=True, config=config.to_dict())
    frames, gif = render_episode(logs[0], config.max_penalty, out_dir,
                                 every=args.every, fps=args.fps)
    print(f"wrote {len(frames)} frames to {out_dir}")
    if gif:
        print(f"animation: {gif}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="galopp",
        description="persistent-monitoring workbench: train and evaluate "
                    "connectivity-aware monitoring policies")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policy_default="galopp"):
        p.add_argument("--config", help="path to a JSON run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--policy", choices=POLICIES, default=policy_default)
        p.add_argument("--checkpoint", help="policy checkpoint (.npz)")
        p.add_argument("--out", default="runs/out", help="output directory")

    p_train = sub.add_parser("train", help="train the graph-conv PPO policy")
    common(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a policy over seeded episodes")
    common(p_eval)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--stochastic", action="store_true",
                        help="sample actions instead of argmax")
    p_eval.set_defaults(func=_cmd_eval)

    p_base = sub.add_parser("baseline", help="evaluate a scripted baseline")
    common(p_base, policy_default="rs")
    p_base.add_argument("--episodes", type=int, default=100)
    p_base.add_argument("--stochastic", action="store_true")
    p_base.set_defaults(func=_cmd_baseline)

    p_sweep = sub.add_parser("sweep", help="vary one config key over a grid")
    common(p_sweep)
    p_sweep.add_argument("--parameter", required=True,
                         choices=("comm_range", "sensing_range", "n_agents",
                                  "n_anchors", "obstacle_fraction", "map_mode"))
    p_sweep.add_argument("--values",
                         help="comma-separated JSON values, e.g. 10,15,20 "
                              "or \"centralized\",\"decentralized\"")
    p_sweep.add_argument("--mode", choices=("train", "eval"), default="eval")
    p_sweep.add_argument("--episodes", type=int, default=100)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_render = sub.add_parser("render", help="render one episode as frames + GIF")
    common(p_render)
    p_render.add_argument("--steps", type=int, default=None,
                          help="episode length to render (default: config)")
    p_render.add_argument("--every", type=int, default=5,
                          help="render every k-th step")
    p_render.add_argument("--fps", type=int, default=10)
    p_render.add_argument("--stochastic", action="store_true")
    p_render.set_defaults(func=_cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
