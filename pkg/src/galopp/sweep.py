"""Parameter sweeps over the monitoring experiment grid.

A sweep varies exactly one config key across a value list and either
trains a fresh policy per value or evaluates existing checkpoints.
Results land in one CSV row per value (mean episode reward, 95% CI,
disconnection stats) plus an error-bar plot. The preconfigured grids
mirror the reference experiments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .baselines import make_baseline  # noqa: E402
from .config import RunConfig  # noqa: E402
from .evaluate import EvalReport, run_eval  # noqa: E402
from .model import GaloppNetwork, GaloppPolicy  # noqa: E402
from .training import train  # noqa: E402
from .autodiff import load_checkpoint  # noqa: E402

SWEEPABLE = ("comm_range", "sensing_range", "n_agents", "n_anchors",
             "obstacle_fraction", "map_mode")

# Experiment grids from the reference study.
PRECONFIGURED = {
    "comm_range": [10, 15, 20, 25, 30],
    "sensing_range": [5, 6, 7],
    "n_agents": [2, 3, 4, 5],
    "obstacle_fraction": [0.05, 0.10, 0.15, 0.20, 0.25, 0.30],
    "map_mode": ["centralized", "decentralized"],
}


@dataclass
class SweepRow:
    parameter: str
    value: object
    mean_reward: float
    ci95: Optional[float]
    n_episodes: int
    disconnect_mean: float


def _evaluate_value(config: RunConfig, policy_name: str, episodes: int,
                    checkpoint: Optional[str], out_dir: Path) -> EvalReport:
    env = config.build_env()
    if policy_name == "galopp":
        spec = config.network_spec()
        network = GaloppNetwork(spec, seed=config.seed)
        if checkpoint is None:
            raise ValueError("galopp evaluation needs a checkpoint "
                             "(or use mode='train')")
        arrays, _ = load_checkpoint(checkpoint)
        network.load_state_dict(arrays)
        policy = GaloppPolicy(network, center_on=config.center_local_on)
    else:
        policy = make_baseline(policy_name)
    report, _ = run_eval(env, policy, episodes, config.episode_length,
                         config.seed, config=config.to_dict())
    report.save(out_dir)
    return report


def sweep(base_config: RunConfig, parameter: str, values: Sequence,
          out_dir, mode: str = "eval", policy: str = "galopp",
          eval_episodes: int = 100,
          checkpoints: Union[None, str, Dict] = None) -> List[SweepRow]:
    """Run one sweep and write sweep.csv plus sweep.png under out_dir.

    mode="train" trains per value before evaluating; mode="eval" reuses
    ``checkpoints`` (a single path, or a value->path dict). Evaluating a
    single checkpoint across sensing_range values is rejected because
    the footprint changes the network input shape.
    """
    if parameter not in SWEEPABLE:
        raise ValueError(f"cannot sweep {parameter!r}; choose from {SWEEPABLE}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown sweep mode {mode!r}")
    if (mode == "eval" and policy == "galopp" and parameter == "sensing_range"
            and not isinstance(checkpoints, dict)):
        raise ValueError(
            "sensing_range changes the observation shape; sweeping it in "
            "eval mode needs a per-value checkpoint dict or mode='train'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: List[SweepRow] = []
    for value in values:
        config = base_config.replace(**{parameter: value})
        value_dir = out_dir / f"{parameter}_{value}"
        if mode == "train" and policy == "galopp":
            env = config.build_env()
            network = GaloppNetwork(config.network_spec(), seed=config.seed)
            result = train(env, network, config.episodes,
                           config.episode_length, value_dir,
                           seed=config.seed, config=config.ppo(),
                           eval_every=config.eval_every,
                           eval_episodes=config.eval_episodes,
                           checkpoint_every=config.checkpoint_every,
                           center_on=config.center_local_on,
                           meta={"config": config.to_dict()})
            checkpoint = str(result.checkpoint_path)
        elif isinstance(checkpoints, dict):
            checkpoint = checkpoints.get(value) or checkpoints.get(str(value))
        else:
            checkpoint = checkpoints
        report = _evaluate_value(config, policy, eval_episodes, checkpoint,
                                 value_dir)
        rows.append(SweepRow(parameter=parameter, value=value,
                             mean_reward=report.mean_reward, ci95=report.ci95,
                             n_episodes=report.n_episodes,
                             disconnect_mean=report.disconnect_mean))
    _write_csv(rows, out_dir / "sweep.csv")
    _plot(rows, out_dir / "sweep.png")
    return rows


def _write_csv(rows: List[SweepRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "value", "mean_reward", "ci95",
                         "n_episodes", "disconnect_mean"])
        for row in rows:
            writer.writerow([row.parameter, row.value, row.mean_reward,
                             "" if row.ci95 is None else row.ci95,
                             row.n_episodes, row.disconnect_mean])


def _plot(rows: List[SweepRow], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [str(r.value) for r in rows]
    means = [r.mean_reward for r in rows]
    errors = [r.ci95 or 0.0 for r in rows]
    ax.errorbar(range(len(rows)), means, yerr=errors, marker="o",
                capsize=4, linestyle="-")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels)
    ax.set_xlabel(rows[0].parameter if rows else "")
    ax.set_ylabel("mean episode reward")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
