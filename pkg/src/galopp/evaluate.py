"""Seeded policy evaluation with confidence intervals and trajectory logs."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import stats as scipy_stats

from .localization import AUXILIARY


@dataclass
class TrajectoryLog:
    """Everything the renderer and the disconnection stats need from one
    episode. Positions and flags are recorded after every step;
    index 0 holds the reset state."""

    roles: List[str]
    comm_range: float
    positions: List[np.ndarray] = field(default_factory=list)   # (n, 2) per entry
    localized: List[np.ndarray] = field(default_factory=list)   # (n,) bool
    fields: List[np.ndarray] = field(default_factory=list)      # (w, h) per entry
    rewards: List[float] = field(default_factory=list)
    obstacle_mask: Optional[np.ndarray] = None

    def record(self, env, with_field: bool = True) -> None:
        self.positions.append(np.array([a.true_pos for a in env.agents]))
        self.localized.append(np.array([a.localized for a in env.agents]))
        if with_field:
            self.fields.append(env.field.values.copy())
        if self.obstacle_mask is None:
            self.obstacle_mask = env.grid.obstacle_mask.copy()

    @property
    def steps(self) -> int:
        return len(self.rewards)


def disconnection_stats(log: TrajectoryLog) -> dict:
    """Fraction of steps each auxiliary spent unlocalized (reset state
    excluded), plus the mean over auxiliaries."""
    aux = [i for i, role in enumerate(log.roles) if role == AUXILIARY]
    flags = np.array(log.localized[1:]) if len(log.localized) > 1 else \
        np.zeros((0, len(log.roles)), dtype=bool)
    per_aux = {i: (float(np.mean(~flags[:, i])) if flags.shape[0] else 0.0)
               for i in aux}
    overall = float(np.mean(list(per_aux.values()))) if per_aux else 0.0
    return {"per_auxiliary": per_aux, "mean": overall}


def confidence_interval(samples, confidence: float = 0.95) -> Optional[float]:
    """Half-width of the t-distribution CI for the mean; None for n < 2."""
    values = np.asarray(samples, dtype=np.float64)
    n = values.size
    if n < 2:
        return None
    sem = values.std(ddof=1) / np.sqrt(n)
    quantile = scipy_stats.t.ppf(0.5 + confidence / 2.0, n - 1)
    return float(quantile * sem)


@dataclass
class EvalReport:
    policy: str
    n_episodes: int
    horizon: int
    episode_rewards: List[float]
    mean_reward: float
    ci95: Optional[float]
    disconnect_mean: float
    disconnect_per_aux: dict
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def ci_bounds(self) -> Tuple[float, float]:
        half = self.ci95 if self.ci95 is not None else 0.0
        return self.mean_reward - half, self.mean_reward + half

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "n_episodes": self.n_episodes,
            "horizon": self.horizon,
            "mean_reward": self.mean_reward,
            "ci95": self.ci95,
            "disconnect_mean": self.disconnect_mean,
            "disconnect_per_aux": {str(k): v for k, v in
                                   self.disconnect_per_aux.items()},
            "seed": self.seed,
            "episode_rewards": self.episode_rewards,
            "config": self.config,
        }

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        with open(out_dir / "episodes.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "reward"])
            for i, reward in enumerate(self.episode_rewards):
                writer.writerow([i, reward])
        return out_dir / "report.json"


def run_eval(env, policy, n_episodes: int, horizon: int, seed: int,
             record_trajectories: bool = False, config: Optional[dict] = None
             ) -> Tuple[EvalReport, List[TrajectoryLog]]:
    """Evaluate a policy over seeded episodes.

    Episode reward is the sum of the shared reward over the horizon (a
    non-positive number). The mean carries a 95% t-distribution CI. Per
    episode one seed drives placement and any policy randomness, so the
    whole evaluation is reproducible from (config, seed).
    """
    if n_episodes < 1 or horizon < 1:
        raise ValueError("need at least one episode and one step")
    children = np.random.SeedSequence(seed).spawn(n_episodes)
    rewards = []
    disconnects = []
    logs: List[TrajectoryLog] = []
    for child in children:
        rng = np.random.default_rng(child)
        env.reset(rng)
        policy.reset(rng)
        log = TrajectoryLog(roles=[a.role for a in env.agents],
                            comm_range=env.comm_range)
        log.record(env, with_field=record_trajectories)
        total = 0.0
        for _ in range(horizon):
            reward = env.step(policy.act(env))
            total += reward
            log.rewards.append(reward)
            log.record(env, with_field=record_trajectories)
        rewards.append(total)
        disconnects.append(disconnection_stats(log))
        if record_trajectories:
            logs.append(log)
    per_aux: dict = {}
    for stats in disconnects:
        for key, value in stats["per_auxiliary"].items():
            per_aux.setdefault(key, []).append(value)
    per_aux_mean = {k: float(np.mean(v)) for k, v in per_aux.items()}
    report = EvalReport(
        policy=getattr(policy, "name", type(policy).__name__),
        n_episodes=n_episodes,
        horizon=horizon,
        episode_rewards=[float(r) for r in rewards],
        mean_reward=float(np.mean(rewards)),
        ci95=confidence_interval(rewards),
        disconnect_mean=float(np.mean([s["mean"] for s in disconnects])),
        disconnect_per_aux=per_aux_mean,
        seed=seed,
        config=config or {},
    )
    return report, logs
