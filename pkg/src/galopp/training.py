"""PPO training loop for the graph-convolutional monitoring policy.

Rollouts run for a full fixed-horizon episode; returns are plain
discounted Monte-Carlo sums of the shared reward (no bootstrapping),
advantages subtract the critic value and are batch-normalized by
default. The clipped surrogate, a value MSE and an entropy bonus make
up the loss; minibatches shuffle timesteps (each contributing all
agents so the graph layer sees complete neighborhoods) and every
minibatch takes one Adam step after global grad-norm clipping.

Rewards are scaled by 1/(width*height*max_penalty) for optimization
only; logged learning curves stay in raw units.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from . import autodiff as nd
from .autodiff import Adam, Tensor, categorical_sample, clip_grad_norm_, save_checkpoint
from .model import GaloppNetwork, GaloppPolicy, NetworkSpec, build_observations


@dataclass
class PPOConfig:
    gamma: float = 0.99
    clip_epsilon: float = 0.2
    epochs: int = 4
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    learning_rate: float = 3e-4
    grad_clip: float = 0.5
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.clip_epsilon <= 0.0:
            raise ValueError("clip_epsilon must be positive")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be >= 1")


@dataclass
class RolloutBuffer:
    """One episode of joint experience, timestep-major."""

    stacks: np.ndarray       # (T, n, 2, g, g)
    vectors: np.ndarray      # (T, n, 6)
    adjacency: np.ndarray    # (T, n, n)
    actions: np.ndarray      # (T, n) int
    log_probs: np.ndarray    # (T, n)
    values: np.ndarray       # (T, n)
    rewards: np.ndarray      # (T,) scaled for training
    raw_rewards: np.ndarray  # (T,) environment units

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_agents(self) -> int:
        return self.actions.shape[1]


def collect_rollout(env, network: GaloppNetwork, horizon: int,
                    rng: np.random.Generator, reward_scale: float,
                    deterministic: bool = False,
                    center_on: str = "belief") -> RolloutBuffer:
    """Run one episode (env must be freshly reset) and record everything
    the update needs. Sampled actions by default; ``deterministic=True``
    takes the argmax for reproducible evaluation trajectories."""
    n = len(env.agents)
    g = network.spec.footprint
    stacks = np.empty((horizon, n, 2, g, g))
    vectors = np.empty((horizon, n, network.spec.state_dim))
    adjacency = np.empty((horizon, n, n))
    actions = np.empty((horizon, n), dtype=np.int64)
    log_probs = np.empty((horizon, n))
    values = np.empty((horizon, n))
    rewards = np.empty(horizon)
    for t in range(horizon):
        obs_stacks, obs_vectors, obs_adj = build_observations(
            env, center_on, network.spec.gcn_norm)
        with nd.no_grad():
            probs, vals = network.forward(obs_stacks, obs_vectors, obs_adj)
        joint = []
        for i in range(n):
            if deterministic:
                a = int(np.argmax(probs.values[i]))
                lp = float(np.log(probs.values[i][a]))
            else:
                a, lp = categorical_sample(probs.values[i], rng)
            joint.append(a)
            log_probs[t, i] = lp
        stacks[t] = obs_stacks
        vectors[t] = obs_vectors
        adjacency[t] = obs_adj
        actions[t] = joint
        values[t] = vals.values.reshape(n)
        rewards[t] = env.step(joint)
    return RolloutBuffer(stacks=stacks, vectors=vectors, adjacency=adjacency,
                         actions=actions, log_probs=log_probs, values=values,
                         rewards=rewards * reward_scale,
                         raw_rewards=rewards.copy())


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """G[t] = rewards[t] + gamma * G[t+1], with rewards[t] the reward
    that followed the action at step t."""
    returns = np.empty_like(rewards, dtype=np.float64)
    acc = 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns


def advantages(returns: np.ndarray, values: np.ndarray,
               normalize: bool = True) -> np.ndarray:
    """A[t, i] = G[t] - V[t, i], optionally normalized over the batch."""
    adv = returns[:, None] - values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


def clipped_objective(new_log_probs: Tensor, old_log_probs: np.ndarray,
                      advantage: np.ndarray, clip_epsilon: float) -> Tensor:
    """Negated mean of min(r*A, clip(r, 1-eps, 1+eps)*A), ready to minimize."""
    ratio = nd.exp(nd.sub(new_log_probs, Tensor(old_log_probs)))
    adv = Tensor(advantage)
    surrogate = nd.minimum(nd.mul(ratio, adv),
                           nd.mul(nd.clip(ratio, 1.0 - clip_epsilon,
                                          1.0 + clip_epsilon), adv))
    return nd.neg(nd.mean(surrogate))


def ppo_update(network: GaloppNetwork, optimizer: Adam, buffer: RolloutBuffer,
               config: PPOConfig, rng: np.random.Generator) -> Dict[str, float]:
    """Run the clipped-surrogate epochs over one episode buffer.

    Minibatches are whole timesteps; their count is chosen so each batch
    holds about ``minibatch_size`` agent samples.
    """
    horizon, n = buffer.horizon, buffer.n_agents
    returns = discounted_returns(buffer.rewards, config.gamma)
    adv = advantages(returns, buffer.values, config.normalize_advantages)
    steps_per_batch = max(1, config.minibatch_size // n)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "updates": 0}
    for _ in range(config.epochs):
        order = rng.permutation(horizon)
        for start in range(0, horizon, steps_per_batch):
            batch = order[start:start + steps_per_batch]
            log_probs, values = network.forward_batch(
                buffer.stacks[batch], buffer.vectors[batch],
                buffer.adjacency[batch], log_probs=True)
            flat_actions = buffer.actions[batch].reshape(-1)
            new_lp = nd.select_columns(log_probs, flat_actions)
            policy_loss = clipped_objective(
                new_lp, buffer.log_probs[batch].reshape(-1),
                adv[batch].reshape(-1), config.clip_epsilon)
            target = Tensor(np.repeat(returns[batch], n).reshape(-1, 1))
            err = nd.sub(values, target)
            value_loss = nd.mean(nd.mul(err, err))
            # p * log p with p recovered from the logs: exp keeps the
            # product finite (0 * -huge) where a saturated softmax
            # would have produced log(0)
            probs = nd.exp(log_probs)
            entropy = nd.neg(nd.mean(nd.sum(nd.mul(probs, log_probs),
                                            axis=1)))
            loss = nd.add(nd.add(policy_loss,
                                 nd.mul(value_loss, config.value_coef)),
                          nd.neg(nd.mul(entropy, config.entropy_coef)))
            network.zero_grad()
            loss.backward()
            clip_grad_norm_(network.params, config.grad_clip)
            optimizer.step()
            stats["policy_loss"] += policy_loss.item()
            stats["value_loss"] += value_loss.item()
            stats["entropy"] += entropy.item()
            stats["updates"] += 1
    for key in ("policy_loss", "value_loss", "entropy"):
        stats[key] /= max(1, stats["updates"])
    return stats


@dataclass
class TrainResult:
    checkpoint_path: Path
    curve_path: Path
    episodes: int
    final_eval_reward: Optional[float]
    wall_seconds: float
    curve: list = field(default_factory=list)


def default_reward_scale(grid) -> float:
    return 1.0 / (grid.width * grid.height * float(np.max(grid.max_penalty)))


def train(env, network: GaloppNetwork, episodes: int, horizon: int,
          out_dir, seed: int, config: Optional[PPOConfig] = None,
          eval_every: int = 100, eval_episodes: int = 3,
          checkpoint_every: int = 500, reward_scale: Optional[float] = None,
          center_on: str = "belief", meta: Optional[dict] = None,
          log: bool = True) -> TrainResult:
    """Full training run: seeded rollouts, PPO updates, periodic argmax
    evaluation, checkpoints and a learning-curve CSV.

    Seeding is hierarchical (one SeedSequence child per concern), so a
    repeated invocation with the same seed reproduces the curve and the
    checkpoint bit-for-bit.
    """
    config = config or PPOConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scale = default_reward_scale(env.grid) if reward_scale is None else reward_scale
    root = np.random.SeedSequence(seed)
    action_rng = np.random.default_rng(root.spawn(1)[0])
    shuffle_rng = np.random.default_rng(root.spawn(1)[0])
    episode_seeds = root.spawn(episodes)
    eval_seeds = root.spawn(1)[0].spawn(eval_episodes)
    optimizer = Adam(network.params, lr=config.learning_rate)
    curve: list[dict] = []
    start = time.perf_counter()
    final_eval = None
    for episode in range(1, episodes + 1):
        env.reset(np.random.default_rng(episode_seeds[episode - 1]))
        buffer = collect_rollout(env, network, horizon, action_rng, scale,
                                 center_on=center_on)
        stats = ppo_update(network, optimizer, buffer, config, shuffle_rng)
        row = {
            "episode": episode,
            "train_reward": float(buffer.raw_rewards.sum()),
            "eval_reward": "",
            "policy_loss": stats["policy_loss"],
            "value_loss": stats["value_loss"],
            "entropy": stats["entropy"],
        }
        if eval_every and (episode % eval_every == 0 or episode == episodes):
            final_eval = evaluate_policy(env, network, eval_seeds, horizon,
                                         center_on)
            row["eval_reward"] = final_eval
            if log:
                elapsed = time.perf_counter() - start
                print(f"episode {episode}/{episodes} "
                      f"train={row['train_reward']:.0f} eval={final_eval:.0f} "
                      f"entropy={stats['entropy']:.3f} [{elapsed:.0f}s]",
                      flush=True)
        curve.append(row)
        if checkpoint_every and episode % checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_ep{episode}.npz",
                            network.state_dict(), meta)
    checkpoint_path = save_checkpoint(out_dir / "checkpoint.npz",
                                      network.state_dict(), meta)
    curve_path = out_dir / "learning_curve.csv"
    with open(curve_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(curve[0].keys()))
        writer.writeheader()
        writer.writerows(curve)
    return TrainResult(checkpoint_path=checkpoint_path, curve_path=curve_path,
                       episodes=episodes, final_eval_reward=final_eval,
                       wall_seconds=time.perf_counter() - start, curve=curve)


def evaluate_policy(env, network: GaloppNetwork, episode_seeds, horizon: int,
                    center_on: str = "belief") -> float:
    """Mean episode reward under the argmax policy over a fixed list of
    per-episode seeds (reused across calls so curve points are
    comparable)."""
    policy = GaloppPolicy(network, deterministic=True, center_on=center_on)
    totals = []
    for child in episode_seeds:
        rng = np.random.default_rng(child)
        env.reset(rng)
        policy.reset(rng)
        total = 0.0
        for _ in range(horizon):
            total += env.step(policy.act(env))
        totals.append(total)
    return float(np.mean(totals))
