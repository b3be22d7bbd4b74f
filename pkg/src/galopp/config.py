"""Run configuration: a flat JSON key-value file driving every CLI mode.

Defaults follow the reference experiment table: unit decay, clamp at
400, 1000-step episodes, sensing radius 7 (15x15 footprint), process
noise 0.5*I and measurement noise 1e-4*I.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .env import GridSpec, MonitoringEnv, SensorConfig, generate_obstacles, load_map
from .model import NetworkSpec, conv_stack_for
from .training import PPOConfig

BUILTIN_MAPS = ("open_room_30", "two_room", "four_room")


@dataclass
class RunConfig:
    # Grid and field dynamics.
    width: int = 30
    height: int = 30
    decay: float = 1.0
    max_penalty: float = 400.0
    map: Optional[str] = None          # builtin name or path to an ASCII map
    obstacle_fraction: float = 0.0     # random per-episode obstacles when > 0
    occlusion: str = "none"            # "los" is reserved, not implemented

    # Team and sensing.
    n_agents: int = 4
    n_anchors: int = 2
    sensing_range: int = 7
    comm_range: float = 20.0
    episode_length: int = 1000
    map_mode: str = "decentralized"
    require_connected: bool = False

    # Localization noise model.
    motion_noise: float = 0.5
    measurement_noise: float = 1e-4
    reset_covariance: float = 0.0

    # Network switches.
    gcn_norm: str = "none"
    gcn_layers: int = 1
    per_agent_actors: bool = False
    critic_input: str = "pre_gcn"
    center_local_on: str = "belief"

    # PPO.
    gamma: float = 0.99
    clip_epsilon: float = 0.2
    ppo_epochs: int = 4
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    learning_rate: float = 3e-4
    grad_clip: float = 0.5
    normalize_advantages: bool = True

    # Run shape.
    episodes: int = 2000
    eval_every: int = 100
    eval_episodes: int = 3
    checkpoint_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.occlusion != "none":
            raise ValueError(
                f"occlusion={self.occlusion!r} is reserved and not implemented; "
                "only 'none' is supported")
        if self.map_mode not in ("decentralized", "centralized"):
            raise ValueError(f"unknown map_mode {self.map_mode!r}")
        if self.sensing_range < 0:
            raise ValueError("sensing_range must be >= 0")

    # -- serialization --------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        return path

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- builders --------------------------------------------------------
    def build_grid(self, rng: Optional[np.random.Generator] = None) -> GridSpec:
        if self.map is not None:
            return load_map(read_map_text(self.map), decay=self.decay,
                            max_penalty=self.max_penalty)
        if self.obstacle_fraction > 0.0:
            return generate_obstacles(
                self.width, self.height, self.obstacle_fraction,
                rng if rng is not None else self.seed,
                decay=self.decay, max_penalty=self.max_penalty)
        return GridSpec.open(self.width, self.height, decay=self.decay,
                             max_penalty=self.max_penalty)

    def build_env(self) -> MonitoringEnv:
        grid = self.build_grid(np.random.default_rng(self.seed))
        factory = None
        if self.map is None and self.obstacle_fraction > 0.0:
            factory = lambda rng: generate_obstacles(  # noqa: E731
                self.width, self.height, self.obstacle_fraction, rng,
                decay=self.decay, max_penalty=self.max_penalty)
        return MonitoringEnv(
            grid, SensorConfig(self.sensing_range), self.comm_range,
            self.n_agents, self.n_anchors,
            motion_noise=self.motion_noise * np.eye(2),
            reset_covariance=self.reset_covariance * np.eye(2),
            map_mode=self.map_mode, grid_factory=factory,
            require_connected=self.require_connected)

    def network_spec(self) -> NetworkSpec:
        footprint = 2 * self.sensing_range + 1
        return NetworkSpec.default(
            footprint=footprint,
            conv=conv_stack_for(footprint),
            gcn_norm=self.gcn_norm,
            gcn_layers=self.gcn_layers,
            per_agent_actors=self.per_agent_actors,
            n_agents=self.n_agents if self.per_agent_actors else None,
            critic_input=self.critic_input)

    def ppo(self) -> PPOConfig:
        return PPOConfig(
            gamma=self.gamma, clip_epsilon=self.clip_epsilon,
            epochs=self.ppo_epochs, minibatch_size=self.minibatch_size,
            value_coef=self.value_coef, entropy_coef=self.entropy_coef,
            learning_rate=self.learning_rate, grad_clip=self.grad_clip,
            normalize_advantages=self.normalize_advantages)


def read_map_text(name_or_path: str) -> str:
    """Resolve a builtin map name or a filesystem path to ASCII text."""
    if name_or_path in BUILTIN_MAPS:
        return resources.files("galopp").joinpath(
            f"maps/{name_or_path}.txt").read_text()
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(
            f"map {name_or_path!r} is neither a builtin "
            f"({', '.join(BUILTIN_MAPS)}) nor an existing file")
    return path.read_text()
