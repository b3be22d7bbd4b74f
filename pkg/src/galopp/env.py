"""Penalty-decay grid world with heterogeneous monitoring agents.

Geometry conventions
--------------------
Cells are addressed as (x, y) with x the column and y the row counted
from the bottom, so the "up" action is y+1. Arrays carrying per-cell
data are indexed ``[x, y]`` with shape (width, height). ASCII maps list
rows top-first: text row 0 is y = height-1.

Dynamics
--------
Every free cell holds a penalty R <= 0. Per step, a monitored cell
resets to 0 and an unmonitored one decays by its per-cell decrement,
clamped at -max_penalty. A cell counts as monitored when it lies in the
sensing footprint of an anchor or of a localized auxiliary; footprints
are squares of side 2*radius+1 centered on the agent's true position,
clipped to the grid and excluding obstacle cells. Obstacle cells hold 0
forever. The shared team reward is the field sum, read after the step's
decay and monitoring.

All agents move simultaneously (illegal moves degenerate to stay, cells
may be shared), then the communication graph, localization flags, field
and per-agent map copies are refreshed, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .comms import AgentMapSet, ConnectivityGraph, build_graph
from .localization import (
    ANCHOR,
    AUXILIARY,
    AgentState,
    KalmanState,
    MotionModel,
    kf_predict,
    resolve_localization,
)

ACTIONS = ("stay", "up", "down", "left", "right")
ACTION_DELTAS = ((0, 0), (0, 1), (0, -1), (-1, 0), (1, 0))
STAY = 0


@dataclass(frozen=True)
class SensorConfig:
    """Square sensing footprint of side 2*radius+1 cells."""

    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("sensing radius must be >= 0")

    @property
    def footprint(self) -> int:
        return 2 * self.radius + 1


@dataclass
class GridSpec:
    """Static grid description: size, obstacles, decay rates, clamp."""

    width: int
    height: int
    obstacle_mask: np.ndarray
    decay: np.ndarray
    max_penalty: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")
        self.obstacle_mask = np.asarray(self.obstacle_mask, dtype=bool)
        if self.obstacle_mask.shape != (self.width, self.height):
            raise ValueError("obstacle mask shape must be (width, height)")
        self.decay = np.asarray(self.decay, dtype=np.float64)
        if self.decay.shape == ():
            self.decay = np.full((self.width, self.height), float(self.decay))
        if self.decay.shape != (self.width, self.height):
            raise ValueError("decay shape must be (width, height) or scalar")
        if self.max_penalty <= 0:
            raise ValueError("max_penalty must be positive")
        free = ~self.obstacle_mask
        if not np.any(free):
            raise ValueError("grid has no free cells")
        if np.any(self.decay[free] <= 0):
            raise ValueError("decay must be positive on every free cell")

    @classmethod
    def open(cls, width: int, height: int, decay: float = 1.0,
             max_penalty: float = 400.0) -> "GridSpec":
        return cls(width, height, np.zeros((width, height), dtype=bool),
                   np.full((width, height), float(decay)), max_penalty)

    @property
    def free_mask(self) -> np.ndarray:
        return ~self.obstacle_mask

    @property
    def n_free(self) -> int:
        return int(np.count_nonzero(self.free_mask))

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and not self.obstacle_mask[x, y]

    def free_cells(self) -> list[tuple[int, int]]:
        xs, ys = np.nonzero(self.free_mask)
        return list(zip(xs.tolist(), ys.tolist()))


@dataclass
class PenaltyField:
    """Per-cell penalties (<= 0 on free cells, 0 on obstacles) plus a step counter."""

    values: np.ndarray
    time: int = 0

    @classmethod
    def zeros(cls, grid: GridSpec) -> "PenaltyField":
        return cls(np.zeros((grid.width, grid.height), dtype=np.float64), 0)


def load_map(text: str, decay: float = 1.0, max_penalty: float = 400.0) -> GridSpec:
    """Parse an ASCII map: '#' obstacle, '.' free, rows listed top-first.

    All rows must share one width; any other character is an error.
    """
    rows = [line for line in text.splitlines() if line.strip() != ""]
    if not rows:
        raise ValueError("map text has no rows")
    width = len(rows[0])
    height = len(rows)
    mask = np.zeros((width, height), dtype=bool)
    for r, line in enumerate(rows):
        if len(line) != width:
            raise ValueError(f"map row {r} has width {len(line)}, expected {width}")
        y = height - 1 - r
        for x, ch in enumerate(line):
            if ch == "#":
                mask[x, y] = True
            elif ch != ".":
                raise ValueError(f"map row {r} has invalid character {ch!r}")
    return GridSpec(width, height, mask, np.full((width, height), float(decay)),
                    max_penalty)


def dump_map(grid: GridSpec) -> str:
    """Inverse of load_map (top row first)."""
    lines = []
    for r in range(grid.height):
        y = grid.height - 1 - r
        lines.append("".join("#" if grid.obstacle_mask[x, y] else "."
                             for x in range(grid.width)))
    return "\n".join(lines) + "\n"


def _free_space_connected(mask: np.ndarray) -> bool:
    """4-connectivity flood fill over free cells."""
    free = ~mask
    total = int(np.count_nonzero(free))
    if total == 0:
        return False
    xs, ys = np.nonzero(free)
    start = (int(xs[0]), int(ys[0]))
    seen = np.zeros_like(free)
    stack = [start]
    seen[start] = True
    count = 0
    width, height = mask.shape
    while stack:
        x, y = stack.pop()
        count += 1
        for dx, dy in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < width and 0 <= ny < height and free[nx, ny] and not seen[nx, ny]:
                seen[nx, ny] = True
                stack.append((nx, ny))
    return count == total


def generate_obstacles(width: int, height: int, fraction: float, seed,
                       decay: float = 1.0, max_penalty: float = 400.0,
                       max_tries: int = 2000) -> GridSpec:
    """Place random rectangles until ~fraction of cells are blocked.

    The blocked-cell count lands within one cell of round(fraction*area);
    free space is kept 4-connected throughout. ``seed`` may be an int or
    a Generator. Raises if a feasible layout is not found in
    ``max_tries`` proposals.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("obstacle fraction must be in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    target = int(round(fraction * width * height))
    mask = np.zeros((width, height), dtype=bool)
    remaining = target
    tries = 0
    max_side = max(2, min(width, height) // 4)
    while remaining > 0:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(
                f"could not place obstacles for fraction {fraction} "
                f"within {max_tries} proposals")
        w = int(rng.integers(1, max_side + 1))
        h = int(rng.integers(1, max_side + 1))
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(0, height - h + 1))
        block = np.zeros_like(mask)
        block[x0:x0 + w, y0:y0 + h] = True
        new_cells = int(np.count_nonzero(block & ~mask))
        if new_cells == 0 or new_cells > remaining:
            continue
        candidate = mask | block
        if not _free_space_connected(candidate):
            continue
        mask = candidate
        remaining = target - int(np.count_nonzero(mask))
    return GridSpec(width, height, mask,
                    np.full((width, height), float(decay)), max_penalty)


def footprint_mask(pos: Sequence[int], sensor: SensorConfig,
                   grid: GridSpec) -> np.ndarray:
    """Boolean (width, height) mask of cells the sensor covers from ``pos``."""
    x, y = int(pos[0]), int(pos[1])
    if not grid.is_free(x, y):
        raise ValueError(f"sensor position {(x, y)} is not a free cell")
    r = sensor.radius
    mask = np.zeros((grid.width, grid.height), dtype=bool)
    x0, x1 = max(0, x - r), min(grid.width, x + r + 1)
    y0, y1 = max(0, y - r), min(grid.height, y + r + 1)
    mask[x0:x1, y0:y1] = True
    mask &= grid.free_mask
    return mask


def sense_footprint(pos: Sequence[int], sensor: SensorConfig,
                    grid: GridSpec) -> set[tuple[int, int]]:
    """Set of (x, y) cells monitored from ``pos``: the clipped square minus obstacles."""
    mask = footprint_mask(pos, sensor, grid)
    xs, ys = np.nonzero(mask)
    return set(zip(xs.tolist(), ys.tolist()))


def decay_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """One decay step on every free cell, clamped at -max_penalty."""
    decayed = np.maximum(values - grid.decay, -grid.max_penalty)
    return np.where(grid.obstacle_mask, 0.0, decayed)


def step_field(field: PenaltyField, grid: GridSpec,
               monitored: np.ndarray) -> PenaltyField:
    """Advance the field one step: monitored cells reset, the rest decay."""
    if monitored.shape != field.values.shape:
        raise ValueError("monitored mask shape must match the field")
    decayed = decay_values(field.values, grid)
    values = np.where(monitored & grid.free_mask, 0.0, decayed)
    return PenaltyField(values, field.time + 1)


def team_reward(field: PenaltyField) -> float:
    """Shared instantaneous reward: sum of all cell penalties (always <= 0)."""
    return float(field.values.sum())


def apply_action(pos: Sequence[int], action: int, grid: GridSpec) -> tuple[int, int]:
    """Target cell of an action; moves that leave the grid or hit an
    obstacle degenerate to stay."""
    if not 0 <= action < len(ACTIONS):
        raise ValueError(f"action must be in [0, {len(ACTIONS)}), got {action}")
    x, y = int(pos[0]), int(pos[1])
    dx, dy = ACTION_DELTAS[action]
    nx, ny = x + dx, y + dy
    if grid.is_free(nx, ny):
        return nx, ny
    return x, y


@dataclass
class EnvState:
    """Snapshot view of the world used by tests and logging."""

    field: PenaltyField
    agents: list[AgentState]
    step_index: int


class MonitoringEnv:
    """Stateful simulator tying the field, agents, graph and maps together.

    ``grid_factory`` (when given) regenerates the grid on every reset
    from the reset seed, which is how per-episode random obstacle layouts
    are produced; otherwise the fixed ``grid`` is reused.
    """

    def __init__(self, grid: GridSpec, sensor: SensorConfig, comm_range: float,
                 n_agents: int, n_anchors: int, *,
                 motion_noise: Optional[np.ndarray] = None,
                 reset_covariance: Optional[np.ndarray] = None,
                 map_mode: str = "decentralized",
                 grid_factory: Optional[Callable[[np.random.Generator], GridSpec]] = None,
                 fixed_positions: Optional[Sequence[Sequence[int]]] = None,
                 fixed_roles: Optional[Sequence[str]] = None,
                 require_connected: bool = False):
        if comm_range < 0:
            raise ValueError("comm_range must be >= 0")
        if map_mode not in ("decentralized", "centralized"):
            raise ValueError(f"unknown map_mode {map_mode!r}")
        self.grid = grid
        self.sensor = sensor
        self.comm_range = float(comm_range)
        self.n_agents = int(n_agents)
        self.n_anchors = int(n_anchors)
        self.map_mode = map_mode
        self.grid_factory = grid_factory
        self.fixed_positions = fixed_positions
        self.fixed_roles = fixed_roles
        self.require_connected = require_connected
        if motion_noise is None:
            motion_noise = 0.5 * np.eye(2)
        self.motion_model = MotionModel(process_noise=np.asarray(motion_noise, dtype=np.float64))
        self.reset_covariance = (np.zeros((2, 2)) if reset_covariance is None
                                 else np.asarray(reset_covariance, dtype=np.float64))
        self.field: PenaltyField = PenaltyField.zeros(grid)
        self.agents: list[AgentState] = []
        self.graph: Optional[ConnectivityGraph] = None
        self.maps: Optional[AgentMapSet] = None
        self.step_index = 0

    @property
    def state(self) -> EnvState:
        return EnvState(self.field, self.agents, self.step_index)

    def _place_random(self, rng: np.random.Generator) -> tuple[list, list]:
        if not 1 <= self.n_anchors <= self.n_agents:
            raise ValueError(
                f"need 1 <= n_anchors <= n_agents, got {self.n_anchors}/{self.n_agents}")
        cells = self.grid.free_cells()
        if len(cells) < 1 or self.n_agents < 1:
            raise ValueError("need at least one free cell and one agent")
        roles = [ANCHOR] * self.n_anchors + [AUXILIARY] * (self.n_agents - self.n_anchors)
        if not self.require_connected:
            picks = rng.choice(len(cells), size=self.n_agents, replace=True)
            return [cells[int(i)] for i in picks], roles
        # grow the team one agent at a time, each within range of someone
        # already placed, so the start is connected at any comm_range
        coords = np.asarray(cells, dtype=np.float64)
        positions = [cells[int(rng.integers(len(cells)))]]
        reachable = np.zeros(len(cells), dtype=bool)
        for _ in range(1, self.n_agents):
            deltas = coords - np.asarray(positions[-1], dtype=np.float64)
            reachable |= (deltas ** 2).sum(axis=1) <= self.comm_range ** 2
            options = np.flatnonzero(reachable)
            positions.append(cells[int(rng.choice(options))])
        return positions, roles

    def reset(self, seed) -> EnvState:
        """Fresh episode: zero field, (re)placed agents, all localized."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        if self.grid_factory is not None:
            self.grid = self.grid_factory(rng)
        if self.fixed_positions is not None:
            positions = [tuple(int(c) for c in p) for p in self.fixed_positions]
            roles = list(self.fixed_roles if self.fixed_roles is not None
                         else [ANCHOR] * self.n_anchors
                         + [AUXILIARY] * (self.n_agents - self.n_anchors))
            if len(positions) != len(roles):
                raise ValueError("fixed positions and roles must have equal length")
            for p in positions:
                if not self.grid.is_free(*p):
                    raise ValueError(f"fixed position {p} is not a free cell")
        else:
            positions, roles = self._place_random(rng)
        self.agents = []
        for i, (pos, role) in enumerate(zip(positions, roles)):
            cov = (np.zeros((2, 2)) if role == ANCHOR
                   else self.reset_covariance.copy())
            belief = KalmanState(np.asarray(pos, dtype=np.float64), cov)
            self.agents.append(AgentState(id=i, role=role, true_pos=tuple(pos),
                                          belief=belief, localized=True))
        self.field = PenaltyField.zeros(self.grid)
        self.step_index = 0
        self.graph = build_graph([a.true_pos for a in self.agents],
                                 [a.role for a in self.agents], self.comm_range)
        self.maps = AgentMapSet(len(self.agents), self.grid, mode=self.map_mode)
        return self.state

    def step(self, actions: Sequence[int]) -> float:
        """Advance one step with a joint action; returns the shared reward.

        Order: simultaneous moves, belief prediction, graph rebuild,
        localization resolution, field update, map-copy update, reward.
        """
        if self.maps is None:
            raise RuntimeError("call reset() before step()")
        if len(actions) != len(self.agents):
            raise ValueError(f"expected {len(self.agents)} actions, got {len(actions)}")
        displacements = []
        for agent, action in zip(self.agents, actions):
            new_pos = apply_action(agent.true_pos, int(action), self.grid)
            displacements.append((new_pos[0] - agent.true_pos[0],
                                  new_pos[1] - agent.true_pos[1]))
            agent.true_pos = new_pos
        for agent, u in zip(self.agents, displacements):
            if agent.role == AUXILIARY:
                agent.belief = kf_predict(agent.belief,
                                          np.asarray(u, dtype=np.float64),
                                          self.motion_model)
        self.graph = build_graph([a.true_pos for a in self.agents],
                                 [a.role for a in self.agents], self.comm_range)
        resolve_localization(self.agents, self.graph,
                             reset_covariance=self.reset_covariance)
        masks = [footprint_mask(a.true_pos, self.sensor, self.grid)
                 for a in self.agents]
        monitored = np.zeros((self.grid.width, self.grid.height), dtype=bool)
        for agent, mask in zip(self.agents, masks):
            if agent.localized:
                monitored |= mask
        self.field = step_field(self.field, self.grid, monitored)
        self.maps.step(self.grid, masks, [a.localized for a in self.agents],
                       self.graph.components(), self.field.values)
        self.step_index += 1
        return team_reward(self.field)
