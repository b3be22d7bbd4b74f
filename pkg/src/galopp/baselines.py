"""Scripted reference policies: RS, RSEC and GS.

All three act through the same environment step path as the learned
policy. RS samples uniformly over the 5 actions. RSEC also samples
uniformly but rejects any action that would leave some auxiliary
without an anchor connection, checking agents sequentially in id order
against a hypothetical post-move graph and falling back to stay when
every action fails. GS moves each agent to the most negative penalty
among the cells reachable in one step according to its own map copy,
breaking ties uniformly at random.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .comms import build_graph
from .env import ACTIONS, STAY, apply_action
from .localization import AUXILIARY


class RandomPolicy:
    """RS: independent uniform action per agent."""

    name = "rs"

    def __init__(self):
        self._rng: Optional[np.random.Generator] = None

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, env) -> list[int]:
        return [int(self._rng.integers(len(ACTIONS))) for _ in env.agents]


class RandomEnsuredCommPolicy:
    """RSEC: uniform sampling constrained to keep every auxiliary localized.

    Agents commit moves one at a time in id order; each agent draws
    actions without replacement until one keeps all auxiliaries
    anchor-reachable in the hypothetical graph (earlier agents at their
    committed cells, later agents at their current cells). If all 5
    candidates fail the agent stays, which reproduces a configuration
    the previous agent already validated, so localization established at
    the start of an episode is preserved for its whole length.
    """

    name = "rsec"

    def __init__(self):
        self._rng: Optional[np.random.Generator] = None

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, env) -> list[int]:
        roles = [a.role for a in env.agents]
        aux = [i for i, role in enumerate(roles) if role == AUXILIARY]
        positions = [a.true_pos for a in env.agents]
        chosen = []
        for i in range(len(env.agents)):
            action_taken = STAY
            for action in self._rng.permutation(len(ACTIONS)):
                candidate = list(positions)
                candidate[i] = apply_action(positions[i], int(action), env.grid)
                graph = build_graph(candidate, roles, env.comm_range)
                if all(graph.anchor_reachable[j] for j in aux):
                    action_taken = int(action)
                    positions = candidate
                    break
            chosen.append(action_taken)
        return chosen


class GreedyPolicy:
    """GS: per agent, chase the most negative penalty one step away.

    Candidates are the current cell plus the legal moves; values are
    read from the agent's own map copy, so stale information steers a
    disconnected agent. Ties are broken uniformly at random.
    """

    name = "gs"

    def __init__(self):
        self._rng: Optional[np.random.Generator] = None

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, env) -> list[int]:
        actions = []
        for agent in env.agents:
            copy = env.maps.map_for(agent.id)
            candidates = []
            for action in range(len(ACTIONS)):
                target = apply_action(agent.true_pos, action, env.grid)
                if action != STAY and target == agent.true_pos:
                    continue  # blocked move, excluded from the candidate set
                candidates.append((action, copy[target[0], target[1]]))
            best = min(value for _, value in candidates)
            tied = [action for action, value in candidates if value == best]
            actions.append(int(tied[self._rng.integers(len(tied))]) if len(tied) > 1
                           else tied[0])
        return actions


BASELINES = {
    "rs": RandomPolicy,
    "rsec": RandomEnsuredCommPolicy,
    "gs": GreedyPolicy,
}


def make_baseline(name: str):
    try:
        return BASELINES[name]()
    except KeyError:
        raise ValueError(f"unknown baseline {name!r}; "
                         f"choose from {sorted(BASELINES)}") from None
