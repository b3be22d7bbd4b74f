"""Observation encoding and the graph-convolutional actor-critic network.

Per agent the policy input is a 2-channel image stack plus a 6-entry
state vector:

* channel 0: footprint-sized slice of the agent's penalty-map copy
  centered on its believed position (out-of-bounds cells read 0),
* channel 1: the full map copy downsampled to the footprint size by
  area-weighted averaging,
* both divided by max_penalty so entries lie in [-1, 0],
* state vector: belief mean (2) followed by the row-major flattened
  belief covariance (4).

The network embeds the stack through three conv layers into 32
features, concatenates the state vector into a 38-entry information
vector z_i, mixes information vectors across the communication graph
with relu(A_g Z W) layers, and maps the result through a softmax actor
(5 actions). The critic shares the trunk and reads z_i (pre-mixing) by
default. The default layer sizes for a 15x15 footprint are asserted at
construction; smaller footprints use dedicated conv presets that keep
the 32-feature embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as nd
from .autodiff import Tensor

N_ACTIONS = 5
STATE_DIM = 6


@dataclass(frozen=True)
class ConvLayer:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int


# Conv stack from the reference architecture; valid for footprints where
# the arithmetic reaches a 1x1 map (15x15 by default).
_REFERENCE_CONV = (
    ConvLayer(2, 16, 8, 4, 1),
    ConvLayer(16, 32, 4, 2, 1),
    ConvLayer(32, 32, 3, 1, 1),
)

# Fallback stacks for small footprints, all ending in 32 features.
_SMALL_FOOTPRINT_CONV = {
    3: (ConvLayer(2, 16, 3, 1, 1), ConvLayer(16, 32, 3, 1, 0),
        ConvLayer(32, 32, 1, 1, 0)),
    5: (ConvLayer(2, 16, 3, 2, 1), ConvLayer(16, 32, 3, 1, 0),
        ConvLayer(32, 32, 1, 1, 0)),
    7: (ConvLayer(2, 16, 3, 2, 1), ConvLayer(16, 32, 3, 2, 1),
        ConvLayer(32, 32, 2, 1, 0)),
    9: (ConvLayer(2, 16, 3, 2, 1), ConvLayer(16, 32, 3, 2, 1),
        ConvLayer(32, 32, 3, 1, 0)),
}


def _conv_trace(layers: Sequence[ConvLayer], size: int) -> list[tuple[int, int]]:
    """(channels, spatial) after each layer; raises on a dead dimension."""
    trace = []
    current = size
    channels = 2
    for layer in layers:
        if layer.in_channels != channels:
            raise nd.ShapeError("conv stack channel mismatch")
        padded = current + 2 * layer.padding
        if padded < layer.kernel:
            raise nd.ShapeError(
                f"conv kernel {layer.kernel} exceeds padded input {padded}")
        current = (padded - layer.kernel) // layer.stride + 1
        channels = layer.out_channels
        trace.append((channels, current))
    return trace


def conv_stack_for(footprint: int) -> Tuple[ConvLayer, ...]:
    """Pick a conv stack whose output is 1x1x32 for the given footprint."""
    try:
        trace = _conv_trace(_REFERENCE_CONV, footprint)
        if trace[-1] == (32, 1):
            return _REFERENCE_CONV
    except nd.ShapeError:
        pass
    if footprint in _SMALL_FOOTPRINT_CONV:
        return _SMALL_FOOTPRINT_CONV[footprint]
    raise nd.ShapeError(f"no conv stack available for footprint {footprint}")


@dataclass
class NetworkSpec:
    """Sizes and switches for the policy network."""

    footprint: int = 15
    conv: Tuple[ConvLayer, ...] = _REFERENCE_CONV
    state_dim: int = STATE_DIM
    gcn_width: int = 38
    gcn_layers: int = 1
    actor_hidden: Tuple[int, ...] = (500, 256)
    critic_hidden: Tuple[int, ...] = (500, 256)
    n_actions: int = N_ACTIONS
    gcn_norm: str = "none"
    critic_input: str = "pre_gcn"
    per_agent_actors: bool = False
    n_agents: Optional[int] = None

    @classmethod
    def default(cls, footprint: int = 15, **overrides) -> "NetworkSpec":
        spec = cls(footprint=footprint, conv=conv_stack_for(footprint))
        spec = replace(spec, **overrides)
        spec.validate()
        return spec

    @property
    def embed_dim(self) -> int:
        channels, size = _conv_trace(self.conv, self.footprint)[-1]
        return channels * size * size

    def validate(self) -> None:
        trace = _conv_trace(self.conv, self.footprint)
        if trace[-1][1] != 1:
            raise nd.ShapeError(
                f"conv stack must end at 1x1 for footprint {self.footprint}, "
                f"got {trace[-1][1]}x{trace[-1][1]}")
        if self.embed_dim + self.state_dim != self.gcn_width:
            raise nd.ShapeError(
                f"information vector is {self.embed_dim}+{self.state_dim} wide "
                f"but the graph layer expects {self.gcn_width}")
        if self.gcn_layers < 1:
            raise ValueError("need at least one graph layer")
        if self.critic_input not in ("pre_gcn", "post_gcn"):
            raise ValueError(f"unknown critic_input {self.critic_input!r}")
        if self.gcn_norm not in ("none", "sym"):
            raise ValueError(f"unknown gcn_norm {self.gcn_norm!r}")
        if self.per_agent_actors and not self.n_agents:
            raise ValueError("per_agent_actors requires n_agents")
        # Reference sizes for the default footprint, checked exactly.
        if self.footprint == 15 and self.conv == _REFERENCE_CONV:
            assert [(layer.in_channels, layer.out_channels, layer.kernel,
                     layer.stride, layer.padding) for layer in self.conv] == [
                (2, 16, 8, 4, 1), (16, 32, 4, 2, 1), (32, 32, 3, 1, 1)]
            assert [c for c, _ in trace] == [16, 32, 32]
            assert [s for _, s in trace] == [3, 1, 1]
            assert self.embed_dim == 32 and self.gcn_width == 38


def downsample_minimap(values: np.ndarray, target: int) -> np.ndarray:
    """Area-weighted mean downsample of (width, height) values to
    (target, target). Requires both grid dims >= target."""
    width, height = values.shape
    if width < target or height < target:
        raise ValueError(
            f"cannot downsample {width}x{height} grid to {target}x{target}")
    return _axis_weights(width, target) @ values @ _axis_weights(height, target).T


@lru_cache(maxsize=None)
def _axis_weights(length: int, target: int) -> np.ndarray:
    """Row i holds each source cell's fractional overlap with block i,
    normalized by the block length, so rows sum to 1. Cached per
    (length, target) and returned read-only since every step reuses it."""
    weights = np.zeros((target, length), dtype=np.float64)
    block = length / target
    for i in range(target):
        lo, hi = i * block, (i + 1) * block
        for x in range(length):
            overlap = min(hi, x + 1) - max(lo, x)
            if overlap > 0:
                weights[i, x] = overlap / block
    weights.flags.writeable = False
    return weights


def local_slice(values: np.ndarray, center: Sequence[int], footprint: int) -> np.ndarray:
    """Footprint-sized window centered on ``center``; cells outside the
    grid read 0."""
    width, height = values.shape
    r = footprint // 2
    cx, cy = int(center[0]), int(center[1])
    out = np.zeros((footprint, footprint), dtype=np.float64)
    x0, x1 = max(0, cx - r), min(width, cx + r + 1)
    y0, y1 = max(0, cy - r), min(height, cy + r + 1)
    if x0 < x1 and y0 < y1:
        out[x0 - (cx - r):x1 - (cx - r), y0 - (cy - r):y1 - (cy - r)] = \
            values[x0:x1, y0:y1]
    return out


def build_information_vector(embedding: np.ndarray,
                             state_vector: np.ndarray) -> np.ndarray:
    """z_i = [embedding | belief mean | flattened covariance]."""
    return np.concatenate([np.asarray(embedding, dtype=np.float64).reshape(-1),
                           np.asarray(state_vector, dtype=np.float64).reshape(-1)])


def state_vector(agent) -> np.ndarray:
    """Six reals: belief mean then the row-major covariance."""
    return np.concatenate([agent.belief.mean, agent.belief.cov.reshape(-1)])


def normalized_state_vector(agent, grid) -> np.ndarray:
    """State vector in grid units: the mean divided by (width, height)
    and the covariance by their outer product, i.e. the belief over the
    position rescaled to the unit square. Keeps every entry O(1) so the
    fan-in based weight init sees the input scale it assumes."""
    scale = np.array([grid.width, grid.height], dtype=np.float64)
    cov = agent.belief.cov / np.outer(scale, scale)
    return np.concatenate([agent.belief.mean / scale, cov.reshape(-1)])


def encode_observation(agent, map_values: np.ndarray, grid, sensor,
                       center_on: str = "belief") -> Tuple[np.ndarray, np.ndarray]:
    """Build (stack, state_vector) for one agent from its map copy.

    The local slice centers on the rounded believed position by default
    (``center_on="true"`` uses the true cell instead); both channels are
    normalized by max_penalty into [-1, 0] and the state vector into
    grid units.
    """
    if center_on == "belief":
        center = np.rint(agent.belief.mean).astype(int)
    elif center_on == "true":
        center = np.asarray(agent.true_pos, dtype=int)
    else:
        raise ValueError(f"unknown centering mode {center_on!r}")
    center = np.clip(center, [0, 0], [grid.width - 1, grid.height - 1])
    g = sensor.footprint
    local = local_slice(map_values, center, g)
    mini = downsample_minimap(map_values, g)
    stack = np.stack([local, mini]) / grid.max_penalty
    return stack, normalized_state_vector(agent, grid)


def build_observations(env, center_on: str = "belief",
                       gcn_norm: str = "none"
                       ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Joint observation: stacks (n,2,g,g), state vectors (n,6) and the
    adjacency the graph layer consumes."""
    stacks = []
    vectors = []
    for agent in env.agents:
        stack, vec = encode_observation(agent, env.maps.map_for(agent.id),
                                        env.grid, env.sensor, center_on)
        stacks.append(stack)
        vectors.append(vec)
    adjacency = env.graph.normalized_adjacency(gcn_norm)
    return np.stack(stacks), np.stack(vectors), adjacency


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...],
               fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class GaloppNetwork:
    """Shared-parameter actor-critic with graph-convolutional mixing.

    Parameters live in a flat name->Tensor dict so the optimizer and the
    checkpoint format can treat the network as a key->array map.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        spec.validate()
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.params: Dict[str, Tensor] = {}
        for i, layer in enumerate(spec.conv, start=1):
            fan_in = layer.in_channels * layer.kernel * layer.kernel
            self._add(f"conv{i}.w", he_uniform(
                rng, (layer.out_channels, layer.in_channels,
                      layer.kernel, layer.kernel), fan_in))
            self._add(f"conv{i}.b", np.zeros(layer.out_channels))
        for i in range(1, spec.gcn_layers + 1):
            self._add(f"gcn{i}.w", he_uniform(
                rng, (spec.gcn_width, spec.gcn_width), spec.gcn_width))
        actor_names = ([f"actor{a}" for a in range(spec.n_agents)]
                       if spec.per_agent_actors else ["actor"])
        for name in actor_names:
            self._add_mlp(rng, name, spec.gcn_width, spec.actor_hidden,
                          spec.n_actions)
        self._add_mlp(rng, "critic", spec.gcn_width, spec.critic_hidden, 1)

    def _add(self, name: str, values: np.ndarray) -> None:
        self.params[name] = Tensor(values, requires_grad=True)

    def _add_mlp(self, rng, name: str, in_dim: int, hidden: Tuple[int, ...],
                 out_dim: int) -> None:
        dims = [in_dim, *hidden, out_dim]
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]), start=1):
            self._add(f"{name}.l{i}.w", he_uniform(rng, (a, b), a))
            self._add(f"{name}.l{i}.b", np.zeros(b))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.values.copy() for k, p in self.params.items()}

    def load_state_dict(self, arrays: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(arrays)
        if missing:
            raise KeyError(f"checkpoint keys do not match network: {sorted(missing)}")
        for k, p in self.params.items():
            if arrays[k].shape != p.values.shape:
                raise ValueError(f"shape mismatch for {k}: "
                                 f"{arrays[k].shape} vs {p.values.shape}")
            p.values = np.array(arrays[k], dtype=np.float64)

    def conv_embed(self, stacks: Tensor) -> Tensor:
        """(m, 2, g, g) -> (m, embed_dim) through the conv stack."""
        if stacks.values.shape[2] != self.spec.footprint:
            raise nd.ShapeError(
                f"expected {self.spec.footprint}x{self.spec.footprint} input, "
                f"got {stacks.values.shape[2]}x{stacks.values.shape[3]}")
        h = stacks
        for i, layer in enumerate(self.spec.conv, start=1):
            h = nd.relu(nd.conv2d(h, self.params[f"conv{i}.w"],
                                  self.params[f"conv{i}.b"],
                                  stride=layer.stride, padding=layer.padding))
        return nd.flatten(h)

    def graphnet_aggregate(self, z: Tensor, adjacency: np.ndarray,
                           batch: int, n_agents: int) -> Tensor:
        """relu(A Z W) per timestep, batched; z is (batch*n, width)."""
        adj = Tensor(adjacency.reshape(batch, n_agents, n_agents))
        h = z
        for i in range(1, self.spec.gcn_layers + 1):
            h3 = nd.reshape(h, (batch, n_agents, self.spec.gcn_width))
            mixed = nd.reshape(nd.bmm(adj, h3),
                               (batch * n_agents, self.spec.gcn_width))
            h = nd.relu(nd.matmul(mixed, self.params[f"gcn{i}.w"]))
        return h

    def _mlp(self, name: str, x: Tensor, depth: int) -> Tensor:
        h = x
        for i in range(1, depth + 1):
            h = nd.linear(h, self.params[f"{name}.l{i}.w"],
                          self.params[f"{name}.l{i}.b"])
            if i < depth:
                h = nd.relu(h)
        return h

    def actor_forward(self, z_mixed: Tensor, n_agents: int,
                      log: bool = False) -> Tensor:
        """Action probabilities (m, n_actions); rows cycle agent ids.

        ``log=True`` returns log probabilities instead, which stay
        finite even where the probabilities underflow to zero.
        """
        activation = nd.log_softmax if log else nd.softmax
        depth = len(self.spec.actor_hidden) + 1
        if not self.spec.per_agent_actors:
            return activation(self._mlp("actor", z_mixed, depth), axis=-1)
        m = z_mixed.values.shape[0]
        order = []
        outputs = []
        for a in range(n_agents):
            idx = np.arange(a, m, n_agents)
            order.append(idx)
            outputs.append(self._mlp(f"actor{a}", nd.take_rows(z_mixed, idx),
                                     depth))
        stacked = nd.concat(outputs, axis=0)
        inverse = np.argsort(np.concatenate(order), kind="stable")
        return activation(nd.take_rows(stacked, inverse), axis=-1)

    def critic_forward(self, z: Tensor) -> Tensor:
        return self._mlp("critic", z, len(self.spec.critic_hidden) + 1)

    def forward_batch(self, stacks: np.ndarray, vectors: np.ndarray,
                      adjacency: np.ndarray,
                      log_probs: bool = False) -> Tuple[Tensor, Tensor]:
        """Forward over (batch, n, ...) inputs.

        Returns probabilities (batch*n, n_actions), or their logs when
        ``log_probs`` is set, and values (batch*n, 1), rows ordered
        timestep-major.
        """
        batch, n_agents = stacks.shape[0], stacks.shape[1]
        flat_stacks = Tensor(stacks.reshape(batch * n_agents, *stacks.shape[2:]))
        flat_vectors = Tensor(vectors.reshape(batch * n_agents, -1))
        embed = self.conv_embed(flat_stacks)
        z = nd.concat([embed, flat_vectors], axis=1)
        z_mixed = self.graphnet_aggregate(z, adjacency, batch, n_agents)
        out = self.actor_forward(z_mixed, n_agents, log=log_probs)
        critic_in = z if self.spec.critic_input == "pre_gcn" else z_mixed
        values = self.critic_forward(critic_in)
        return out, values

    def forward(self, stacks: np.ndarray, vectors: np.ndarray,
                adjacency: np.ndarray) -> Tuple[Tensor, Tensor]:
        """Single-timestep forward over (n, ...) inputs."""
        return self.forward_batch(stacks[None], vectors[None], adjacency[None])


class GaloppPolicy:
    """Acting interface over a trained network (argmax by default)."""

    name = "galopp"

    def __init__(self, network: GaloppNetwork, deterministic: bool = True,
                 center_on: str = "belief"):
        self.network = network
        self.deterministic = deterministic
        self.center_on = center_on
        self._rng: Optional[np.random.Generator] = None

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, env) -> list[int]:
        stacks, vectors, adjacency = build_observations(
            env, self.center_on, self.network.spec.gcn_norm)
        with nd.no_grad():
            probs, _ = self.network.forward(stacks, vectors, adjacency)
        if self.deterministic:
            return [int(i) for i in np.argmax(probs.values, axis=1)]
        if self._rng is None:
            raise RuntimeError("stochastic policy needs reset(rng) first")
        return [nd.categorical_sample(row, self._rng)[0] for row in probs.values]
