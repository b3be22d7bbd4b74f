"""Kalman-filter belief tracking and connectivity-gated localization.

Each auxiliary agent carries a 2-D position belief (mean, covariance).
Motion is modeled as identity dynamics driven by the executed grid
displacement, so prediction only inflates the covariance by the process
noise. An auxiliary is localized exactly when it can reach an anchor
through the communication graph; on (re)localization the belief snaps
to the true position and the covariance resets. While unlocalized the
belief evolves by prediction alone. Anchors know their position at all
times (zero covariance).

The relative-observation matrix and the measurement update exist for
the cooperative-observation path and are unit-tested against closed
forms; the simulator's localization reset supersedes them because a
localized agent learns its exact position.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ANCHOR = "anchor"
AUXILIARY = "auxiliary"

_PSD_TOL = -1e-9


class SingularObservationError(ValueError):
    """Relative observation with a vanishing denominator (agents aligned
    on an axis through the origin of the observation model)."""


@dataclass
class KalmanState:
    """Gaussian position belief: mean (2,) and covariance (2, 2)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(2)
        self.cov = np.asarray(self.cov, dtype=np.float64).reshape(2, 2)


@dataclass
class MotionModel:
    """x_t = A x_{t-1} + B u_t + noise. Grid moves are exact, so A = B = I
    and the process noise only grows the covariance."""

    transition: np.ndarray = field(default_factory=lambda: np.eye(2))
    control: np.ndarray = field(default_factory=lambda: np.eye(2))
    process_noise: np.ndarray = field(default_factory=lambda: 0.5 * np.eye(2))


@dataclass
class ObservationModel:
    """z_t = C x_t + noise."""

    matrix: np.ndarray
    noise: np.ndarray = field(default_factory=lambda: 1e-4 * np.eye(2))


@dataclass
class AgentState:
    """One agent: identity, role, true grid cell and belief."""

    id: int
    role: str
    true_pos: tuple[int, int]
    belief: KalmanState
    localized: bool

    def __post_init__(self):
        if self.role not in (ANCHOR, AUXILIARY):
            raise ValueError(f"unknown role {self.role!r}")


def _check_psd(cov: np.ndarray, what: str) -> None:
    if not np.allclose(cov, cov.T, atol=1e-9):
        raise ValueError(f"{what} covariance is not symmetric")
    eigenvalues = np.linalg.eigvalsh(cov)
    if eigenvalues.min() < _PSD_TOL:
        raise ValueError(f"{what} covariance is not PSD (min eig {eigenvalues.min()})")


def kf_predict(state: KalmanState, control: np.ndarray,
               model: MotionModel) -> KalmanState:
    """Prediction step: mean moves by the executed displacement, the
    covariance picks up the process noise."""
    _check_psd(state.cov, "prior")
    a, b = model.transition, model.control
    mean = a @ state.mean + b @ np.asarray(control, dtype=np.float64).reshape(2)
    cov = a @ state.cov @ a.T + model.process_noise
    return KalmanState(mean, cov)


def build_observation_matrix(relative: Sequence[float],
                             observed_true: Sequence[float]) -> np.ndarray:
    """Diagonal observation matrix diag(x'/(x_a-x'), y'/(y_a-y')).

    ``relative`` is the observed agent's position relative to the
    observer, ``observed_true`` its true position. Denominators smaller
    than 1e-9 in magnitude raise SingularObservationError.
    """
    rx, ry = float(relative[0]), float(relative[1])
    ax, ay = float(observed_true[0]), float(observed_true[1])
    dx, dy = ax - rx, ay - ry
    if abs(dx) < 1e-9 or abs(dy) < 1e-9:
        raise SingularObservationError(
            f"observation denominators ({dx}, {dy}) too close to zero")
    return np.diag([rx / dx, ry / dy])


def kf_update(predicted: KalmanState, measurement: np.ndarray,
              model: ObservationModel) -> KalmanState:
    """Measurement update with the standard Kalman gain; the posterior
    covariance is symmetrized. Singular innovation covariance raises."""
    _check_psd(predicted.cov, "predicted")
    c, q = model.matrix, model.noise
    z = np.asarray(measurement, dtype=np.float64).reshape(2)
    innovation_cov = c @ predicted.cov @ c.T + q
    try:
        gain = np.linalg.solve(innovation_cov.T, (predicted.cov @ c.T).T).T
    except np.linalg.LinAlgError as err:
        raise ValueError("singular innovation covariance") from err
    mean = predicted.mean + gain @ (z - c @ predicted.mean)
    cov = (np.eye(2) - gain @ c) @ predicted.cov
    cov = 0.5 * (cov + cov.T)
    return KalmanState(mean, cov)


def resolve_localization(agents: Sequence[AgentState], graph,
                         reset_covariance: Optional[np.ndarray] = None
                         ) -> Sequence[AgentState]:
    """Set each agent's localized flag from anchor reachability.

    Anchors are always localized with a zero-covariance belief. An
    anchor-reachable auxiliary snaps to its true position with the reset
    covariance (default zero). Unreachable auxiliaries keep their belief
    untouched; the caller advances it by prediction only.
    """
    rc = (np.zeros((2, 2)) if reset_covariance is None
          else np.asarray(reset_covariance, dtype=np.float64))
    for index, agent in enumerate(agents):
        if agent.role == ANCHOR:
            agent.localized = True
            agent.belief = KalmanState(np.asarray(agent.true_pos, dtype=np.float64),
                                       np.zeros((2, 2)))
        elif bool(graph.anchor_reachable[index]):
            agent.localized = True
            agent.belief = KalmanState(np.asarray(agent.true_pos, dtype=np.float64),
                                       rc.copy())
        else:
            agent.localized = False
    return agents
