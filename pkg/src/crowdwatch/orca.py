"""Reciprocal collision avoidance (ORCA) motion model.

All quantities are per frame: speeds in scene-units/frame, the time horizon
in frames. ``AgentParams.from_seconds`` converts wall-clock defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .domain import PedestrianState, Vec2

EPS_GOAL = 1e-9


@dataclass(frozen=True, slots=True)
class AgentParams:
    radius: float = 0.3
    max_speed: float = 1.6 / 25
    pref_speed: float = 1.0 / 25
    time_horizon: float = 2.0 * 25
    neighbor_dist: float = 5.0
    max_neighbors: int = 10
    # constraints use radius + safety_margin so LP fallback violations stay clear of contact
    safety_margin: float = 0.05

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        if self.max_speed <= 0:
            raise ValueError("max_speed must be > 0")
        if not 0 < self.pref_speed <= self.max_speed:
            raise ValueError("pref_speed must lie in (0, max_speed]")
        if self.time_horizon <= 0:
            raise ValueError("time_horizon must be > 0")
        if self.neighbor_dist <= 0:
            raise ValueError("neighbor_dist must be > 0")
        if self.max_neighbors < 1:
            raise ValueError("max_neighbors must be a positive integer")
        if self.safety_margin < 0:
            raise ValueError("safety_margin must be >= 0")

    @property
    def avoidance_radius(self) -> float:
        return self.radius + self.safety_margin

    @classmethod
    def from_seconds(cls, fps: float = 25.0, radius: float = 0.3, pref_speed: float = 1.0,
                     max_speed: float = 1.6, time_horizon: float = 2.0,
                     neighbor_dist: float = 5.0, max_neighbors: int = 10,
                     safety_margin: float = 0.05) -> AgentParams:
        """Build per-frame parameters from speeds in units/s and a horizon in seconds."""
        return cls(radius=radius, max_speed=max_speed / fps, pref_speed=pref_speed / fps,
                   time_horizon=time_horizon * fps, neighbor_dist=neighbor_dist,
                   max_neighbors=int(max_neighbors), safety_margin=safety_margin)


@dataclass(frozen=True, slots=True)
class HalfPlane:
    """``{v : (v - point) . normal >= 0}``."""

    point: Vec2
    normal: Vec2

    def __post_init__(self) -> None:
        if abs(self.normal.norm() - 1.0) > 1e-9:
            raise ValueError("half-plane normal must be a unit vector")

    def contains(self, v: Vec2, tol: float = 0.0) -> bool:
        return (v - self.point).dot(self.normal) >= -tol


@dataclass(frozen=True, slots=True)
class Kinematics:
    """Position, velocity and radius of one agent as seen by its neighbours."""

    position: Vec2
    velocity: Vec2
    radius: float
    agent_id: str = ""


def preferred_velocity(state: PedestrianState, params: AgentParams) -> Vec2:
    vx, vy = _kernels.pref_velocity(float(state.mean[0]), float(state.mean[1]),
                                    float(state.mean[4]), float(state.mean[5]),
                                    params.pref_speed, EPS_GOAL)
    return Vec2(vx, vy)


def _lines_to_halfplanes(lines: np.ndarray) -> list[HalfPlane]:
    out = []
    for px, py, dx, dy in lines:
        n = math.hypot(dx, dy)
        out.append(HalfPlane(Vec2(float(px), float(py)), Vec2(float(-dy / n), float(dx / n))))
    return out


def _halfplanes_to_lines(halfplanes: Sequence[HalfPlane]) -> np.ndarray:
    lines = np.empty((len(halfplanes), 4))
    for k, h in enumerate(halfplanes):
        lines[k] = (h.point.x, h.point.y, h.normal.y, -h.normal.x)
    return lines


def nearest_neighbors(center: Vec2, candidates: Sequence[Kinematics],
                      params: AgentParams) -> list[Kinematics]:
    """Up to ``max_neighbors`` candidates within ``neighbor_dist``, by (distance, agent_id)."""
    scored = []
    for c in candidates:
        d = (c.position - center).norm()
        if d <= params.neighbor_dist:
            scored.append((d, c.agent_id, c))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [c for _, _, c in scored[: params.max_neighbors]]


def orca_halfplanes(agent: Kinematics, neighbors: Sequence[Kinematics], params: AgentParams,
                    dt: float = 1.0) -> list[HalfPlane]:
    """ORCA constraints of ``agent`` against its nearest neighbours.

    Each half-plane shifts the agent's current velocity by half of the
    smallest change that leaves the truncated velocity obstacle.
    """
    chosen = nearest_neighbors(agent.position, neighbors, params)
    if not chosen:
        return []
    m = params.safety_margin
    nb = np.array([[c.position.x, c.position.y, c.velocity.x, c.velocity.y, c.radius + m]
                   for c in chosen])
    lines = np.empty((len(chosen), 4))
    _kernels.orca_lines(agent.position.x, agent.position.y, agent.velocity.x, agent.velocity.y,
                        agent.radius + m, params.time_horizon, dt, nb, len(chosen), lines)
    return _lines_to_halfplanes(lines)


def solve_velocity(halfplanes: Sequence[HalfPlane], v_pref: Vec2, max_speed: float) -> Vec2:
    """Closest velocity to ``v_pref`` satisfying every half-plane within the speed disc.

    Infeasible constraint sets fall back to the velocity that minimises the
    largest violation.
    """
    if max_speed <= 0:
        raise ValueError("max_speed must be > 0")
    lines = _halfplanes_to_lines(halfplanes)
    vx, vy = _kernels.solve_lines(lines, len(halfplanes), v_pref.x, v_pref.y, float(max_speed))
    return Vec2(vx, vy)


def neighbor_table(positions: np.ndarray, neighbor_dist: np.ndarray | float,
                   max_neighbors: int) -> np.ndarray:
    """Indices of each row's nearest neighbours, ``-1`` padded.

    Rows must already be in agent-id order: a stable sort on distance then
    breaks ties by index, i.e. by agent id.
    """
    n = positions.shape[0]
    k = max(min(max_neighbors, n - 1), 0)
    if k == 0:
        return np.full((n, 1), -1, dtype=np.int64)
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    limit = np.broadcast_to(np.asarray(neighbor_dist, dtype=float), (n,))[:, None]
    dist[dist > limit] = np.inf
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    picked = np.take_along_axis(dist, order, axis=1)
    order[~np.isfinite(picked)] = -1
    return np.ascontiguousarray(order, dtype=np.int64)


@dataclass(slots=True)
class CrowdKinematics:
    """Array view of a crowd: rows ordered by agent id."""

    positions: np.ndarray
    velocities: np.ndarray
    goals: np.ndarray

    def copy(self) -> CrowdKinematics:
        return CrowdKinematics(self.positions.copy(), self.velocities.copy(), self.goals.copy())


def param_arrays(params: AgentParams | Sequence[AgentParams], n: int) -> dict[str, np.ndarray]:
    if isinstance(params, AgentParams):
        params = [params] * n
    if len(params) != n:
        raise ValueError("need one AgentParams per agent")
    return {
        "radius": np.array([p.avoidance_radius for p in params], dtype=float),
        "max_speed": np.array([p.max_speed for p in params], dtype=float),
        "pref_speed": np.array([p.pref_speed for p in params], dtype=float),
        "tau": np.array([p.time_horizon for p in params], dtype=float),
        "neighbor_dist": np.array([p.neighbor_dist for p in params], dtype=float),
        "max_neighbors": int(max(p.max_neighbors for p in params)) if n else 1,
    }


def preferred_velocities(positions: np.ndarray, goals: np.ndarray,
                         pref_speed: np.ndarray) -> np.ndarray:
    d = goals - positions
    dist = np.linalg.norm(d, axis=1)
    out = np.zeros_like(d)
    ok = dist >= EPS_GOAL
    out[ok] = d[ok] / dist[ok, None] * pref_speed[ok, None]
    return out


def step_crowd(crowd: CrowdKinematics, params: AgentParams | Sequence[AgentParams],
               dt: float = 1.0, pref_velocities: np.ndarray | None = None,
               max_speeds: np.ndarray | None = None) -> CrowdKinematics:
    """Advance the crowd one step.

    Every new velocity is solved from the frame-start snapshot before any
    position moves. ``pref_velocities``/``max_speeds`` override the
    goal-directed defaults (used by scripted anomalies).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    n = crowd.positions.shape[0]
    arr = param_arrays(params, n)
    if pref_velocities is None:
        pref_velocities = preferred_velocities(crowd.positions, crowd.goals, arr["pref_speed"])
    max_speed = arr["max_speed"] if max_speeds is None else np.asarray(max_speeds, dtype=float)
    nb_idx = neighbor_table(crowd.positions, arr["neighbor_dist"], arr["max_neighbors"])
    if arr["max_neighbors"] < nb_idx.shape[1]:
        nb_idx = nb_idx[:, : arr["max_neighbors"]]
    _limit_per_agent(nb_idx, params, n)
    new_vel = np.empty((n, 2))
    _kernels.step_batch(np.ascontiguousarray(crowd.positions, dtype=float),
                        np.ascontiguousarray(crowd.velocities, dtype=float),
                        np.ascontiguousarray(pref_velocities, dtype=float), nb_idx,
                        arr["radius"], max_speed, arr["tau"], float(dt), new_vel)
    return CrowdKinematics(crowd.positions + new_vel * dt, new_vel, crowd.goals.copy())


def _limit_per_agent(nb_idx: np.ndarray, params: AgentParams | Sequence[AgentParams],
                     n: int) -> None:
    if isinstance(params, AgentParams):
        return
    for i, p in enumerate(params):
        if p.max_neighbors < nb_idx.shape[1]:
            nb_idx[i, p.max_neighbors:] = -1
