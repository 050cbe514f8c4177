"""Online per-pedestrian state estimation.

An extended Kalman filter over ``x = [p, v, g]``: the prediction pushes the
mean through one ORCA step against the other agents' frame-start means and
propagates the covariance with a central-difference Jacobian of that map.
Observations measure position only.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .domain import (CrowdState, CrowdWatchError, Observation, PedestrianState, TrackStatus,
                     Vec2)
from .orca import EPS_GOAL, AgentParams, Kinematics, nearest_neighbors, neighbor_table

MotionMap = Callable[[np.ndarray], np.ndarray]


class InsufficientHistory(CrowdWatchError):
    pass


@dataclass(frozen=True, slots=True)
class NoiseParams:
    """Standard deviations in scene-units; process terms are per frame."""

    process_sigma_pos: float = 0.01
    process_sigma_vel: float = 0.05
    process_sigma_goal: float = 0.1
    meas_sigma: float = 0.05

    def __post_init__(self) -> None:
        for name in ("process_sigma_pos", "process_sigma_vel", "process_sigma_goal",
                     "meas_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    def process_cov(self, dt: float = 1.0) -> np.ndarray:
        s = [self.process_sigma_pos] * 2 + [self.process_sigma_vel] * 2 + \
            [self.process_sigma_goal] * 2
        return np.diag(np.square(s)) * dt

    def meas_cov(self) -> np.ndarray:
        return np.eye(2) * self.meas_sigma ** 2


@dataclass(frozen=True, slots=True)
class FilterConfig:
    goal_window: int = 10
    goal_lookahead: float = 50.0
    coast_limit: int = 10
    fd_step: float = 1e-5
    init_goal_sigma: float = 10.0
    # learn each track's preferred speed from its recent motion
    adaptive_speed: bool = True

    def __post_init__(self) -> None:
        if self.goal_window < 2:
            raise ValueError("goal_window must be >= 2")
        if not self.goal_lookahead > 0:
            raise ValueError("goal_lookahead must be > 0")
        if self.coast_limit < 0:
            raise ValueError("coast_limit must be >= 0")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be > 0")


def infer_goal(positions: Sequence[Vec2], config: FilterConfig,
               frames: Sequence[int] | None = None) -> Vec2:
    """Extrapolate the latest position by the mean per-frame displacement.

    Uses the last ``goal_window`` samples; ``frames`` (same length as
    ``positions``) accounts for gaps, otherwise samples are taken as
    consecutive frames.
    """
    if len(positions) < 2:
        raise InsufficientHistory("goal inference needs at least two positions")
    w = min(config.goal_window, len(positions))
    first, last = positions[-w], positions[-1]
    span = (frames[-1] - frames[-w]) if frames is not None else (w - 1)
    if span <= 0:
        raise InsufficientHistory("positions must span at least one frame")
    return last + (last - first) * (config.goal_lookahead / span)


def symmetrize_psd(cov: np.ndarray) -> np.ndarray:
    """Symmetrise and clip negative eigenvalues; works on (..., n, n) stacks."""
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    try:
        np.linalg.cholesky(cov)
        return cov  # positive definite: nothing to clip
    except np.linalg.LinAlgError:
        pass
    eig = np.linalg.eigvalsh(cov)
    bad = eig.min(axis=-1) < 0.0
    if np.any(bad):
        w, v = np.linalg.eigh(cov[bad])
        fixed = (v * np.clip(w, 0.0, None)[..., None, :]) @ np.swapaxes(v, -1, -2)
        cov = cov.copy()
        cov[bad] = 0.5 * (fixed + np.swapaxes(fixed, -1, -2))
    return cov


def orca_motion(params: AgentParams, others: Sequence[Kinematics], dt: float = 1.0) -> MotionMap:
    """The ORCA step of one state against fixed neighbours, as a map R^6 -> R^6."""

    def step(x: np.ndarray) -> np.ndarray:
        me = Vec2(float(x[0]), float(x[1]))
        chosen = nearest_neighbors(me, others, params)
        m = params.safety_margin
        nb = np.array([[c.position.x, c.position.y, c.velocity.x, c.velocity.y, c.radius + m]
                       for c in chosen]).reshape(-1, 5)
        lines = np.empty((max(len(chosen), 1), 4))
        out = np.empty(6)
        _kernels.motion_map(np.asarray(x, dtype=float), params.avoidance_radius,
                            params.max_speed, params.pref_speed, params.time_horizon, dt,
                            EPS_GOAL, nb, len(chosen), lines, out)
        return out

    return step


def numeric_jacobian(f: MotionMap, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    n = x.shape[0]
    jac = np.empty((n, n))
    for j in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        jac[:, j] = (f(xp) - f(xm)) / (2.0 * step)
    return jac


def predict(belief: PedestrianState, others: Sequence[Kinematics], noise: NoiseParams,
            params: AgentParams, dt: float = 1.0, motion: MotionMap | None = None,
            fd_step: float = 1e-5) -> PedestrianState:
    """Propagate a belief one step.

    ``motion`` defaults to the ORCA step against ``others``; any other map
    gets the same finite-difference linearisation.
    """
    f = orca_motion(params, others, dt) if motion is None else motion
    x = np.asarray(belief.mean, dtype=float)
    jac = numeric_jacobian(f, x, fd_step)
    cov = jac @ belief.covariance @ jac.T + noise.process_cov(dt)
    return PedestrianState(f(x), symmetrize_psd(cov))


def update(belief: PedestrianState, z: Observation | Vec2, noise: NoiseParams) -> PedestrianState:
    """Kalman measurement update on position (Joseph form)."""
    pos = z.position if isinstance(z, Observation) else z
    mean, cov = _update_batch(belief.mean[None], belief.covariance[None],
                              np.array([[pos.x, pos.y]]), noise.meas_cov())
    return PedestrianState(mean[0], cov[0])


def _update_batch(means: np.ndarray, covs: np.ndarray, zs: np.ndarray,
                  r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = covs[:, :2, :2] + r
    a, b, c, d = s[:, 0, 0], s[:, 0, 1], s[:, 1, 0], s[:, 1, 1]
    det = a * d - b * c
    s_inv = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2) / det[:, None, None]
    gain = covs[:, :, :2] @ s_inv
    innov = zs - means[:, :2]
    new_means = means + np.einsum("nij,nj->ni", gain, innov)
    i_kh = np.broadcast_to(np.eye(6), covs.shape).copy()
    i_kh[:, :, :2] -= gain
    new_covs = i_kh @ covs @ np.swapaxes(i_kh, 1, 2) + gain @ r @ np.swapaxes(gain, 1, 2)
    return new_means, symmetrize_psd(new_covs)


class _Track:
    __slots__ = ("history", "frames", "observed", "missed", "since_goal", "pref_speed")

    def __init__(self, window: int):
        self.history: deque[Vec2] = deque(maxlen=window)
        self.frames: deque[int] = deque(maxlen=window)
        self.observed = 0
        self.missed = 0
        self.since_goal = 0
        self.pref_speed: float | None = None


class StateEstimator:
    """Frame-by-frame crowd state estimator.

    Tracks are kept as stacked arrays ordered by agent id so one frame costs
    a single compiled pass over all agents.
    """

    def __init__(self, params: AgentParams | None = None, noise: NoiseParams | None = None,
                 config: FilterConfig | None = None):
        self.params = params or AgentParams()
        self.noise = noise or NoiseParams()
        self.config = config or FilterConfig()
        self.ids: list[str] = []
        self.means = np.zeros((0, 6))
        self.covs = np.zeros((0, 6, 6))
        self.frame: int | None = None
        self._tracks: dict[str, _Track] = {}
        self._statuses: dict[str, TrackStatus] = {}

    def _initial_cov(self, dt: float = 1.0) -> np.ndarray:
        ms = self.noise.meas_sigma
        return np.diag([ms ** 2] * 2 + [(2 * ms / dt) ** 2] * 2 +
                       [self.config.init_goal_sigma ** 2] * 2)

    def _learn_speed(self, track: _Track, goal: Vec2, last: Vec2) -> None:
        if self.config.adaptive_speed:
            track.pref_speed = (goal - last).norm() / self.config.goal_lookahead

    def speed_limits(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-track (pref_speed, max_speed); learned speeds keep the default ratio."""
        p = self.params
        pref = np.array([p.pref_speed if self._tracks[a].pref_speed is None
                         else self._tracks[a].pref_speed for a in self.ids])
        return pref, np.maximum(p.max_speed, pref * (p.max_speed / p.pref_speed))

    def _predict_all(self, dt: float) -> None:
        n = len(self.ids)
        if n == 0:
            return
        p = self.params
        nb_idx = neighbor_table(self.means[:, :2], p.neighbor_dist, p.max_neighbors)
        ones = np.ones(n)
        pref, vmax = self.speed_limits()
        new_means = np.empty_like(self.means)
        jac = np.empty((n, 6, 6))
        _kernels.predict_batch(np.ascontiguousarray(self.means), nb_idx,
                               ones * p.avoidance_radius, vmax,
                               pref, ones * p.time_horizon, float(dt), EPS_GOAL,
                               self.config.fd_step, new_means, jac)
        covs = jac @ self.covs @ np.swapaxes(jac, 1, 2) + self.noise.process_cov(dt)
        self.means = new_means
        self.covs = symmetrize_psd(covs)

    def estimate_frame(self, frame: int, observations: Iterable[Observation]) -> CrowdState:
        """Advance every track to ``frame`` and fuse that frame's observations."""
        self.advance(frame, observations)
        return self.crowd_state()

    def advance(self, frame: int, observations: Iterable[Observation]) -> None:
        """Same as :meth:`estimate_frame` but leaves the result in ``ids``/``means``/``covs``."""
        obs = {o.agent_id: o for o in observations}
        if self.frame is not None and frame <= self.frame:
            raise ValueError(f"frame {frame} does not advance past {self.frame}")
        dt = 1.0 if self.frame is None else float(frame - self.frame)
        self._predict_all(dt)

        index = {a: i for i, a in enumerate(self.ids)}
        upd_rows = [index[a] for a in obs if a in index]
        if upd_rows:
            zs = np.array([[obs[self.ids[i]].position.x, obs[self.ids[i]].position.y]
                           for i in upd_rows])
            m, c = _update_batch(self.means[upd_rows], self.covs[upd_rows], zs,
                                 self.noise.meas_cov())
            self.means[upd_rows] = m
            self.covs[upd_rows] = c

        cfg = self.config
        keep = np.ones(len(self.ids), dtype=bool)
        for i, agent in enumerate(self.ids):
            track = self._tracks[agent]
            track.since_goal += 1
            if agent in obs:
                track.missed = 0
                track.observed += 1
                z = obs[agent].position
                if track.observed == 2:
                    # second fix: restart from the two-point displacement
                    gap = frame - track.frames[-1]
                    prev = track.history[-1]
                    vel = (z - prev) * (1.0 / gap)
                    track.history.append(z)
                    track.frames.append(frame)
                    goal = infer_goal(list(track.history), cfg, list(track.frames))
                    self._learn_speed(track, goal, z)
                    self.means[i] = [z.x, z.y, vel.x, vel.y, goal.x, goal.y]
                    self.covs[i] = self._initial_cov(gap)
                    track.since_goal = 0
                else:
                    track.history.append(Vec2(float(self.means[i, 0]), float(self.means[i, 1])))
                    track.frames.append(frame)
                self._statuses[agent] = TrackStatus.active()
            else:
                track.missed += 1
                if track.missed > cfg.coast_limit:
                    keep[i] = False
                    continue
                self._statuses[agent] = TrackStatus.coasting(track.missed)
            # refresh on schedule, or early once the goal could be overtaken before then
            speed = self.params.pref_speed if track.pref_speed is None else track.pref_speed
            near = (track.since_goal >= 2 and speed > 0 and
                    float(np.hypot(*(self.means[i, 4:] - self.means[i, :2])))
                    < speed * cfg.goal_window)
            if (track.since_goal >= cfg.goal_window or near) and len(track.history) >= 2:
                goal = infer_goal(list(track.history), cfg, list(track.frames))
                self._learn_speed(track, goal, track.history[-1])
                self.means[i, 4:] = (goal.x, goal.y)
                self.covs[i, 4:, :4] = 0.0
                self.covs[i, :4, 4:] = 0.0
                track.since_goal = 0

        if not np.all(keep):
            for i in np.flatnonzero(~keep):
                del self._tracks[self.ids[i]]
                del self._statuses[self.ids[i]]
            self.ids = [a for a, k in zip(self.ids, keep) if k]
            self.means = self.means[keep]
            self.covs = self.covs[keep]

        new = sorted(a for a in obs if a not in self._tracks)
        if new:
            self._add_tracks(frame, [obs[a] for a in new])
        self.frame = frame

    def _add_tracks(self, frame: int, fresh: list[Observation]) -> None:
        rows = []
        for o in fresh:
            track = _Track(self.config.goal_window)
            track.history.append(o.position)
            track.frames.append(frame)
            track.observed = 1
            self._tracks[o.agent_id] = track
            self._statuses[o.agent_id] = TrackStatus.active()
            p = o.position
            rows.append([p.x, p.y, 0.0, 0.0, p.x, p.y])
        ids = self.ids + [o.agent_id for o in fresh]
        means = np.vstack([self.means, np.array(rows)])
        covs = np.concatenate([self.covs, np.broadcast_to(self._initial_cov(),
                                                          (len(fresh), 6, 6))])
        order = sorted(range(len(ids)), key=ids.__getitem__)
        self.ids = [ids[i] for i in order]
        self.means = means[order]
        self.covs = covs[order]

    def statuses(self) -> dict[str, TrackStatus]:
        return dict(self._statuses)

    def observed_count(self, agent_id: str) -> int:
        return self._tracks[agent_id].observed

    def crowd_state(self) -> CrowdState:
        states = {a: PedestrianState(self.means[i].copy(), self.covs[i].copy())
                  for i, a in enumerate(self.ids)}
        return CrowdState(self.frame if self.frame is not None else -1, states,
                          {a: self._statuses[a] for a in self.ids})
