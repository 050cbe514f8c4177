"""Synthetic ORCA crowds with scripted anomalies and ground-truth labels.

Presets are kinematic stand-ins for real surveillance footage: co-directional
lanes, bidirectional and crossing flows, circle swaps, a dense corridor with
one pedestrian walking against the flow, a fast "biker", and a sudden
crowd-wide run. Scripts only override an agent's preferred velocity (and
speed cap); every agent, scripted or not, still moves under ORCA.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .domain import CrowdWatchError, Observation, Vec2
from .orca import AgentParams, CrowdKinematics, param_arrays, preferred_velocities, step_crowd


class UnknownPreset(CrowdWatchError):
    pass


class ScriptKind(enum.Enum):
    AGAINST_FLOW = "against_flow"
    U_TURN = "u_turn"
    SPEED_OUTLIER = "speed_outlier"
    SUDDEN_RUN = "sudden_run"
    PUSH_AND_RUN = "push_and_run"


DEFAULT_MULTIPLIER = {
    ScriptKind.AGAINST_FLOW: 1.0,
    ScriptKind.U_TURN: 1.0,
    ScriptKind.SPEED_OUTLIER: 3.0,
    ScriptKind.SUDDEN_RUN: 2.5,
    ScriptKind.PUSH_AND_RUN: 2.5,
}


@dataclass(frozen=True, slots=True)
class AnomalyScript:
    """Scripted behaviour for one agent over frames ``[start, end)``."""

    kind: ScriptKind
    agent: int
    start: int
    end: int
    multiplier: float | None = None

    def __post_init__(self) -> None:
        if self.multiplier is not None and not self.multiplier > 0:
            raise ValueError("script multiplier must be > 0")
        if not 0 <= self.start < self.end:
            raise ValueError("script range must satisfy 0 <= start < end")

    @property
    def speed_factor(self) -> float:
        return DEFAULT_MULTIPLIER[self.kind] if self.multiplier is None else self.multiplier

    def active(self, frame: int) -> bool:
        return self.start <= frame < self.end


@dataclass(frozen=True, slots=True)
class NoiseModel:
    position_sigma: float = 0.0
    dropout_prob: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.position_sigma < 0:
            raise ValueError("position_sigma must be >= 0")
        if not 0 <= self.dropout_prob < 1:
            raise ValueError("dropout_prob must lie in [0, 1)")


@dataclass
class Scenario:
    name: str
    positions: np.ndarray
    goals: np.ndarray
    params: list[AgentParams]
    duration: int
    scripts: list[AnomalyScript] = field(default_factory=list)
    bounds: tuple[float, float, float, float] = (-np.inf, -np.inf, np.inf, np.inf)
    pref_jitter: float = 0.0
    agent_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.goals = np.asarray(self.goals, dtype=float).reshape(-1, 2)
        n = len(self.positions)
        if not self.agent_ids:
            self.agent_ids = [f"{i:03d}" for i in range(n)]
        if len(self.goals) != n or len(self.params) != n or len(self.agent_ids) != n:
            raise ValueError("positions, goals, params and agent_ids must have equal length")
        if self.duration < 1:
            raise ValueError("duration must be >= 1 frame")
        if n > 1:
            diff = self.positions[:, None] - self.positions[None]
            dist = np.sqrt((diff ** 2).sum(-1))
            radii = np.array([p.radius for p in self.params])
            np.fill_diagonal(dist, np.inf)
            if np.any(dist < radii[:, None] + radii[None, :]):
                raise ValueError("agents overlap at the start of the scenario")
        for s in self.scripts:
            if not 0 <= s.agent < n:
                raise ValueError(f"script references unknown agent {s.agent}")
            if s.end > self.duration:
                raise ValueError("script range exceeds scenario duration")

    @property
    def n_agents(self) -> int:
        return len(self.positions)


@dataclass
class SimulationResult:
    agent_ids: list[str]
    positions: np.ndarray  # (frames, agents, 2)
    velocities: np.ndarray  # (frames, agents, 2)
    labels: np.ndarray  # (frames, agents) bool

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    def label_map(self) -> dict[tuple[int, str], bool]:
        return {(t, a): bool(self.labels[t, i]) for t in range(self.n_frames)
                for i, a in enumerate(self.agent_ids)}

    def observations(self) -> list[Observation]:
        return corrupt(self, NoiseModel())


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.hypot(v[0], v[1]))
    return v / n if n > 1e-12 else np.zeros(2)


def simulate(scenario: Scenario, seed: int = 0) -> SimulationResult:
    """Run the scenario; ``seed`` drives the per-agent symmetry-breaking offsets."""
    n = scenario.n_agents
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * math.pi, n)
    offsets = np.c_[np.cos(angles), np.sin(angles)] * scenario.pref_jitter
    arr = param_arrays(scenario.params, n)
    pref_speed = arr["pref_speed"]
    goal_radius = np.array([p.radius for p in scenario.params])

    kin = CrowdKinematics(scenario.positions.copy(), np.zeros((n, 2)), scenario.goals.copy())
    positions = np.empty((scenario.duration, n, 2))
    velocities = np.empty((scenario.duration, n, 2))
    labels = np.zeros((scenario.duration, n), dtype=bool)
    for s in scenario.scripts:
        labels[s.start:s.end, s.agent] = True

    captured: dict[int, np.ndarray] = {}
    for t in range(scenario.duration):
        positions[t] = kin.positions
        velocities[t] = kin.velocities
        if t == scenario.duration - 1:
            break
        to_goal = np.linalg.norm(kin.goals - kin.positions, axis=1)
        pref = preferred_velocities(kin.positions, kin.goals, pref_speed)
        moving = to_goal >= goal_radius
        pref[~moving] = 0.0
        pref[moving] += offsets[moving] * pref_speed[moving, None]
        max_speed = arr["max_speed"].copy()
        for k, s in enumerate(scenario.scripts):
            if not s.active(t):
                continue
            i = s.agent
            if k not in captured:
                captured[k] = _capture_direction(s, kin)
            pref[i], cap = _scripted_velocity(s, t, captured[k], kin, pref_speed[i])
            max_speed[i] = max(max_speed[i], cap)
        kin = step_crowd(kin, scenario.params, 1.0, pref_velocities=pref, max_speeds=max_speed)
    return SimulationResult(list(scenario.agent_ids), positions, velocities, labels)


def _capture_direction(s: AnomalyScript, kin: CrowdKinematics) -> np.ndarray:
    i = s.agent
    heading = _unit(kin.goals[i] - kin.positions[i])
    if s.kind in (ScriptKind.AGAINST_FLOW, ScriptKind.U_TURN):
        return -heading
    if s.kind is ScriptKind.SPEED_OUTLIER:
        return heading
    if s.kind is ScriptKind.SUDDEN_RUN:
        away = _unit(kin.positions[i] - kin.positions.mean(axis=0))
        return away if np.any(away) else heading
    # push and run: remember the victim's index in the spare slot
    d = np.linalg.norm(kin.positions - kin.positions[i], axis=1)
    d[i] = np.inf
    return np.array([float(np.argmin(d)), 0.0])


def _scripted_velocity(s: AnomalyScript, t: int, direction: np.ndarray, kin: CrowdKinematics,
                       pref_speed: float) -> tuple[np.ndarray, float]:
    speed = pref_speed * s.speed_factor
    if s.kind is ScriptKind.PUSH_AND_RUN:
        victim = int(direction[0])
        to_victim = _unit(kin.positions[victim] - kin.positions[s.agent])
        push_end = s.start + max(1, (s.end - s.start) // 3)
        if t < push_end:
            return to_victim * pref_speed * 1.5, pref_speed * 1.5
        return -to_victim * speed, speed
    return direction * speed, speed


PRESETS = ("lane_flow", "bidirectional", "crossing", "circle_swap", "against_flow_63", "biker",
           "sudden_run")


def _grid(rows: int, cols: int, dx: float, dy: float) -> np.ndarray:
    """Grid with column 0 at the front (largest x), rows centred on y = 0."""
    pts = [(-c * dx, (r - (rows - 1) / 2) * dy) for c in range(cols) for r in range(rows)]
    return np.array(pts, dtype=float)


def _jitter(rng: np.random.Generator, pts: np.ndarray, amount: float) -> np.ndarray:
    return pts + rng.uniform(-amount, amount, pts.shape)


def build_scenario(preset: str, seed: int = 0, **overrides: Any) -> Scenario:
    """Deterministic scenario for ``(preset, seed)``.

    Recognised overrides: ``n_agents``, ``duration``, ``fps``, ``params``
    (an ``AgentParams`` for every agent), ``scripts``, ``pref_jitter``.
    """
    if preset not in PRESETS:
        raise UnknownPreset(f"unknown preset {preset!r}; expected one of {', '.join(PRESETS)}")
    unknown = set(overrides) - {"n_agents", "duration", "fps", "params", "scripts",
                                "pref_jitter"}
    if unknown:
        raise ValueError(f"unsupported scenario overrides: {sorted(unknown)}")
    fps = float(overrides.get("fps", 25.0))
    params = overrides.get("params") or AgentParams.from_seconds(fps)
    rng = np.random.default_rng(seed)
    builder = globals()[f"_preset_{preset}"]
    positions, goals, scripts, duration, jitter = builder(rng, params, overrides)
    duration = int(overrides.get("duration", duration))
    scripts = overrides.get("scripts", scripts)
    scripts = [replace(s, end=min(s.end, duration)) for s in scripts]
    n = len(positions)
    span = np.vstack([positions, goals])
    bounds = (float(span[:, 0].min()), float(span[:, 1].min()),
              float(span[:, 0].max()), float(span[:, 1].max()))
    return Scenario(preset, positions, goals, [params] * n, duration, list(scripts), bounds,
                    float(overrides.get("pref_jitter", jitter)))


def _far_goals(positions: np.ndarray, heading: np.ndarray, params: AgentParams,
               duration: int) -> np.ndarray:
    reach = params.max_speed * duration * 3.0 + 10.0
    return positions + np.asarray(heading, dtype=float) * reach


def _preset_lane_flow(rng, params, ov):
    n = int(ov.get("n_agents", 10))
    duration = int(ov.get("duration", 300))
    rows = min(3, n)
    pos = _jitter(rng, _grid(rows, math.ceil(n / rows), 1.5, 1.2)[:n], 0.1)
    return pos, _far_goals(pos, (1.0, 0.0), params, duration), [], duration, 0.0


def _preset_bidirectional(rng, params, ov):
    n = int(ov.get("n_agents", 20))
    duration = int(ov.get("duration", 300))
    half = n // 2
    # two facing lanes that pass each other side by side
    a = _grid(2, math.ceil(half / 2), 1.5, 1.2)[:half] + (-1.0, 1.5)
    b = -_grid(2, math.ceil((n - half) / 2), 1.5, 1.2)[: n - half] + (1.0, -1.5)
    pos = _jitter(rng, np.vstack([a, b]), 0.1)
    heading = np.vstack([np.tile((1.0, 0.0), (half, 1)), np.tile((-1.0, 0.0), (n - half, 1))])
    return pos, _far_goals(pos, heading, params, duration), [], duration, 0.0


def _preset_crossing(rng, params, ov):
    n = int(ov.get("n_agents", 20))
    duration = int(ov.get("duration", 300))
    half = n // 2
    a = _grid(3, math.ceil(half / 3), 1.5, 1.2)[:half] + (-6.0, 0.0)
    b = _grid(3, math.ceil((n - half) / 3), 1.5, 1.2)[: n - half][:, ::-1] + (0.0, -6.0)
    pos = _jitter(rng, np.vstack([a, b]), 0.1)
    heading = np.vstack([np.tile((1.0, 0.0), (half, 1)), np.tile((0.0, 1.0), (n - half, 1))])
    return pos, _far_goals(pos, heading, params, duration), [], duration, 0.0


def _preset_circle_swap(rng, params, ov):
    n = int(ov.get("n_agents", 8))
    duration = int(ov.get("duration", 1000))
    radius = max(8.0, n * 1.25 / (2.0 * math.pi))
    ang = 2.0 * math.pi * np.arange(n) / n
    pos = np.c_[radius * np.cos(ang), radius * np.sin(ang)]
    return pos, -pos, [], duration, 0.1


def _preset_against_flow_63(rng, params, ov):
    n = 63
    duration = int(ov.get("duration", 200))
    rows, cols = 5, 13
    grid = _grid(rows, cols, 1.5, 1.5)
    # the odd one out sits mid-corridor three columns behind the front
    special = 3 * rows + rows // 2
    keep = [i for i in range(rows * cols) if i != special][: n - 1]
    pos = _jitter(rng, np.vstack([grid[keep], grid[special]]), 0.08)
    goals = _far_goals(pos, (1.0, 0.0), params, duration)
    script = AnomalyScript(ScriptKind.AGAINST_FLOW, n - 1, 0, duration)
    return pos, goals, [script], duration, 0.0


def _preset_biker(rng, params, ov):
    n = int(ov.get("n_agents", 30))
    duration = int(ov.get("duration", 200))
    rows = 5
    walkers = _grid(rows, math.ceil((n - 1) / rows), 1.5, 1.2)[: n - 1]
    # the biker starts behind the crowd, one lane outside its edge, so it overtakes
    start = (walkers[:, 0].min() - 1.5, walkers[:, 1].max() + 1.2)
    pos = _jitter(rng, np.vstack([walkers, start]), 0.1)
    goals = _far_goals(pos, (1.0, 0.0), params, duration)
    script = AnomalyScript(ScriptKind.SPEED_OUTLIER, n - 1, 0, duration, 3.0)
    return pos, goals, [script], duration, 0.0


def _preset_sudden_run(rng, params, ov):
    n = int(ov.get("n_agents", 30))
    duration = int(ov.get("duration", 300))
    rows = 5
    pos = _jitter(rng, _grid(rows, math.ceil(n / rows), 1.5, 1.2)[:n], 0.1)
    goals = _far_goals(pos, (1.0, 0.0), params, duration)
    runners = sorted(rng.choice(n, size=max(1, int(round(0.6 * n))), replace=False).tolist())
    start = duration // 2
    scripts = [AnomalyScript(ScriptKind.SUDDEN_RUN, i, start, duration) for i in runners]
    return pos, goals, scripts, duration, 0.0


def corrupt(result: SimulationResult, noise: NoiseModel) -> list[Observation]:
    """Tracker-like observations: Gaussian jitter plus independent dropouts."""
    rng = np.random.default_rng(noise.seed)
    t, n, _ = result.positions.shape
    jitter = rng.normal(0.0, 1.0, (t, n, 2)) * noise.position_sigma
    kept = rng.uniform(0.0, 1.0, (t, n)) >= noise.dropout_prob
    noisy = result.positions + jitter
    out = []
    for f in range(t):
        for i in np.flatnonzero(kept[f]):
            out.append(Observation(f, result.agent_ids[i], Vec2(float(noisy[f, i, 0]),
                                                                float(noisy[f, i, 1]))))
    return out
