"""Geometric and trajectory domain model shared by every stage of the pipeline."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree


class CrowdWatchError(Exception):
    """Base class for input errors raised by this package."""


class StreamError(CrowdWatchError):
    pass


class DuplicateObservation(StreamError):
    def __init__(self, frame: int, agent_id: str):
        super().__init__(f"duplicate observation for agent {agent_id!r} at frame {frame}")
        self.frame = frame
        self.agent_id = agent_id


class NonMonotoneFrame(StreamError):
    def __init__(self, index: int):
        super().__init__(f"frame index decreases at stream position {index}")
        self.index = index


class NonFiniteCoordinate(StreamError):
    def __init__(self, index: int):
        super().__init__(f"non-finite coordinate at stream position {index}")
        self.index = index


class InsufficientData(CrowdWatchError):
    pass


@dataclass(frozen=True, slots=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Vec2 components must be finite, got ({self.x}, {self.y})")

    def __add__(self, other: Vec2) -> Vec2:
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Vec2) -> Vec2:
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, k: float) -> Vec2:
        return Vec2(self.x * k, self.y * k)

    __rmul__ = __mul__

    def __neg__(self) -> Vec2:
        return Vec2(-self.x, -self.y)

    def dot(self, other: Vec2) -> float:
        return self.x * other.x + self.y * other.y

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @classmethod
    def of(cls, xy: Sequence[float]) -> Vec2:
        return cls(float(xy[0]), float(xy[1]))


ZERO = Vec2(0.0, 0.0)


@dataclass(frozen=True, slots=True)
class Observation:
    frame: int
    agent_id: str
    position: Vec2


@dataclass(slots=True)
class PedestrianState:
    """Filtered belief about one pedestrian.

    ``mean`` holds ``[p_x, p_y, v_x, v_y, g_x, g_y]`` (velocity per frame) and
    ``covariance`` the matching 6x6 matrix.
    """

    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def from_parts(cls, position: Vec2, velocity: Vec2, goal: Vec2,
                   covariance: np.ndarray | None = None) -> PedestrianState:
        mean = np.array([position.x, position.y, velocity.x, velocity.y, goal.x, goal.y])
        cov = np.zeros((6, 6)) if covariance is None else np.asarray(covariance, dtype=float)
        return cls(mean, cov)

    @property
    def position(self) -> Vec2:
        return Vec2(float(self.mean[0]), float(self.mean[1]))

    @property
    def velocity(self) -> Vec2:
        return Vec2(float(self.mean[2]), float(self.mean[3]))

    @property
    def goal(self) -> Vec2:
        return Vec2(float(self.mean[4]), float(self.mean[5]))

    def is_valid(self, tol: float = 1e-9) -> bool:
        c = self.covariance
        if c.shape != (6, 6) or not np.all(np.isfinite(c)) or not np.all(np.isfinite(self.mean)):
            return False
        if np.max(np.abs(c - c.T)) > tol:
            return False
        return bool(np.linalg.eigvalsh(0.5 * (c + c.T)).min() >= -tol)


class StatusKind(enum.Enum):
    ACTIVE = "active"
    COASTING = "coasting"
    LOST = "lost"


@dataclass(frozen=True, slots=True)
class TrackStatus:
    kind: StatusKind
    missed_frames: int = 0

    @classmethod
    def active(cls) -> TrackStatus:
        return cls(StatusKind.ACTIVE)

    @classmethod
    def coasting(cls, missed_frames: int) -> TrackStatus:
        if missed_frames < 1:
            raise ValueError("coasting tracks have missed at least one frame")
        return cls(StatusKind.COASTING, missed_frames)

    @classmethod
    def lost(cls) -> TrackStatus:
        return cls(StatusKind.LOST)


@dataclass(slots=True)
class CrowdState:
    frame: int
    states: dict[str, PedestrianState] = field(default_factory=dict)
    statuses: dict[str, TrackStatus] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.states.keys() != self.statuses.keys():
            raise ValueError("states and statuses must cover the same agents")

    def __len__(self) -> int:
        return len(self.states)


class StreamValidator:
    """Incremental checks for a frame-ordered observation stream."""

    def __init__(self) -> None:
        self.index = 0
        self._frame: int | None = None
        self._seen: set[str] = set()

    def check(self, obs: Observation) -> Observation:
        """Return ``obs`` if it may follow everything checked so far.

        Raises:
            NonFiniteCoordinate, NonMonotoneFrame, DuplicateObservation
        """
        index = self.index
        self.index += 1
        if not (math.isfinite(obs.position.x) and math.isfinite(obs.position.y)):
            raise NonFiniteCoordinate(index)
        if self._frame is None or obs.frame > self._frame:
            self._frame = obs.frame
            self._seen = set()
        elif obs.frame < self._frame:
            raise NonMonotoneFrame(index)
        if obs.agent_id in self._seen:
            raise DuplicateObservation(obs.frame, obs.agent_id)
        self._seen.add(obs.agent_id)
        return obs


def iter_validated(observations: Iterable[Observation]) -> Iterator[Observation]:
    """Lazily validate a stream, yielding each observation once it passes.

    Raises:
        NonFiniteCoordinate, NonMonotoneFrame, DuplicateObservation
    """
    validator = StreamValidator()
    for obs in observations:
        yield validator.check(obs)


def validate_stream(observations: Iterable[Observation]) -> list[Observation]:
    """Validate a finite stream and return it unchanged as a list."""
    return list(iter_validated(observations))


def group_frames(observations: Iterable[Observation]) -> Iterator[tuple[int, list[Observation]]]:
    """Group a frame-ordered stream into ``(frame, observations)`` batches."""
    batch: list[Observation] = []
    frame: int | None = None
    for obs in observations:
        if frame is not None and obs.frame != frame:
            yield frame, batch
            batch = []
        frame = obs.frame
        batch.append(obs)
    if frame is not None:
        yield frame, batch


@dataclass(frozen=True, slots=True)
class SceneStatistics:
    nn_spacing: float
    bbox_min: Vec2
    bbox_max: Vec2
    mean_speed: float


def scene_statistics(observations: Iterable[Observation]) -> SceneStatistics:
    """Scale of a window of observations.

    ``nn_spacing`` averages each agent's nearest-neighbour distance over every
    frame with at least two agents; ``mean_speed`` averages per-frame
    displacement between consecutive observations of the same agent.
    """
    obs = list(observations)
    agents = {o.agent_id for o in obs}
    frames = sorted({o.frame for o in obs})
    if len(agents) < 2 or len(frames) < 2:
        raise InsufficientData("scene statistics need at least 2 agents and 2 frames")

    nn_dists: list[np.ndarray] = []
    for _, batch in group_frames(sorted(obs, key=lambda o: o.frame)):
        if len(batch) < 2:
            continue
        pts = np.array([[o.position.x, o.position.y] for o in batch])
        d, _ = cKDTree(pts).query(pts, k=2)
        nn_dists.append(d[:, 1])
    if not nn_dists:
        raise InsufficientData("no frame contains two agents")

    last: dict[str, Observation] = {}
    speeds: list[float] = []
    for o in sorted(obs, key=lambda o: o.frame):
        prev = last.get(o.agent_id)
        if prev is not None and o.frame > prev.frame:
            speeds.append((o.position - prev.position).norm() / (o.frame - prev.frame))
        last[o.agent_id] = o

    xy = np.array([[o.position.x, o.position.y] for o in obs])
    return SceneStatistics(
        nn_spacing=float(np.mean(np.concatenate(nn_dists))),
        bbox_min=Vec2.of(xy.min(axis=0)),
        bbox_max=Vec2.of(xy.max(axis=0)),
        mean_speed=float(np.mean(speeds)) if speeds else 0.0,
    )


def positions_array(observations: Mapping[str, Observation] | Sequence[Observation]) -> np.ndarray:
    items = observations.values() if isinstance(observations, Mapping) else observations
    return np.array([[o.position.x, o.position.y] for o in items], dtype=float).reshape(-1, 2)
