"""Anomaly scoring with m-of-n hysteresis and local/global scope."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .behavior import FeatureVector
from .domain import CrowdWatchError


class NormalizationMismatch(CrowdWatchError):
    pass


class Scope(enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True, slots=True)
class DetectorConfig:
    threshold: float = 1.0
    hysteresis_m: int = 3
    hysteresis_n: int = 5
    global_fraction: float = 0.5

    def __post_init__(self) -> None:
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if not 1 <= self.hysteresis_m <= self.hysteresis_n:
            raise ValueError("hysteresis needs 1 <= m <= n")
        if not 0 < self.global_fraction <= 1:
            raise ValueError("global_fraction must lie in (0, 1]")


@dataclass(frozen=True, slots=True)
class AnomalyEvent:
    frame: int
    agent_id: str
    score: float
    threshold_used: float
    scope: Scope = Scope.LOCAL

    def __post_init__(self) -> None:
        if not self.score > self.threshold_used:
            raise ValueError("events must score above their threshold")


def anomaly_score(bl: FeatureVector, bg: FeatureVector) -> float:
    """Euclidean distance between two normalized feature vectors."""
    if bl.epoch != bg.epoch:
        raise NormalizationMismatch(f"epochs differ: {bl.epoch} vs {bg.epoch}")
    return float(np.linalg.norm(np.asarray(bl.values) - np.asarray(bg.values)))


def scores_from_arrays(local: np.ndarray, global_: np.ndarray) -> np.ndarray:
    return np.sqrt(((local - global_) ** 2).sum(axis=1))


def classify_scope(events: Sequence[AnomalyEvent], crowd_size: int,
                   config: DetectorConfig) -> list[AnomalyEvent]:
    """Mark a frame's events Global when enough of the crowd is flagged."""
    if crowd_size < 1:
        raise ValueError("crowd size must be >= 1")
    flagged = len({e.agent_id for e in events})
    scope = Scope.GLOBAL if flagged / crowd_size >= config.global_fraction else Scope.LOCAL
    return [replace(e, scope=scope) for e in events]


class Detector:
    """Per-agent m-of-n exceedance memory.

    Agents absent from a frame keep their history; a track that disappears
    for good is dropped with :meth:`forget`.
    """

    def __init__(self, config: DetectorConfig | None = None):
        self.config = config or DetectorConfig()
        self._hits: dict[str, deque[bool]] = {}

    def forget(self, agent_ids: Sequence[str]) -> None:
        for a in agent_ids:
            self._hits.pop(a, None)

    def step(self, frame: int, agent_ids: Sequence[str], scores: Sequence[float],
             crowd_size: int | None = None) -> list[AnomalyEvent]:
        """Consume one frame of scores and return its events in input order."""
        cfg = self.config
        events = []
        for a, s in zip(agent_ids, scores):
            hits = self._hits.get(a)
            if hits is None:
                hits = self._hits[a] = deque(maxlen=cfg.hysteresis_n)
            over = bool(s > cfg.threshold)
            hits.append(over)
            if over and sum(hits) >= cfg.hysteresis_m:
                events.append(AnomalyEvent(frame, a, float(s), cfg.threshold))
        size = crowd_size if crowd_size is not None else len(agent_ids)
        if events and len(events) / max(size, 1) >= cfg.global_fraction:
            events = [AnomalyEvent(e.frame, e.agent_id, e.score, e.threshold_used, Scope.GLOBAL)
                      for e in events]
        return events
