"""Frame-by-frame detection pipeline: estimate, learn behaviour, score, detect."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .anomaly import AnomalyEvent, Detector, DetectorConfig, scores_from_arrays
from .behavior import BehaviorConfig, BehaviorTracker
from .domain import Observation, group_frames, iter_validated
from .estimation import FilterConfig, NoiseParams, StateEstimator
from .orca import AgentParams


@dataclass(frozen=True)
class PipelineConfig:
    params: AgentParams = field(default_factory=AgentParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    filter: FilterConfig = field(default_factory=FilterConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)


@dataclass
class FrameResult:
    frame: int
    agent_ids: list[str]  # agents scored this frame
    scores: np.ndarray
    events: list[AnomalyEvent]
    n_tracks: int
    elapsed: float  # seconds spent in estimation, features and detection


class Pipeline:
    def __init__(self, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig()
        c = self.config
        self.estimator = StateEstimator(c.params, c.noise, c.filter)
        self.behavior = BehaviorTracker(c.behavior)
        self.detector = Detector(c.detector)
        self._known: set[str] = set()

    def process_frame(self, frame: int, observations: Iterable[Observation]) -> FrameResult:
        t0 = time.perf_counter()
        est = self.estimator
        est.advance(frame, observations)
        ids = list(est.ids)
        feats = self.behavior.update(frame, ids, est.means)
        gone = self._known.difference(ids)
        if gone:
            self.detector.forget(sorted(gone))
        self._known = set(ids)
        if feats.normalized_local is None or not feats.mature.any():
            scored_ids: list[str] = []
            scores = np.zeros(0)
        else:
            idx = np.flatnonzero(feats.mature)
            scores = scores_from_arrays(feats.normalized_local[idx], feats.normalized_global[idx])
            scored_ids = [ids[i] for i in idx]
        events = self.detector.step(frame, scored_ids, scores, crowd_size=len(ids))
        elapsed = time.perf_counter() - t0
        return FrameResult(frame, scored_ids, scores, events, len(ids), elapsed)

    def run(self, observations: Iterable[Observation]) -> Iterator[FrameResult]:
        """Validate a stream lazily and process it one frame at a time."""
        for frame, batch in group_frames(iter_validated(observations)):
            yield self.process_frame(frame, batch)
