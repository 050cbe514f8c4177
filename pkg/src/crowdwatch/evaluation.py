"""Detector scoring against ground truth: ROC, AUC, EER, accuracy and timing."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, TextIO

import numpy as np

from .domain import CrowdWatchError


class DegenerateLabels(CrowdWatchError):
    pass


@dataclass(frozen=True, slots=True)
class LabeledScore:
    frame: int
    agent_id: str
    score: float
    label: bool

    def __post_init__(self) -> None:
        if not np.isfinite(self.score):
            raise ValueError("scores must be finite")


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[0] is +inf, the empty-detection corner
    auc: float


@dataclass(frozen=True)
class Metrics:
    auc: float
    accuracy: float
    eer: float
    roc: RocCurve


def _arrays(scores: Sequence[LabeledScore] | tuple[np.ndarray, np.ndarray]):
    if isinstance(scores, tuple):
        s, y = scores
        return np.asarray(s, dtype=float), np.asarray(y, dtype=bool)
    s = np.fromiter((x.score for x in scores), dtype=float, count=len(scores))
    y = np.fromiter((x.label for x in scores), dtype=bool, count=len(scores))
    return s, y


def roc_curve(scores: Sequence[LabeledScore] | tuple[np.ndarray, np.ndarray]) -> RocCurve:
    """ROC from every distinct score used as a ``score >= t`` threshold.

    Equal scores move together in one step, so ties contribute diagonal
    segments and the trapezoidal area counts them as half-correct.
    """
    s, y = _arrays(scores)
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise DegenerateLabels(f"need both classes, got {pos} positive and {neg} negative")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = (last_of_group + 1) - tp
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    thresholds = np.r_[np.inf, s[last_of_group]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def eer(roc: RocCurve) -> float:
    """Error rate where the false-positive rate meets the miss rate.

    Finds the first segment on which ``fpr + tpr - 1`` changes sign and
    interpolates linearly along it.
    """
    g = roc.fpr + roc.tpr - 1.0
    for k in range(g.size):
        if g[k] == 0.0:
            return float(roc.fpr[k])
        if k + 1 < g.size and g[k] < 0.0 < g[k + 1]:
            w = -g[k] / (g[k + 1] - g[k])
            return float(roc.fpr[k] + w * (roc.fpr[k + 1] - roc.fpr[k]))
    return float(roc.fpr[-1])


def accuracy_at(scores: Sequence[LabeledScore] | tuple[np.ndarray, np.ndarray],
                threshold: float) -> float:
    """Fraction of samples where ``score > threshold`` agrees with the label."""
    s, y = _arrays(scores)
    if s.size == 0:
        raise ValueError("accuracy needs at least one sample")
    return float(np.mean((s > threshold) == y))


def evaluate(scores: Sequence[LabeledScore] | tuple[np.ndarray, np.ndarray],
             threshold: float) -> Metrics:
    roc = roc_curve(scores)
    return Metrics(roc.auc, accuracy_at(scores, threshold), eer(roc), roc)


def match_events(event_frames: Mapping[str, Iterable[int]],
                 truth: Mapping[str, Sequence[tuple[int, int]]],
                 tolerance: int = 12) -> tuple[int, int, int]:
    """Event-level matching: (hits, misses, false alarms).

    A ground-truth interval ``[start, end)`` is hit when any detection of the
    same agent falls within ``tolerance`` frames of it; detections matching
    no interval are false alarms.
    """
    hits = misses = false_alarms = 0
    for agent in set(event_frames) | set(truth):
        frames = np.asarray(sorted(event_frames.get(agent, ())), dtype=float)
        intervals = truth.get(agent, ())
        used = np.zeros(frames.size, dtype=bool)
        for start, end in intervals:
            near = (frames >= start - tolerance) & (frames < end + tolerance)
            if near.any():
                hits += 1
            else:
                misses += 1
            used |= near
        false_alarms += int((~used).sum())
    return hits, misses, false_alarms


def label_intervals(labels: Mapping[tuple[int, str], bool]) -> dict[str, list[tuple[int, int]]]:
    """Maximal runs of consecutive positive frames per agent."""
    frames: dict[str, list[int]] = {}
    for (f, a), v in labels.items():
        if v:
            frames.setdefault(a, []).append(f)
    out: dict[str, list[tuple[int, int]]] = {}
    for a, fs in frames.items():
        fs.sort()
        runs = []
        start = prev = fs[0]
        for f in fs[1:]:
            if f != prev + 1:
                runs.append((start, prev + 1))
                start = f
            prev = f
        runs.append((start, prev + 1))
        out[a] = runs
    return out


@dataclass(frozen=True)
class TimingReport:
    samples: np.ndarray  # seconds per frame

    def __post_init__(self) -> None:
        if self.samples.size == 0:
            raise ValueError("timing report needs at least one sample")

    @property
    def median(self) -> float:
        return float(np.median(self.samples))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.samples, 95))

    @property
    def max(self) -> float:
        return float(self.samples.max())

    def summary(self) -> str:
        return (f"frames={self.samples.size} median_s={self.median:.6f} "
                f"p95_s={self.p95:.6f} max_s={self.max:.6f}")


def measure_blt(frames: Iterable, process: Callable[[int, list], object],
                clock: Callable[[], float] = time.perf_counter) -> TimingReport:
    """Wall time of ``process(frame, observations)`` for each ``(frame, observations)``.

    Only the call itself is timed, so producing the frames (simulation,
    parsing) stays outside the measurement.
    """
    samples = []
    for frame, batch in frames:
        t0 = clock()
        process(frame, batch)
        samples.append(clock() - t0)
    return TimingReport(np.asarray(samples, dtype=float))


def fmt(x: float) -> str:
    return f"{x:.9g}"


def write_roc_csv(roc: RocCurve, out: TextIO) -> None:
    out.write("fpr,tpr,threshold\n")
    for f, t, th in zip(roc.fpr, roc.tpr, roc.thresholds):
        out.write(f"{fmt(f)},{fmt(t)},{'inf' if np.isinf(th) else fmt(th)}\n")


def write_metrics(metrics: Metrics, threshold: float, n_samples: int, out: TextIO) -> None:
    out.write(f"auc = {fmt(metrics.auc)}\n")
    out.write(f"accuracy = {fmt(metrics.accuracy)}\n")
    out.write(f"eer = {fmt(metrics.eer)}\n")
    out.write(f"threshold = {fmt(threshold)}\n")
    out.write(f"samples = {n_samples}\n")


def write_timing_csv(report: TimingReport, out: TextIO) -> None:
    out.write("frame_index,seconds\n")
    for i, s in enumerate(report.samples):
        out.write(f"{i},{fmt(s)}\n")
