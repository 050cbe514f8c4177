"""Local and global trajectory behaviour features.

The local feature of an agent summarises its own recent filtered motion; the
global feature summarises the other members of its cluster over a longer
window. Both are compared in a z-scored 7-slot layout::

    (mean_vx, mean_vy, speed, heading_x, heading_y, goal_dir_x, goal_dir_y)
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import ZERO, CrowdWatchError, Vec2

EPS_SPEED = 1e-3
EPS_GOAL_DIR = 1e-9
N_SLOTS = 7
SLOT_NAMES = ("mean_vx", "mean_vy", "speed", "heading_x", "heading_y", "goal_dir_x",
              "goal_dir_y")


class EmptyWindow(CrowdWatchError):
    pass


class NotWarmedUp(CrowdWatchError):
    pass


@dataclass(frozen=True, slots=True)
class BehaviorFeature:
    mean_velocity: Vec2
    speed: float
    heading: Vec2
    goal_dir: Vec2
    cluster_flow: Vec2 = ZERO
    heading_degenerate: bool = False
    goal_degenerate: bool = False

    @classmethod
    def build(cls, mean_velocity: Vec2, goal_offset: Vec2, cluster_flow: Vec2 = ZERO,
              eps_speed: float = EPS_SPEED) -> BehaviorFeature:
        """Derive speed, heading and goal direction from raw vectors."""
        speed = mean_velocity.norm()
        if speed > eps_speed:
            heading, h_deg = mean_velocity * (1.0 / speed), False
        else:
            heading, h_deg = ZERO, True
        g = goal_offset.norm()
        if g > EPS_GOAL_DIR:
            goal_dir, g_deg = goal_offset * (1.0 / g), False
        else:
            goal_dir, g_deg = ZERO, True
        return cls(mean_velocity, speed, heading, goal_dir, cluster_flow, h_deg, g_deg)

    def slots(self) -> np.ndarray:
        return np.array([self.mean_velocity.x, self.mean_velocity.y, self.speed,
                         self.heading.x, self.heading.y, self.goal_dir.x, self.goal_dir.y])


@dataclass(frozen=True, slots=True)
class FeatureVector:
    values: np.ndarray
    epoch: int


@dataclass(frozen=True, slots=True)
class Cluster:
    id: int
    members: tuple[str, ...]
    centroid: np.ndarray
    mean_flow: Vec2


def local_feature(velocities: Sequence[Vec2], goal_offset: Vec2 = ZERO,
                  cluster_flow: Vec2 = ZERO) -> BehaviorFeature:
    """Feature of one agent from the filtered velocities in its local window.

    ``goal_offset`` is ``g - p`` of the latest state.
    """
    if len(velocities) == 0:
        raise EmptyWindow("local feature needs at least one velocity sample")
    arr = np.array([[v.x, v.y] for v in velocities])
    return BehaviorFeature.build(Vec2.of(arr.mean(axis=0)), goal_offset, cluster_flow)


# -- array forms used by the streaming tracker ------------------------------

def slots_from_raw(mean_vel: np.ndarray, goal_offset: np.ndarray,
                   eps_speed: float = EPS_SPEED, normalize_goal: bool = True) -> np.ndarray:
    """Row-wise 7-slot features from (n, 2) mean velocities and goal vectors."""
    n = mean_vel.shape[0]
    out = np.zeros((n, N_SLOTS))
    out[:, 0:2] = mean_vel
    speed = np.hypot(mean_vel[:, 0], mean_vel[:, 1])
    out[:, 2] = speed
    ok = speed > eps_speed
    out[ok, 3:5] = mean_vel[ok] / speed[ok, None]
    if normalize_goal:
        g = np.hypot(goal_offset[:, 0], goal_offset[:, 1])
        okg = g > EPS_GOAL_DIR
        out[okg, 5:7] = goal_offset[okg] / g[okg, None]
    else:
        out[:, 5:7] = goal_offset
    return out


def _seed_centers(points: np.ndarray, k: int) -> np.ndarray:
    # farthest-point seeding from the centroid: deterministic and label-order free
    d = ((points - points.mean(axis=0)) ** 2).sum(axis=1)
    chosen = [int(np.argmax(d))]
    best = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(best))
        chosen.append(nxt)
        best = np.minimum(best, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(points: np.ndarray, k: int, max_iter: int = 50) -> tuple[np.ndarray, float]:
    """Lloyd iterations from farthest-point seeds; returns (labels, inertia)."""
    n = points.shape[0]
    if k <= 1 or n <= 1:
        return np.zeros(n, dtype=int), float(((points - points.mean(axis=0)) ** 2).sum())
    k = min(k, n)
    centers = _seed_centers(points, k)
    labels = np.full(n, -1)
    for _ in range(max_iter):
        d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = d.argmin(axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
    d = ((points - centers[labels]) ** 2).sum(axis=1)
    return labels, float(d.sum())


def choose_clusters(points: np.ndarray, k: int | str = "auto", max_k: int = 8,
                    min_gain: float = 0.5) -> np.ndarray:
    """Cluster labels; ``auto`` takes the smallest k after which the per-agent
    inertia drop falls below ``min_gain``."""
    n = points.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int)
    if k != "auto":
        return _relabel(kmeans(points, int(k))[0])
    k_max = min(max_k, n)
    labels, inertia = kmeans(points, 1)
    for kk in range(1, k_max):
        nxt_labels, nxt_inertia = kmeans(points, kk + 1)
        if (inertia - nxt_inertia) / n < min_gain:
            break
        labels, inertia = nxt_labels, nxt_inertia
    return _relabel(labels)


def _relabel(labels: np.ndarray) -> np.ndarray:
    # ids in order of first appearance
    mapping: dict[int, int] = {}
    for lab in labels:
        mapping.setdefault(int(lab), len(mapping))
    return np.array([mapping[int(lab)] for lab in labels], dtype=int)


def cluster_points(positions: np.ndarray, headings: np.ndarray, scale: float) -> np.ndarray:
    return np.hstack([positions / scale, headings])


def assign_clusters(features: Sequence[BehaviorFeature], positions: Sequence[Vec2],
                    agent_ids: Sequence[str] | None = None, k: int | str = "auto",
                    scale: float = 5.0, max_k: int = 8, min_gain: float = 0.5) -> list[Cluster]:
    """Group agents by position (scaled by ``1/scale``) and heading."""
    n = len(features)
    if n == 0:
        raise ValueError("clustering needs at least one agent")
    ids = list(agent_ids) if agent_ids is not None else [str(i) for i in range(n)]
    pos = np.array([[p.x, p.y] for p in positions])
    head = np.array([[f.heading.x, f.heading.y] for f in features])
    pts = cluster_points(pos, head, scale)
    labels = choose_clusters(pts, k, max_k, min_gain)
    clusters = []
    for c in range(int(labels.max()) + 1):
        idx = np.flatnonzero(labels == c)
        flow = np.mean([[features[i].mean_velocity.x, features[i].mean_velocity.y]
                        for i in idx], axis=0)
        clusters.append(Cluster(c, tuple(ids[i] for i in idx), pts[idx].mean(axis=0),
                                Vec2.of(flow)))
    return clusters


def cluster_context(agent_id: str, clusters: Sequence[Cluster],
                    features: Mapping[str, BehaviorFeature]) -> tuple[Vec2, Vec2]:
    """Leave-one-out mean (velocity, goal direction) of an agent's cluster for one frame."""
    for c in clusters:
        if agent_id in c.members:
            others = [m for m in c.members if m != agent_id] or [agent_id]
            mv = np.mean([features[m].slots()[0:2] for m in others], axis=0)
            gd = np.mean([features[m].slots()[5:7] for m in others], axis=0)
            return Vec2.of(mv), Vec2.of(gd)
    raise KeyError(f"agent {agent_id!r} is not assigned to a cluster")


def global_feature(agent_id: str, frames: Sequence[tuple[Sequence[Cluster],
                                                          Mapping[str, BehaviorFeature]]]
                   ) -> BehaviorFeature:
    """Cluster context of an agent averaged over the frames of the global window.

    Velocity and goal direction are averaged component-wise; speed and
    heading are re-derived from the averaged velocity.
    """
    if not frames:
        raise EmptyWindow("global feature needs at least one frame")
    mvs, gds, flows = [], [], []
    for clusters, feats in frames:
        mv, gd = cluster_context(agent_id, clusters, feats)
        mvs.append(mv.as_array())
        gds.append(gd.as_array())
        flows.extend(c.mean_flow.as_array() for c in clusters if agent_id in c.members)
    return BehaviorFeature.build(Vec2.of(np.mean(mvs, axis=0)), Vec2.of(np.mean(gds, axis=0)),
                                 Vec2.of(flows[-1]))


class Normalizer:
    """Running per-slot mean and std over the last ``window`` frames of local features."""

    def __init__(self, window: int, warmup_frames: int = 10, std_floor: float = 1e-6,
                 relative_floor: float = 0.0):
        if window < 1 or warmup_frames < 1:
            raise ValueError("window and warmup_frames must be >= 1")
        if relative_floor < 0:
            raise ValueError("relative_floor must be >= 0")
        self.relative_floor = relative_floor
        self.window = window
        self.warmup_frames = warmup_frames
        self.std_floor = std_floor
        self._frames: deque[tuple[np.ndarray, np.ndarray, int]] = deque(maxlen=window)
        self._seen = 0
        self.epoch = -1
        self.mean = np.zeros(N_SLOTS)
        self.std = np.full(N_SLOTS, std_floor)

    def push(self, rows: np.ndarray, epoch: int) -> None:
        rows = np.asarray(rows, dtype=float).reshape(-1, N_SLOTS)
        self._frames.append((rows.sum(axis=0), (rows ** 2).sum(axis=0), rows.shape[0]))
        if rows.shape[0]:
            self._seen += 1
        total = sum(c for _, _, c in self._frames)
        self.epoch = epoch
        if total == 0:
            return
        s = sum(f[0] for f in self._frames)
        ss = sum(f[1] for f in self._frames)
        self.mean = s / total
        var = np.maximum(ss / total - self.mean ** 2, 0.0)
        self.std = np.maximum(np.sqrt(var), self._floor())

    def _floor(self) -> np.ndarray:
        # unit-free extra floor: a fraction of the mean speed for velocity slots and
        # a fraction of a unit vector for direction slots
        floor = np.full(N_SLOTS, self.relative_floor)
        floor[0:3] *= abs(self.mean[2])
        return np.maximum(floor, self.std_floor)

    @property
    def warmed(self) -> bool:
        return self._seen >= self.warmup_frames

    def transform(self, rows: np.ndarray) -> np.ndarray:
        if not self.warmed:
            raise NotWarmedUp(f"normalizer has {self._seen} of {self.warmup_frames} frames")
        return (np.asarray(rows, dtype=float) - self.mean) / self.std

    def normalize(self, feature: BehaviorFeature) -> FeatureVector:
        return FeatureVector(self.transform(feature.slots()), self.epoch)


@dataclass(frozen=True, slots=True)
class BehaviorConfig:
    local_window: int = 25
    global_window: int = 125
    clusters: int | str = "auto"
    max_clusters: int = 8
    cluster_scale: float = 5.0
    elbow_min_gain: float = 0.5
    scope: str = "cluster"
    warmup_frames: int = 10
    std_floor: float = 1e-6
    relative_floor: float = 0.1
    min_age: int | None = None

    def __post_init__(self) -> None:
        if self.local_window < 1 or self.global_window < 1:
            raise ValueError("windows must be >= 1 frame")
        if self.clusters != "auto" and (not isinstance(self.clusters, int) or self.clusters < 1):
            raise ValueError("clusters must be 'auto' or a positive integer")
        if self.scope not in ("cluster", "crowd"):
            raise ValueError("scope must be 'cluster' or 'crowd'")
        if not self.cluster_scale > 0:
            raise ValueError("cluster_scale must be > 0")
        if not self.std_floor > 0:
            raise ValueError("std_floor must be > 0")
        if self.relative_floor < 0:
            raise ValueError("relative_floor must be >= 0")

    @property
    def scoring_age(self) -> int:
        return self.local_window if self.min_age is None else self.min_age


class _RingBank:
    """Fixed-length sample windows for a changing set of agents, stored as one array."""

    def __init__(self, size: int, width: int, capacity: int = 64):
        self.size = size
        self.buf = np.zeros((capacity, size, width))
        self.count = np.zeros(capacity, dtype=np.int64)
        self.age = np.zeros(capacity, dtype=np.int64)
        self.pos = np.zeros(capacity, dtype=np.int64)
        self.slot: dict[str, int] = {}
        self._free: list[int] = list(range(capacity - 1, -1, -1))

    def _grow(self) -> None:
        cap = self.buf.shape[0]
        self.buf = np.concatenate([self.buf, np.zeros_like(self.buf)])
        for name in ("count", "age", "pos"):
            setattr(self, name, np.concatenate([getattr(self, name), np.zeros(cap, np.int64)]))
        self._free.extend(range(2 * cap - 1, cap - 1, -1))

    def slots(self, ids: Sequence[str]) -> np.ndarray:
        out = np.empty(len(ids), dtype=np.int64)
        for i, a in enumerate(ids):
            k = self.slot.get(a)
            if k is None:
                if not self._free:
                    self._grow()
                k = self.slot[a] = self._free.pop()
                self.buf[k] = 0.0
                self.count[k] = self.age[k] = self.pos[k] = 0
            out[i] = k
        return out

    def release(self, agent_id: str) -> None:
        self._free.append(self.slot.pop(agent_id))

    def push(self, slots: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Append one row per slot and return the window means."""
        if slots.size == 0:
            return np.zeros((0, self.buf.shape[2]))
        p = self.pos[slots]
        self.buf[slots, p] = rows
        self.pos[slots] = (p + 1) % self.size
        self.count[slots] = np.minimum(self.count[slots] + 1, self.size)
        # unused entries are zero, so the plain sum is the sum of the filled part
        return self.buf[slots].sum(axis=1) / self.count[slots, None]

    def touch(self, slots: np.ndarray) -> np.ndarray:
        """Count one more frame of presence; returns the ages before this frame."""
        before = self.age[slots].copy()
        self.age[slots] += 1
        return before

    def means(self, slots: np.ndarray) -> np.ndarray:
        out = np.zeros((slots.size, self.buf.shape[2]))
        filled = self.count[slots] > 0
        k = slots[filled]
        out[filled] = self.buf[k].sum(axis=1) / self.count[k, None]
        return out


@dataclass
class FrameFeatures:
    frame: int
    ids: list[str]
    local: np.ndarray  # (n, 7) raw slots
    global_: np.ndarray  # (n, 7) raw slots
    labels: np.ndarray  # cluster label per agent
    flows: np.ndarray  # (n_clusters, 2)
    mature: np.ndarray  # bool, agent has a full local window
    normalized_local: np.ndarray | None = None
    normalized_global: np.ndarray | None = None
    epoch: int = -1
    extras: dict = field(default_factory=dict)

    def clusters(self) -> list[Cluster]:
        out = []
        for c in range(self.flows.shape[0]):
            idx = np.flatnonzero(self.labels == c)
            out.append(Cluster(c, tuple(self.ids[i] for i in idx), self.local[idx].mean(axis=0),
                               Vec2.of(self.flows[c])))
        return out


class BehaviorTracker:
    """Streaming feature computation over a frame sequence of crowd states."""

    def __init__(self, config: BehaviorConfig | None = None):
        self.config = config or BehaviorConfig()
        self._vel = _RingBank(self.config.local_window, 2)
        self._glob = _RingBank(self.config.global_window, 4)
        self.normalizer = Normalizer(self.config.global_window, self.config.warmup_frames,
                                     self.config.std_floor, self.config.relative_floor)

    def update(self, frame: int, ids: Sequence[str], means: np.ndarray) -> FrameFeatures:
        cfg = self.config
        ids = list(ids)
        n = len(ids)
        for gone in set(self._vel.slot).difference(ids):
            self._vel.release(gone)
            self._glob.release(gone)
        vslots = self._vel.slots(ids)
        gslots = self._glob.slots(ids)
        # a track's first state carries a placeholder velocity, not an estimate
        first = self._vel.touch(vslots) == 0
        if n:
            self._vel.push(vslots[~first], means[~first, 2:4])
        mean_vel = self._vel.means(vslots)
        mature = self._vel.count[vslots] >= min(cfg.scoring_age, cfg.local_window)
        if cfg.scoring_age > cfg.local_window:
            mature &= self._vel.age[vslots] >= cfg.scoring_age
        local = slots_from_raw(mean_vel, means[:, 4:6] - means[:, 0:2])

        if n == 0:
            labels = np.zeros(0, dtype=int)
        elif cfg.scope == "crowd":
            labels = np.zeros(n, dtype=int)
        else:
            pts = cluster_points(means[:, 0:2], local[:, 3:5], cfg.cluster_scale)
            labels = choose_clusters(pts, cfg.clusters, cfg.max_clusters, cfg.elbow_min_gain)
        n_clusters = int(labels.max()) + 1 if n else 0

        context = np.hstack([local[:, 0:2], local[:, 5:7]])
        counts = np.bincount(labels, minlength=n_clusters).astype(float)
        flows = np.zeros((n_clusters, 2))
        np.add.at(flows, labels, local[:, 0:2])
        flows /= np.maximum(counts, 1.0)[:, None]
        # global context: leave-one-out mean over the cluster's mature members;
        # an agent with no mature peer keeps its own values
        w = mature.astype(float)
        sums = np.zeros((n_clusters, 4))
        np.add.at(sums, labels, context * w[:, None])
        m = np.bincount(labels, weights=w, minlength=n_clusters)[labels] - w
        loo = np.where((m >= 1)[:, None],
                       (sums[labels] - context * w[:, None]) / np.maximum(m, 1.0)[:, None],
                       context)
        if n:
            self._glob.push(gslots[mature], loo[mature])
        glob_raw = np.where(mature[:, None], self._glob.means(gslots), loo)
        global_ = slots_from_raw(glob_raw[:, 0:2], glob_raw[:, 2:4])

        self.normalizer.push(local[mature], frame)
        out = FrameFeatures(frame, ids, local, global_, labels, flows, mature)
        if self.normalizer.warmed:
            out.normalized_local = self.normalizer.transform(local)
            out.normalized_global = self.normalizer.transform(global_)
            out.epoch = self.normalizer.epoch
        return out
