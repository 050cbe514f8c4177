"""Run configuration: a flat ``section.key = value`` document with validated values.

Speeds are given in scene-units per second, the ORCA horizon and the
behaviour windows in seconds; ``run.fps`` converts them to frames. Filter
and noise settings are already per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .anomaly import DetectorConfig
from .behavior import BehaviorConfig
from .domain import CrowdWatchError
from .estimation import FilterConfig, NoiseParams
from .orca import AgentParams
from .pipeline import PipelineConfig


class ConfigError(CrowdWatchError):
    pass


def _clusters(text: str) -> int | str:
    text = str(text).strip()
    return "auto" if text == "auto" else int(text)


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "run.fps": (float, 25.0),
    "run.seed": (int, 0),
    "agent.radius": (float, 0.3),
    "agent.pref_speed": (float, 1.0),
    "agent.max_speed": (float, 1.6),
    "agent.time_horizon": (float, 2.0),
    "agent.neighbor_dist": (float, 5.0),
    "agent.max_neighbors": (int, 10),
    "agent.safety_margin": (float, 0.05),
    "noise.process_sigma_pos": (float, 0.01),
    "noise.process_sigma_vel": (float, 0.05),
    "noise.process_sigma_goal": (float, 0.1),
    "noise.meas_sigma": (float, 0.05),
    "filter.goal_window": (int, 10),
    "filter.goal_lookahead": (float, 50.0),
    "filter.coast_limit": (int, 10),
    "filter.fd_step": (float, 1e-5),
    "filter.init_goal_sigma": (float, 10.0),
    "filter.adaptive_speed": (_bool, True),
    "behavior.local_window": (float, 1.0),
    "behavior.global_window": (float, 5.0),
    "behavior.clusters": (_clusters, "auto"),
    "behavior.max_clusters": (int, 8),
    "behavior.cluster_scale": (float, 5.0),
    "behavior.elbow_min_gain": (float, 0.5),
    "behavior.scope": (str, "cluster"),
    "behavior.warmup_frames": (int, 10),
    "behavior.std_floor": (float, 1e-6),
    "behavior.relative_floor": (float, 0.1),
    "detector.threshold": (float, 1.0),
    "detector.hysteresis_m": (int, 3),
    "detector.hysteresis_n": (int, 5),
    "detector.global_fraction": (float, 0.5),
}


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __post_init__(self) -> None:
        self.validate()

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def fps(self) -> float:
        return float(self.values["run.fps"])

    @property
    def seed(self) -> int:
        return int(self.values["run.seed"])

    def with_overrides(self, overrides: Mapping[str, Any]) -> RunConfig:
        """Copy with ``overrides`` applied; ``None`` values are ignored."""
        values = dict(self.values)
        for key, raw in overrides.items():
            if raw is None:
                continue
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _parse_value(key, raw)
        return RunConfig(values)

    def frames(self, seconds: float) -> int:
        return max(1, int(round(seconds * self.fps)))

    def agent_params(self) -> AgentParams:
        v = self.values
        return AgentParams.from_seconds(
            self.fps, radius=v["agent.radius"], pref_speed=v["agent.pref_speed"],
            max_speed=v["agent.max_speed"], time_horizon=v["agent.time_horizon"],
            neighbor_dist=v["agent.neighbor_dist"], max_neighbors=v["agent.max_neighbors"],
            safety_margin=v["agent.safety_margin"])

    def pipeline_config(self) -> PipelineConfig:
        v = self.values
        sect = lambda name: {k.split(".", 1)[1]: x for k, x in v.items()  # noqa: E731
                             if k.startswith(name + ".")}
        b = sect("behavior")
        b["local_window"] = self.frames(b["local_window"])
        b["global_window"] = self.frames(b["global_window"])
        return PipelineConfig(params=self.agent_params(), noise=NoiseParams(**sect("noise")),
                              filter=FilterConfig(**sect("filter")),
                              behavior=BehaviorConfig(**b),
                              detector=DetectorConfig(**sect("detector")))

    def validate(self) -> None:
        missing = set(SCHEMA) - set(self.values)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        if not self.fps > 0:
            raise ConfigError("run.fps must be > 0")
        try:
            self.pipeline_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.values.items())


def _parse_value(key: str, raw: Any) -> Any:
    parser = SCHEMA[key][0]
    if not isinstance(raw, str):
        return raw
    try:
        return parser(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    overrides: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in overrides:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        overrides[key] = value
    return RunConfig().with_overrides(overrides)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text())
