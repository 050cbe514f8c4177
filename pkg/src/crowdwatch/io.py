"""Trajectory, label and score file formats.

Trajectories are CSV with a ``frame,agent_id,x,y[,label]`` header or JSON
lines with the same keys. A blank line marks the end of a frame so that a
live producer can have that frame processed before sending the next one.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, TextIO

from .domain import CrowdWatchError, Observation, Vec2, iter_validated

CSV_HEADER = ("frame", "agent_id", "x", "y")
FORMATS = ("csv", "jsonl")


class ParseError(CrowdWatchError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class KeyMismatch(CrowdWatchError):
    def __init__(self, missing: list[tuple[int, str]]):
        shown = ", ".join(f"({f}, {a})" for f, a in missing[:10])
        super().__init__(f"{len(missing)} scored keys have no label, first: {shown}")
        self.missing = missing


@dataclass(frozen=True, slots=True)
class TrajectoryRecord:
    frame: int
    agent_id: str
    x: float
    y: float
    label: bool | None = None
    line: int = 0

    def observation(self) -> Observation:
        return Observation(self.frame, self.agent_id, Vec2(self.x, self.y))


class FrameBreak:
    """Marker yielded for a blank input line."""

    __slots__ = ("line",)

    def __init__(self, line: int):
        self.line = line


def fmt(x: float) -> str:
    return f"{x:.9g}"


def _label(text: str, line: int) -> bool:
    t = text.strip().lower()
    if t in ("1", "true"):
        return True
    if t in ("0", "false"):
        return False
    raise ParseError(line, f"bad label {text!r}")


def _number(text, line: int, name: str, kind=float):
    try:
        if kind is int and isinstance(text, str):
            return int(text.strip())
        if kind is int:
            if isinstance(text, bool) or not float(text).is_integer():
                raise ValueError
            return int(text)
        if isinstance(text, bool):
            raise ValueError
        return float(text)
    except (TypeError, ValueError):
        raise ParseError(line, f"bad {name} {text!r}") from None


def iter_records(lines: Iterable[str], fmt_: str = "csv") -> Iterator[TrajectoryRecord | FrameBreak]:
    """Parse lines without stream validation; blank lines become :class:`FrameBreak`."""
    if fmt_ not in FORMATS:
        raise ValueError(f"unknown format {fmt_!r}")
    it = iter(lines)
    has_label = False
    lineno = 0
    if fmt_ == "csv":
        for raw in it:
            lineno += 1
            if raw.strip():
                header = tuple(h.strip() for h in raw.strip().split(","))
                break
        else:
            return
        if header not in (CSV_HEADER, CSV_HEADER + ("label",)):
            raise ParseError(lineno, f"expected header {','.join(CSV_HEADER)}[,label]")
        has_label = len(header) == 5
    for raw in it:
        lineno += 1
        text = raw.strip()
        if not text:
            yield FrameBreak(lineno)
            continue
        if fmt_ == "csv":
            fields = next(csv.reader([text]))
            if len(fields) != (5 if has_label else 4):
                raise ParseError(lineno, f"expected {5 if has_label else 4} fields")
            frame, agent, x, y = fields[:4]
            label = _label(fields[4], lineno) if has_label else None
        else:
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ParseError(lineno, "expected a JSON object")
            try:
                frame, agent, x, y = (obj[k] for k in CSV_HEADER)
            except KeyError as exc:
                raise ParseError(lineno, f"missing key {exc.args[0]!r}") from None
            label = obj.get("label")
            if label is not None and not isinstance(label, bool):
                label = _label(str(label), lineno)
        agent = str(agent).strip()
        if not agent:
            raise ParseError(lineno, "empty agent_id")
        xf, yf = _number(x, lineno, "x"), _number(y, lineno, "y")
        if not (math.isfinite(xf) and math.isfinite(yf)):
            raise ParseError(lineno, "non-finite coordinate")
        yield TrajectoryRecord(_number(frame, lineno, "frame", int), agent, xf, yf, label, lineno)


def parse_trajectories(lines: Iterable[str], fmt_: str = "csv") -> list[TrajectoryRecord]:
    """Parse and validate a whole trajectory file."""
    records = [r for r in iter_records(lines, fmt_) if isinstance(r, TrajectoryRecord)]
    for _ in iter_validated(r.observation() for r in records):
        pass
    return records


def write_trajectories(records: Iterable[TrajectoryRecord], out: TextIO, fmt_: str = "csv",
                       with_labels: bool = False) -> None:
    if fmt_ == "csv":
        out.write(",".join(CSV_HEADER + (("label",) if with_labels else ())) + "\n")
    for r in records:
        if fmt_ == "csv":
            row = f"{r.frame},{r.agent_id},{fmt(r.x)},{fmt(r.y)}"
            if with_labels:
                row += f",{int(bool(r.label))}"
            out.write(row + "\n")
        else:
            obj = {"frame": r.frame, "agent_id": r.agent_id, "x": float(fmt(r.x)),
                   "y": float(fmt(r.y))}
            if with_labels:
                obj["label"] = bool(r.label)
            out.write(json.dumps(obj) + "\n")


def write_labels(labels: Mapping[tuple[int, str], bool], out: TextIO) -> None:
    out.write("frame,agent_id,label\n")
    for (f, a), v in sorted(labels.items()):
        out.write(f"{f},{a},{int(v)}\n")


def read_labels(lines: Iterable[str]) -> dict[tuple[int, str], bool]:
    out: dict[tuple[int, str], bool] = {}
    it = iter(lines)
    header = next(it, "").strip()
    if header != "frame,agent_id,label":
        raise ParseError(1, "expected header frame,agent_id,label")
    for lineno, raw in enumerate(it, start=2):
        if not raw.strip():
            continue
        fields = raw.strip().split(",")
        if len(fields) != 3:
            raise ParseError(lineno, "expected 3 fields")
        key = (_number(fields[0], lineno, "frame", int), fields[1].strip())
        if key in out:
            raise ParseError(lineno, f"duplicate label for {key}")
        out[key] = _label(fields[2], lineno)
    return out


def event_record(frame: int, agent_id: str, score: float, threshold: float, scope: str) -> str:
    return json.dumps({"frame": frame, "agent_id": agent_id, "score": float(fmt(score)),
                       "threshold": float(fmt(threshold)), "scope": scope})


def score_record(frame: int, agent_id: str, score: float, flagged: bool) -> str:
    return json.dumps({"frame": frame, "agent_id": agent_id, "score": float(fmt(score)),
                       "flagged": flagged})


def read_scores(lines: Iterable[str]) -> tuple[dict[tuple[int, str], float], bool]:
    """Read detector output; returns (scores by key, whether every sample is present).

    Score records (``flagged`` field) cover every scored sample; event
    records only cover exceedances.
    """
    scores: dict[tuple[int, str], float] = {}
    complete = False
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            key = (int(obj["frame"]), str(obj["agent_id"]))
            score = float(obj["score"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise ParseError(lineno, "expected a score or event record") from None
        complete = complete or "flagged" in obj
        scores[key] = score
    return scores, complete
