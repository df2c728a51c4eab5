"""Closed-loop simulator mirroring the vehicle's node graph.

A course player publishes the scene of the upcoming segment, a perception
node publishes (class, entropy), a planner publishes the requested speed,
and the system controller publishes the scaled speed — all over an
in-process typed pub/sub bus with synchronous per-tick delivery, so traces
are bit-reproducible for a fixed seed.

Each trace row is keyed by the segment being perceived (one-segment
lookahead): its true label, the prediction, and the resulting speed all
refer to that segment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import config_hash, default_config
from .controller import EntropySmoother, SpeedCommand, TierPolicy, scale_speed
from .netcore import Model
from .trackgen import (ConeScene, DataError, UNCERTAIN_CATEGORIES,
                       classify_angle, generate_scene, generate_uncertain,
                       merge_label, rasterize, severity_of)

TRACE_COLUMNS = ("time_s", "segment_id", "true_class", "predicted_class",
                 "entropy_bits", "requested_rpm", "scaled_rpm", "tier",
                 "high_entropy_flag")


@dataclass(frozen=True)
class Message:
    topic: str
    tick: int
    payload: object


class Bus:
    """In-process pub/sub with in-order synchronous delivery.

    Subscribers run in subscription order; every publish is recorded, which
    gives exactly-once in-order delivery per topic within a tick.
    """

    def __init__(self):
        self._subscribers: dict[str, list[Callable[[Message], None]]] = {}
        self.log: list[Message] = []

    def subscribe(self, topic: str, handler: Callable[[Message], None]) -> None:
        self._subscribers.setdefault(topic, []).append(handler)

    def publish(self, topic: str, tick: int, payload: object) -> None:
        msg = Message(topic, tick, payload)
        self.log.append(msg)
        for handler in self._subscribers.get(topic, []):
            handler(msg)


@dataclass(frozen=True)
class Segment:
    angle_deg: float
    length_m: float
    corruption: Optional[str] = None  # None | random | fallen | confusing

    def __post_init__(self):
        if self.length_m <= 0:
            raise DataError("segment length must be positive")
        if abs(self.angle_deg) > 120.0:
            raise DataError("segment angle outside generator range")
        if self.corruption is not None and self.corruption not in UNCERTAIN_CATEGORIES:
            raise DataError(f"unknown corruption tag {self.corruption!r}")

    @property
    def true_label(self) -> str:
        return self.corruption or classify_angle(self.angle_deg)


@dataclass(frozen=True)
class TrackCourse:
    segments: tuple[Segment, ...]

    @property
    def total_length_m(self) -> float:
        return sum(s.length_m for s in self.segments)

    def segment_at(self, position_m: float) -> int:
        acc = 0.0
        for i, seg in enumerate(self.segments):
            acc += seg.length_m
            if position_m < acc:
                return i
        return len(self.segments) - 1

    def to_json_obj(self) -> list[dict]:
        return [{"angle_deg": s.angle_deg, "length_m": s.length_m,
                 "corruption": s.corruption} for s in self.segments]

    @staticmethod
    def from_json_obj(obj: list[dict]) -> "TrackCourse":
        return TrackCourse(tuple(
            Segment(float(s["angle_deg"]), float(s["length_m"]),
                    s.get("corruption")) for s in obj))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_obj(), fh, indent=2, sort_keys=True)

    @staticmethod
    def load(path: str | Path) -> "TrackCourse":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"course file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            return TrackCourse.from_json_obj(json.load(fh))


def make_clean_course(seed: int = 0, n_segments: int = 12) -> TrackCourse:
    """Straightaways and gentle curves, lead-in straight first.

    Angles sit comfortably mid-band so a competently trained model stays
    confident; sharper turns belong in the mixed course.
    """
    rng = np.random.default_rng(seed)
    segments = [Segment(0.0, 30.0)]
    choices = [0.0, 0.0, 5.0, -5.0, 25.0, -25.0]
    for _ in range(n_segments - 1):
        angle = float(rng.choice(choices))
        length = float(rng.uniform(25.0, 45.0))
        segments.append(Segment(angle, length))
    return TrackCourse(tuple(segments))


def make_mixed_course(seed: int = 0, n_segments: int = 12,
                      corruptions: tuple[str, ...] = ("random", "fallen")) -> TrackCourse:
    """Clean course with short corrupted segments spliced into the middle."""
    base = make_clean_course(seed, n_segments)
    segments = list(base.segments)
    step = max(2, len(segments) // (len(corruptions) + 1))
    for i, tag in enumerate(corruptions):
        pos = min(len(segments) - 1, (i + 1) * step)
        segments[pos] = Segment(segments[pos].angle_deg, 18.0, tag)
    return TrackCourse(tuple(segments))


@dataclass
class TraceRow:
    time_s: float
    segment_id: int
    true_class: str
    predicted_class: str
    entropy_bits: float
    requested_rpm: float
    scaled_rpm: float
    tier: int
    high_entropy_flag: bool


@dataclass
class SimTrace:
    rows: list[TraceRow]
    meta: dict = field(default_factory=dict)
    completed: bool = True

    def to_csv(self, path: str | Path) -> None:
        lines = [f"# {key}={self.meta[key]}" for key in sorted(self.meta)]
        lines.append(",".join(TRACE_COLUMNS))
        for r in self.rows:
            lines.append(
                f"{r.time_s!r},{r.segment_id},{r.true_class},"
                f"{r.predicted_class},{r.entropy_bits!r},{r.requested_rpm!r},"
                f"{r.scaled_rpm!r},{r.tier},{int(r.high_entropy_flag)}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @staticmethod
    def from_csv(path: str | Path) -> "SimTrace":
        meta: dict = {}
        rows: list[TraceRow] = []
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        for line in lines:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
                continue
            if line.startswith(TRACE_COLUMNS[0]) or not line.strip():
                continue
            parts = line.split(",")
            rows.append(TraceRow(
                float(parts[0]), int(parts[1]), parts[2], parts[3],
                float(parts[4]), float(parts[5]), float(parts[6]),
                int(parts[7]), bool(int(parts[8]))))
        return SimTrace(rows, meta, completed=meta.get("completed", "1") == "1")


def plan_speed(class_name: str, cfg: Optional[dict] = None) -> float:
    """Planner's requested rpm for a predicted class; symmetric in direction.

    Merged-mode classes carry no severity, so bare Left/Right fall back to
    the Medium request.
    """
    cfg = cfg or default_config()
    speeds = cfg["planner"]["speeds_rpm"]
    if class_name in speeds:
        return float(speeds[class_name])
    severity = severity_of(class_name)
    if severity in ("Left", "Right"):
        severity = "Medium"
    if severity not in speeds:
        raise DataError(f"no planned speed for class {class_name!r}")
    return float(speeds[severity])


def _scene_for_segment(segment: Segment, rng: np.random.Generator,
                       cfg: dict) -> ConeScene:
    if segment.corruption is None:
        return generate_scene(theta_deg=segment.angle_deg, rng=rng, cfg=cfg)
    return generate_uncertain(segment.corruption, rng=rng, cfg=cfg)


def run_course(course: TrackCourse, model: Model,
               policy: Optional[TierPolicy] = None,
               seed: int = 0,
               cfg: Optional[dict] = None) -> SimTrace:
    """Drive the course closed-loop and record the per-tick trace.

    Per tick the bus carries scene -> prediction -> speed request -> speed
    command; the vehicle advances by the scaled speed. Scenes are
    regenerated every tick from tick-derived seeds (a fresh camera frame),
    and the run is bounded by `sim.max_ticks` in case a segment pins the
    vehicle at full stop.
    """
    cfg = cfg or default_config()
    policy = policy or TierPolicy.from_config(cfg)
    if model.kind == "rsnn" and model.budget is None:
        raise DataError("random-set model is missing its budget")
    mode_label = merge_label if model.frame.size == 3 else (lambda s: s)

    tick_s = float(cfg["sim"]["tick_s"])
    circumference = float(cfg["sim"]["wheel_circumference_m"])
    max_ticks = int(cfg["sim"]["max_ticks"])
    alpha = float(cfg["policy"].get("entropy_smoothing_alpha", 0.0))
    smoother = EntropySmoother(alpha)

    bus = Bus()
    state: dict = {}

    def perception(msg: Message) -> None:
        scene: ConeScene = msg.payload
        features = rasterize(scene, cfg)
        if model.kind == "rsnn":
            pred = model.predict_one(features)
            payload = {"class_index": pred.predicted_class,
                       "class_name": pred.predicted_name,
                       "entropy_bits": pred.entropy_bits}
        else:
            dist = model.predict_one(features)
            probs = dist.probs
            idx = int(np.argmax(probs))
            positive = probs[probs > 0]
            ent = float(-(positive * np.log2(positive)).sum())
            payload = {"class_index": idx,
                       "class_name": model.frame.names[idx],
                       "entropy_bits": ent}
        bus.publish("perception/prediction", msg.tick, payload)

    def planner(msg: Message) -> None:
        rpm = plan_speed(msg.payload["class_name"], cfg)
        bus.publish("planner/speed_request", msg.tick, rpm)

    def system_controller(msg: Message) -> None:
        prediction = state["prediction"]
        entropy = smoother.update(prediction["entropy_bits"])
        command = scale_speed(msg.payload, entropy, policy,
                              max_entropy_bits=model.frame.max_entropy_bits)
        bus.publish("controller/speed_command", msg.tick, command)

    def remember(key: str):
        def handler(msg: Message) -> None:
            state[key] = msg.payload
        return handler

    bus.subscribe("course/scene", perception)
    bus.subscribe("perception/prediction", remember("prediction"))
    bus.subscribe("perception/prediction", planner)
    bus.subscribe("planner/speed_request", system_controller)
    bus.subscribe("controller/speed_command", remember("command"))

    rows: list[TraceRow] = []
    n_segments = len(course.segments)
    total = course.total_length_m
    position = 0.0
    completed = True

    if n_segments > 0:
        tick = 0
        while position < total:
            if tick >= max_ticks:
                completed = False
                break
            current = course.segment_at(position)
            perceived_idx = min(current + 1, n_segments - 1)
            perceived = course.segments[perceived_idx]
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed,
                                       spawn_key=(perceived_idx, tick)))
            scene = _scene_for_segment(perceived, rng, cfg)
            bus.publish("course/scene", tick, scene)

            command: SpeedCommand = state["command"]
            prediction = state["prediction"]
            rows.append(TraceRow(
                time_s=round(tick * tick_s, 9),
                segment_id=perceived_idx,
                true_class=mode_label(perceived.true_label)
                if perceived.corruption is None else perceived.true_label,
                predicted_class=prediction["class_name"],
                entropy_bits=prediction["entropy_bits"],
                requested_rpm=command.requested_rpm,
                scaled_rpm=command.scaled_rpm,
                tier=command.tier_index,
                high_entropy_flag=prediction["entropy_bits"] >= policy.top_bound,
            ))
            position += command.scaled_rpm * circumference / 60.0 * tick_s
            tick += 1

    meta = {"seed": seed, "config_hash": config_hash(cfg),
            "model_kind": model.kind, "completed": int(completed),
            "n_segments": n_segments}
    return SimTrace(rows, meta, completed=completed)


@dataclass
class SegmentStats:
    segment_id: int
    true_class: str
    n_ticks: int
    mean_requested_rpm: float
    mean_scaled_rpm: float
    high_entropy_ticks: int


@dataclass
class TraceSummary:
    per_segment: list[SegmentStats]
    mean_requested_rpm: float
    mean_scaled_rpm: float
    high_entropy_ticks: int
    full_stop_time_s: float
    n_ticks: int

    def to_json_obj(self) -> dict:
        return {
            "mean_requested_rpm": self.mean_requested_rpm,
            "mean_scaled_rpm": self.mean_scaled_rpm,
            "high_entropy_ticks": self.high_entropy_ticks,
            "full_stop_time_s": self.full_stop_time_s,
            "n_ticks": self.n_ticks,
            "per_segment": [
                {"segment_id": s.segment_id, "true_class": s.true_class,
                 "n_ticks": s.n_ticks,
                 "mean_requested_rpm": s.mean_requested_rpm,
                 "mean_scaled_rpm": s.mean_scaled_rpm,
                 "high_entropy_ticks": s.high_entropy_ticks}
                for s in self.per_segment
            ],
        }


def compare_traces(trace: SimTrace, tick_s: float = 0.2) -> TraceSummary:
    """Per-segment and overall requested-vs-scaled speed statistics."""
    if not trace.rows:
        raise DataError("cannot summarize an empty trace")
    by_segment: dict[int, list[TraceRow]] = {}
    for row in trace.rows:
        by_segment.setdefault(row.segment_id, []).append(row)
    per_segment = []
    for seg_id in sorted(by_segment):
        seg_rows = by_segment[seg_id]
        per_segment.append(SegmentStats(
            segment_id=seg_id,
            true_class=seg_rows[0].true_class,
            n_ticks=len(seg_rows),
            mean_requested_rpm=float(np.mean([r.requested_rpm for r in seg_rows])),
            mean_scaled_rpm=float(np.mean([r.scaled_rpm for r in seg_rows])),
            high_entropy_ticks=sum(r.high_entropy_flag for r in seg_rows),
        ))
    return TraceSummary(
        per_segment=per_segment,
        mean_requested_rpm=float(np.mean([r.requested_rpm for r in trace.rows])),
        mean_scaled_rpm=float(np.mean([r.scaled_rpm for r in trace.rows])),
        high_entropy_ticks=sum(r.high_entropy_flag for r in trace.rows),
        full_stop_time_s=sum(tick_s for r in trace.rows if r.scaled_rpm == 0.0),
        n_ticks=len(trace.rows),
    )
