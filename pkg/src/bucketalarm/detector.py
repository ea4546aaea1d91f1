"""Bucket-algorithm anomaly detector: a streaming state machine over throughput samples.

The detector keeps B buckets of depth D. Each sample either adds a ball to the
current bucket (value on the anomalous side of the current threshold) or removes
one. Overflowing the last bucket raises an alarm. Thresholds march one baseline
standard deviation per bucket, so deeper buckets only fill under sustained
degradation.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

Key = Tuple[str, str, str]  # (group, transaction, phase)


class Direction(enum.Enum):
    """Which side of the baseline is anomalous for the monitored metric."""

    LOWER_IS_ANOMALOUS = "lower"    # throughput-style metrics
    HIGHER_IS_ANOMALOUS = "higher"  # latency-style metrics


@dataclass(frozen=True)
class DetectorConfig:
    """Static detector parameters.

    buckets:   number of buckets B (>= 1)
    depth:     maximum bucket depth D (>= 1); a bucket overflows on the
               D+1-th net addition, strictly (d > D), not at d == D
    direction: which tail of the baseline counts as anomalous
    """

    buckets: int
    depth: int
    direction: Direction = Direction.LOWER_IS_ANOMALOUS

    def __post_init__(self) -> None:
        if self.buckets < 1:
            raise ValueError(f"buckets must be >= 1, got {self.buckets}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")


@dataclass(frozen=True)
class BaselineStats:
    """Per-key reference statistics extracted from golden runs."""

    mu: float
    sigma: float
    n: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be finite and > 0, got {self.sigma}")
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")


@dataclass(frozen=True)
class DetectorState:
    """Live walk position: current bucket b (1-based) and its fill d."""

    bucket: int = 1
    fill: int = 0
    alarmed: bool = False


@dataclass(frozen=True)
class AlertEvent:
    """An alarm: all buckets overflowed at the given sample."""

    key: Key
    sample_index: int
    time: float


def step_walk(bucket: int, fill: int, add: bool, buckets: int, depth: int) -> Tuple[int, int, bool]:
    """Advance the bucket walk by one ball movement.

    This is the single transition kernel shared by the streaming detector and
    the Monte Carlo absorption simulator, so there is exactly one encoding of
    the overflow/underflow rules in the package.

    Returns (bucket, fill, alarmed).
    """
    fill = fill + 1 if add else fill - 1
    if fill > depth:
        fill = 0
        bucket += 1
    if fill < 0 and bucket > 1:
        fill = depth
        bucket -= 1
    if fill < 0 and bucket == 1:
        fill = 0
    if bucket > buckets:
        return bucket, fill, True
    return bucket, fill, False


def sample_adds_ball(value: float, bucket: int, baseline: BaselineStats,
                     direction: Direction) -> bool:
    """Threshold test for one sample against the current bucket's reference.

    Equality counts as non-anomalous: only strictly crossing the threshold
    adds a ball.
    """
    if direction is Direction.LOWER_IS_ANOMALOUS:
        return value < baseline.mu - (bucket - 1) * baseline.sigma
    return value > baseline.mu + (bucket - 1) * baseline.sigma


def detector_reset(cfg: DetectorConfig) -> DetectorState:
    """Fresh state: first bucket, empty, no alarm."""
    return DetectorState(bucket=1, fill=0, alarmed=False)


def detector_step(
    state: DetectorState,
    value: float,
    baseline: BaselineStats,
    cfg: DetectorConfig,
    *,
    key: Key = ("", "", ""),
    sample_index: int = 0,
    time: float = 0.0,
) -> Tuple[DetectorState, Optional[AlertEvent]]:
    """Consume one sample, returning the next state and an alert if all buckets overflow.

    The caller is expected to reset after an alarm; stepping an alarmed state
    is a usage error.
    """
    if state.alarmed:
        raise ValueError("detector_step called on an alarmed state; reset first")
    if not math.isfinite(value):
        raise ValueError(f"sample value must be finite, got {value}")

    add = sample_adds_ball(value, state.bucket, baseline, cfg.direction)
    bucket, fill, alarmed = step_walk(state.bucket, fill=state.fill, add=add,
                                      buckets=cfg.buckets, depth=cfg.depth)
    if alarmed:
        # record the overflow position; run_detector resets before continuing
        return (DetectorState(bucket=bucket, fill=fill, alarmed=True),
                AlertEvent(key=key, sample_index=sample_index, time=time))
    return DetectorState(bucket=bucket, fill=fill, alarmed=False), None


class MissingBaselineError(KeyError):
    """A stream key has no entry in the baseline profile."""

    def __init__(self, key: Key):
        super().__init__(key)
        self.key = key

    def __str__(self) -> str:
        return f"no baseline for key {self.key!r}"


def run_detector(
    samples: Iterable,
    baselines: Dict[Key, BaselineStats],
    cfg: DetectorConfig,
) -> List[AlertEvent]:
    """Drive one detector instance per key over an ordered sample stream.

    ``samples`` yields objects with .group/.transaction/.phase/.t/.value
    attributes (see profiling.Sample). Keys are fully isolated; a key's
    detector is reset after each alarm so monitoring continues.
    """
    states: Dict[Key, DetectorState] = {}
    counters: Dict[Key, int] = {}
    alerts: List[AlertEvent] = []
    for s in samples:
        key = (s.group, s.transaction, s.phase)
        baseline = baselines.get(key)
        if baseline is None:
            raise MissingBaselineError(key)
        state = states.get(key)
        if state is None:
            state = detector_reset(cfg)
        idx = counters.get(key, 0) + 1
        counters[key] = idx
        state, alert = detector_step(state, s.value, baseline, cfg,
                                     key=key, sample_index=idx, time=s.t)
        if alert is not None:
            alerts.append(alert)
            state = detector_reset(cfg)
        states[key] = state
    return alerts
