"""Deterministic discrete-event engine in virtual seconds.

Events pop in ``(fire_time, sequence_no)`` order.  The server is a single
FIFO resource: evaluation and merge delays occupy it, and work that arrives
while it is busy waits.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class EventKind(str, Enum):
    CLIENT_ARRIVAL = "client_arrival"
    CENTRAL_EVAL = "central_eval"
    TERMINATE = "terminate"


@dataclass(frozen=True, order=True)
class SimEvent:
    fire_time: float
    sequence_no: int
    kind: EventKind = field(compare=False)
    client_id: str = field(default="", compare=False)


class SimClock:
    def __init__(self):
        self.now = 0.0
        self._queue: list[SimEvent] = []
        self._seq = 0
        self.log: list[SimEvent] = []

    def schedule(self, fire_time: float, kind: EventKind, client_id: str = "") -> SimEvent:
        if fire_time < self.now:
            raise ValueError(f"cannot schedule at {fire_time} before current time {self.now}")
        event = SimEvent(float(fire_time), self._seq, EventKind(kind), client_id)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def next_event(self) -> SimEvent:
        if not self._queue:
            raise IndexError("event queue is empty")
        event = heapq.heappop(self._queue)
        self.now = event.fire_time
        self.log.append(event)
        return event

    def peek(self) -> SimEvent | None:
        return self._queue[0] if self._queue else None

    def __len__(self):
        return len(self._queue)

    def trace_lines(self) -> list[str]:
        return [f"{e.fire_time:.6f}\t{e.sequence_no}\t{e.kind.value}\t{e.client_id}" for e in self.log]

    def dump_trace(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("virtual_time\tseq\tkind\tclient_id\n")
            for line in self.trace_lines():
                fh.write(line + "\n")


JITTERS = ("none", "uniform", "lognormal")


@dataclass(frozen=True)
class LatencyModel:
    """Client training durations.

    ``base`` maps client id to its mean duration.  Lognormal jitter multiplies
    by ``exp(sigma Z - sigma^2 / 2)`` so the mean stays at ``base``; uniform
    jitter multiplies by ``U(1 - width, 1 + width)``.
    """

    base: dict[str, float]
    jitter: str = "lognormal"
    sigma: float = 0.1
    width: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.jitter not in JITTERS:
            raise ValueError(f"unknown jitter {self.jitter!r}")
        if any(not b > 0 for b in self.base.values()):
            raise ValueError("base durations must be positive")
        if not 0 <= self.width < 1:
            raise ValueError("uniform jitter width must lie in [0, 1)")
        if self.sigma < 0:
            raise ValueError("lognormal sigma must be non-negative")

    @classmethod
    def proportional(cls, sample_counts: dict[str, int], seconds_per_sample: float, epochs: int = 1, **kw):
        return cls({cid: seconds_per_sample * n * max(epochs, 1) for cid, n in sample_counts.items()}, **kw)

    def streams(self) -> "DurationSampler":
        return DurationSampler(self)


class DurationSampler:
    """Per-client random streams; draw k of client c depends only on (seed, c, k)."""

    def __init__(self, model: LatencyModel):
        self.model = model
        ids = sorted(model.base)
        self._rngs = {cid: np.random.default_rng([int(model.seed), i]) for i, cid in enumerate(ids)}

    def sample(self, client_id: str) -> float:
        m = self.model
        base = m.base[client_id]
        if m.jitter == "none":
            return base
        rng = self._rngs[client_id]
        if m.jitter == "uniform":
            return base * rng.uniform(1.0 - m.width, 1.0 + m.width)
        return base * math.exp(m.sigma * rng.standard_normal() - 0.5 * m.sigma ** 2)


def sample_duration(sampler: DurationSampler, client_id: str) -> float:
    return sampler.sample(client_id)


@dataclass(frozen=True)
class DelayProfile:
    pre_eval_delay: float = 0.0
    pre_merge_delay: float = 0.0

    def __post_init__(self):
        if self.pre_eval_delay < 0 or self.pre_merge_delay < 0:
            raise ValueError("delays must be non-negative")

    def for_point(self, point: str) -> float:
        if point == "eval":
            return self.pre_eval_delay
        if point == "merge":
            return self.pre_merge_delay
        raise ValueError(f"unknown delay point {point!r}")


def apply_delays(profile: DelayProfile, point: str, clock: float) -> float:
    """Clock after the busy wait that precedes ``point`` ("eval" or "merge")."""
    return clock + profile.for_point(point)


class ServerResource:
    """The single server: actions run one at a time in request order."""

    def __init__(self, profile: DelayProfile | None = None):
        self.profile = profile or DelayProfile()
        self.free_at = 0.0
        self.busy_time = 0.0
        self.counts = {"eval": 0, "merge": 0}

    def perform(self, point: str, ready_at: float) -> float:
        """Virtual time at which the action requested at ``ready_at`` takes effect."""
        start = max(ready_at, self.free_at)
        done = apply_delays(self.profile, point, start)
        self.busy_time += self.profile.for_point(point)
        self.counts[point] += 1
        self.free_at = done
        return done
