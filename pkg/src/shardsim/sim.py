"""Discrete-event core: integer-microsecond clock, ordered event queue, seeded streams."""
from __future__ import annotations

import enum
import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Any

import numpy as np

US_PER_S = 1_000_000


def to_us(seconds: float) -> int:
    """Convert simulated seconds to integer microseconds (round half up)."""
    return int(np.floor(seconds * US_PER_S + 0.5))


def to_s(us: int) -> float:
    return us / US_PER_S


class EventKind(str, enum.Enum):
    REQUEST_ARRIVAL = "RequestArrival"
    NODE_FAIL = "NodeFail"
    NODE_RECOVER = "NodeRecover"
    CORRUPTION = "Corruption"
    SYNC_TICK = "SyncTick"
    REBALANCE_TICK = "RebalanceTick"
    FORECAST_TICK = "ForecastTick"
    PATTERN_SHIFT = "PatternShift"
    MIGRATION_DONE = "MigrationDone"
    REGEN_STEP = "RegenStep"


@dataclass
class Event:
    time: int
    kind: EventKind
    payload: Any = None
    seq: int = -1


class SchedulingInPast(ValueError):
    pass


class EventQueue:
    """Min-heap keyed on (time, seq); seq is the insertion counter."""

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0
        self.now = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, event: Event) -> Event:
        if event.time < self.now:
            raise SchedulingInPast(
                f"event {event.kind.value} at {event.time}us is before clock {self.now}us"
            )
        event.seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (event.time, event.seq, event))
        return event

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> Event:
        t, _, event = heapq.heappop(self._heap)
        self.now = t
        return event

    def advance(self, t: int) -> None:
        if t < self.now:
            raise SchedulingInPast(f"cannot move clock back from {self.now} to {t}")
        self.now = t


def schedule(queue: EventQueue, event: Event) -> EventQueue:
    queue.schedule(event)
    return queue


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass
class RngStream:
    """A PCG64 generator keyed by (master seed, label).

    Streams with distinct labels share no state, so adding a new consumer never
    perturbs the draws of an existing one.
    """

    seed: int
    label: str
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        ss = np.random.SeedSequence([self.seed & (2**64 - 1), _label_key(self.label)])
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def random(self, size=None):
        return self.generator.random(size)

    def exponential(self, scale: float, size=None):
        return self.generator.exponential(scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


def rng_stream(master_seed: int, label: str) -> RngStream:
    return RngStream(master_seed, label)
