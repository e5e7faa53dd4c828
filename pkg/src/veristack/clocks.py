"""Timestamp sources.

Receipts carry either wall-clock milliseconds (service mode) or a logical
tick (simulation mode). The harness uses logical ticks so detection and
remediation latencies are exact, reproducible integers.
"""

from __future__ import annotations

import time
from typing import Protocol


class Clock(Protocol):
    mode: str

    def now(self) -> int: ...


class WallClock:
    """Milliseconds since the epoch."""

    mode = "wall"

    def now(self) -> int:
        return int(time.time() * 1000)


class SimClock:
    """Deterministic logical clock; the episode driver advances it."""

    mode = "sim"

    def __init__(self, start: int = 0):
        self._tick = start

    def now(self) -> int:
        return self._tick

    def advance(self, ticks: int = 1) -> int:
        self._tick += ticks
        return self._tick

    def set(self, tick: int) -> None:
        if tick < self._tick:
            raise ValueError(f"clock cannot move backwards: {tick} < {self._tick}")
        self._tick = tick
