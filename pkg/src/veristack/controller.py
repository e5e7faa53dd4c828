"""Controller & Remediator: blocks tools, pauses, or safe-modes an agent.

A pure fold over control events: alerts escalate by severity, challenge
failures pause (and, repeated, trip safe mode), a passed challenge lifts a
restriction, and a manual restore returns any mode to normal. Within one
incident (no restore) mode severity never decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence


class Mode(str, Enum):
    NORMAL = "NORMAL"
    RESTRICTED = "RESTRICTED"
    PAUSED = "PAUSED"
    SAFE_MODE = "SAFE_MODE"


_SEVERITY_ORDER = {Mode.NORMAL: 0, Mode.RESTRICTED: 1, Mode.PAUSED: 2, Mode.SAFE_MODE: 3}

EVENT_KINDS = ("alert_low", "alert_medium", "alert_high", "cra_fail", "cra_pass", "manual_restore")


@dataclass(frozen=True)
class ControlEvent:
    kind: str
    receipt_index: Optional[int]
    timestamp: int
    tool: Optional[str] = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown control event kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "receipt_index": self.receipt_index,
            "timestamp": self.timestamp,
            "tool": self.tool,
        }


@dataclass(frozen=True)
class ControlState:
    mode: Mode = Mode.NORMAL
    blocked_tools: frozenset[str] = frozenset()
    entered_at: int = 0
    cause: Optional[ControlEvent] = None

    def severity(self) -> int:
        return _SEVERITY_ORDER[self.mode]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "blocked_tools": sorted(self.blocked_tools),
            "entered_at": self.entered_at,
            "cause": self.cause.to_dict() if self.cause else None,
        }


def apply_event(state: ControlState, event: ControlEvent) -> ControlState:
    """Deterministic transition table.

    alert_low logs only; alert_medium restricts the implicated tool;
    alert_high and cra_fail pause; a second cra_fail while paused enters
    safe mode; cra_pass releases a restriction; manual_restore returns to
    normal from anywhere.
    """
    kind = event.kind
    if kind == "manual_restore":
        return ControlState(Mode.NORMAL, frozenset(), event.timestamp, event)
    if kind == "alert_low":
        return state
    if kind == "alert_medium":
        blocked = state.blocked_tools | ({event.tool} if event.tool else set())
        if state.mode in (Mode.PAUSED, Mode.SAFE_MODE):
            return replace(state, blocked_tools=blocked)
        return ControlState(Mode.RESTRICTED, blocked, event.timestamp, event)
    if kind in ("alert_high", "cra_fail"):
        if kind == "cra_fail" and state.mode in (Mode.PAUSED, Mode.SAFE_MODE):
            return ControlState(Mode.SAFE_MODE, state.blocked_tools, event.timestamp, event)
        if state.mode == Mode.SAFE_MODE:
            return state
        return ControlState(Mode.PAUSED, state.blocked_tools, event.timestamp, event)
    if kind == "cra_pass":
        if state.mode == Mode.RESTRICTED:
            return ControlState(Mode.NORMAL, frozenset(), event.timestamp, event)
        return state
    raise AssertionError(f"unhandled event kind {kind!r}")


def is_allowed(state: ControlState, tool: str) -> bool:
    """Whether the control state permits a call to ``tool`` right now."""
    if state.mode in (Mode.PAUSED, Mode.SAFE_MODE):
        return False
    if state.mode == Mode.RESTRICTED:
        return tool not in state.blocked_tools
    return True


def fold_events(events: Sequence[ControlEvent], initial: Optional[ControlState] = None) -> ControlState:
    state = initial or ControlState()
    for event in events:
        state = apply_event(state, event)
    return state


def remediation_timestamp(
    history: Sequence[tuple[ControlEvent, ControlState]],
    detection_time: int,
    violating_tool: Optional[str] = None,
) -> Optional[int]:
    """Ticks from detection to the first state that blocks the violating
    capability; None when remediation never occurred (censored).

    ``history`` pairs each applied event with the resulting state, in
    order.
    """
    for event, state in history:
        if event.timestamp < detection_time:
            continue
        if state.mode in (Mode.PAUSED, Mode.SAFE_MODE):
            return event.timestamp - detection_time
        if (
            state.mode == Mode.RESTRICTED
            and violating_tool is not None
            and violating_tool in state.blocked_tools
        ):
            return event.timestamp - detection_time
    return None


class AgentController:
    """Authoritative control state for one agent; events applied in order."""

    def __init__(self, agent_id: str):
        self.agent_id = agent_id
        self.state = ControlState()
        self.history: list[tuple[ControlEvent, ControlState]] = []

    def apply(self, event: ControlEvent) -> ControlState:
        if self.history and event.timestamp < self.history[-1][0].timestamp:
            raise ValueError(
                f"control event timestamp {event.timestamp} precedes previous "
                f"{self.history[-1][0].timestamp}"
            )
        self.state = apply_event(self.state, event)
        self.history.append((event, self.state))
        return self.state

    def is_allowed(self, tool: str) -> bool:
        return is_allowed(self.state, tool)
