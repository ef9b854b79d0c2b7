"""Symbolic backtraces, rule traces, and phase step counters.

Backtraces walk the whole stack chain innermost-first, fiber by fiber and
segment by segment, emitting boundary entries where control crossed between
segments (Callback, ExtCall) or where a handler delimits a fiber
(HandlerPush). Continuation backtraces walk a captured fiber list the same
way. Both formats are stable and golden-testable:

    #<n> <segment> <summary>        segment is "c" or "ocaml:<fiber-id>"

Trace lines are "<step>\\t<RULE>\\t<fiber-id-or-C>".

Phase counters carve the canonical perform/resume cycle out of a rule trace
as machine-step counts (not nanoseconds): handler installation to the start
of the body (a-b), perform to handling (b-c), handling to the resume (c-d),
and the resume back through the fiber's value return and free (d-e).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .machine import (
    ArgFrame,
    Arith1Frame,
    Arith2Frame,
    Configuration,
    CStack,
    Fiber,
    Frame,
    FunFrame,
    MarkerFrame,
    TraceEvent,
)
from .runtime import FiberRuntime, UsedContinuation
from .syntax import pretty
from .values import citer, Kont, value_repr

__all__ = [
    "BacktraceEntry",
    "TraceEvent",
    "backtrace",
    "continuation_backtrace",
    "format_backtrace",
    "format_trace",
    "PhaseCounts",
    "PhaseShapeError",
    "phase_counters",
]

_SUMMARY_LIMIT = 40


@dataclass(frozen=True)
class BacktraceEntry:
    segment: str  # "C" | "OCAML"
    fiber_id: Optional[int]
    summary: str
    boundary: Optional[str] = None  # "ExtCall" | "Callback" | "HandlerPush"


def _short(text: str) -> str:
    if len(text) > _SUMMARY_LIMIT:
        return text[: _SUMMARY_LIMIT - 3] + "..."
    return text


def _frame_summary(frame: Frame) -> str:
    if isinstance(frame, ArgFrame):
        return f"arg {_short(pretty(frame.expr))}"
    if isinstance(frame, FunFrame):
        return f"apply {value_repr(frame.value)}"
    if isinstance(frame, Arith1Frame):
        return f"arith {frame.op.value} rhs {_short(pretty(frame.rhs))}"
    if isinstance(frame, Arith2Frame):
        return f"arith {frame.op.value} lhs {frame.lhs}"
    if isinstance(frame, MarkerFrame):
        return f"exn-handler {frame.spec.case_labels()}"
    return type(frame).__name__


def _fiber_entries(fiber: Fiber, out: list[BacktraceEntry], with_boundary: bool) -> None:
    fid = fiber.meta.id if fiber.meta else None
    for frame in citer(fiber.frames):
        out.append(BacktraceEntry("OCAML", fid, _frame_summary(frame)))
    if with_boundary:
        out.append(
            BacktraceEntry(
                "OCAML",
                fid,
                f"[handler {fiber.handler.spec.case_labels()}]",
                boundary="HandlerPush",
            )
        )


def backtrace(config: Configuration) -> list[BacktraceEntry]:
    """Full stack walk, innermost frame first, down to the empty OCaml stack."""
    out: list[BacktraceEntry] = []
    node = config.stack
    while node is not None:
        if isinstance(node, CStack):
            for frame in citer(node.frames):
                out.append(BacktraceEntry("C", None, _frame_summary(frame)))
            if node.below is not None:
                out.append(BacktraceEntry("C", None, "[extcall]", boundary="ExtCall"))
            node = node.below
        else:
            fibers = list(citer(node.k))
            for i, fiber in enumerate(fibers):
                _fiber_entries(fiber, out, with_boundary=i < len(fibers) - 1)
            last_fid = fibers[-1].meta.id if fibers and fibers[-1].meta else None
            out.append(BacktraceEntry("OCAML", last_fid, "[callback]", boundary="Callback"))
            node = node.below
    return out


def continuation_backtrace(
    kont: Kont, runtime: Optional[FiberRuntime] = None
) -> list[BacktraceEntry]:
    """Walk a captured continuation's fibers innermost-first."""
    if runtime is not None and runtime.kont_state(kont.kid) == "USED":
        raise UsedContinuation(f"continuation {kont.kid} already used")
    out: list[BacktraceEntry] = []
    # Every fiber gets its handler boundary: the last one names the handler
    # that captured the continuation.
    for fiber in citer(kont.fibers):
        _fiber_entries(fiber, out, with_boundary=True)
    return out


def format_backtrace(entries: list[BacktraceEntry]) -> list[str]:
    lines = []
    for i, entry in enumerate(entries):
        if entry.segment == "C":
            seg = "c"
        else:
            seg = f"ocaml:{entry.fiber_id}" if entry.fiber_id is not None else "ocaml:-"
        lines.append(f"#{i} {seg} {entry.summary}")
    return lines


def format_trace(events: list[TraceEvent]) -> list[str]:
    return [event.line() for event in events]


# ---------------------------------------------------------------------------
# Phase counters.
# ---------------------------------------------------------------------------


class PhaseShapeError(Exception):
    """The trace does not contain the canonical perform/resume cycle."""


@dataclass(frozen=True)
class PhaseCounts:
    a_b: int  # handler installation to the first step of the body
    b_c: int  # perform to the matching handler firing
    c_d: int  # handler body start to the resume
    d_e: int  # resume to the handler fiber's value return (and free)

    def to_dict(self) -> dict[str, int]:
        return {
            "phase_a_b": self.a_b,
            "phase_b_c": self.b_c,
            "phase_c_d": self.c_d,
            "phase_d_e": self.d_e,
        }


def _find(events, rule: str, start: int) -> int:
    for i in range(start, len(events)):
        if events[i].rule == rule:
            return i
    raise PhaseShapeError(f"no {rule} step found after index {start}")


def phase_counters(events: list[TraceEvent]) -> PhaseCounts:
    """Step counts for the four phases of one perform/resume cycle.

    The trace must contain, in order: a Handle installing the handler, the
    Perform it delimits, the EffHn that handles it, the Resume reinstating
    the continuation, and the RetFib that returns from (and frees) the
    handler's fiber. Counts are per-phase step distances.
    """
    if not events:
        raise PhaseShapeError("empty trace")
    idx_handle = _find(events, "Handle", 0)
    idx_perform = _find(events, "Perform", idx_handle + 1)
    idx_effhn = _find(events, "EffHn", idx_perform + 1)
    handler_fiber = events[idx_effhn].head_meta_id
    idx_resume = _find(events, "Resume", idx_effhn + 1)
    idx_retfib = idx_resume
    while True:
        idx_retfib = _find(events, "RetFib", idx_retfib + 1)
        if events[idx_retfib].head_meta_id == handler_fiber:
            break
    return PhaseCounts(
        a_b=(idx_handle + 1) - idx_handle,
        b_c=idx_effhn - idx_perform,
        c_d=idx_resume - idx_effhn,
        d_e=idx_retfib - idx_resume,
    )
