"""In-memory model of Go runtime execution traces.

A trace is an ordered list of events (goroutine lifecycle, blocking,
syscalls, GC, user annotations) plus a stack table that maps stack IDs to
frame lists so many events can share one recorded call stack.  Everything
here is immutable after construction and carries no file-format knowledge;
the codecs in :mod:`goracle.codec` produce and consume these values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class EventType(enum.IntEnum):
    """The 32 event opcodes a trace can contain."""

    ProcStart = 0x00
    ProcStop = 0x01
    Freq = 0x02
    Stack = 0x03
    Gomaxprocs = 0x04
    GCStart = 0x05
    GCDone = 0x06
    GCScanStart = 0x07
    GCScanDone = 0x08
    GCSweepStart = 0x09
    GCSweepDone = 0x0A
    GoCreate = 0x0B
    GoStart = 0x0C
    GoEnd = 0x0D
    GoStop = 0x0E
    GoYield = 0x0F
    GoPreempt = 0x10
    GoSleep = 0x11
    GoBlock = 0x12
    GoBlockSend = 0x13
    GoBlockRecv = 0x14
    GoBlockSelect = 0x15
    GoBlockSync = 0x16
    GoBlockCond = 0x17
    GoBlockNet = 0x18
    GoUnblock = 0x19
    GoSysCall = 0x1A
    GoSysExit = 0x1B
    GoSysBlock = 0x1C
    User = 0x1D
    UserStart = 0x1E
    UserEnd = 0x1F


# Goroutine-blocking event types; GoSysBlock is deliberately not one of
# them (it marks a P losing its goroutine to a syscall, not a park).
BLOCK_EVENT_TYPES = frozenset(
    {
        EventType.GoBlock,
        EventType.GoBlockSend,
        EventType.GoBlockRecv,
        EventType.GoBlockSelect,
        EventType.GoBlockSync,
        EventType.GoBlockCond,
        EventType.GoBlockNet,
    }
)

USER_EVENT_TYPES = frozenset({EventType.User, EventType.UserStart, EventType.UserEnd})


@dataclass(frozen=True)
class Frame:
    """One call-stack frame: program counter plus source location."""

    pc: int
    fn: str = ""
    file: str = ""
    line: int = 0


@dataclass(frozen=True)
class Event:
    """One runtime occurrence.

    ``off`` is the byte offset of the record in the source file, ``seq``
    the parser's encounter order (tiebreaker for equal timestamps), ``ts``
    nanoseconds.  ``p`` is the logical processor (-1 = unattributed) and
    ``g`` the goroutine (0 = runtime/unattributed).  ``args`` always has
    exactly three slots; unused slots are 0.  ``link``, when set, is an
    index into the owning trace's event list.
    """

    typ: EventType
    off: int = 0
    seq: int = 0
    ts: int = 0
    p: int = -1
    g: int = 0
    stk_id: int = 0
    stk: tuple[Frame, ...] = ()
    args: tuple[int, int, int] = (0, 0, 0)
    sargs: tuple[str, ...] = ()
    link: int | None = None

    def sort_key(self) -> tuple[int, int]:
        return (self.ts, self.seq)


@dataclass(frozen=True)
class ParsedTrace:
    """An event list sorted by (ts, seq) plus the stack table.

    The unit of classification.  ``stacks`` maps stack IDs to frame
    tuples; every non-zero ``stk_id`` referenced by an event must be a
    key of it.
    """

    events: tuple[Event, ...] = ()
    stacks: dict[int, tuple[Frame, ...]] = field(default_factory=dict)


class Verdict(enum.Enum):
    Pass = "Pass"
    Fail = "Fail"


class BugCategory(enum.Enum):
    Blocking = "Blocking"
    NonBlocking = "NonBlocking"


@dataclass(frozen=True)
class TraceLabel:
    """Ground-truth label for one trace.

    ``category``/``cause``/``subcause`` describe the bug and are only
    present on failing traces.  ``project`` groups traces by subject
    program for leave-one-program-out splits and must be non-empty.
    """

    verdict: Verdict
    project: str
    category: BugCategory | None = None
    cause: str | None = None
    subcause: str | None = None
    bug_id: str | None = None


@dataclass(frozen=True)
class Violation:
    """One broken invariant, anchored to the offending event index.

    ``index`` is -1 for trace-level violations that no single event owns.
    """

    index: int
    invariant: str
    detail: str = ""

    def __str__(self) -> str:
        where = f"event {self.index}" if self.index >= 0 else "trace"
        msg = f"{where}: {self.invariant}"
        return f"{msg} ({self.detail})" if self.detail else msg


def validate_label(label: TraceLabel) -> list[str]:
    """Check TraceLabel invariants; returns human-readable problems."""
    problems = []
    if not label.project:
        problems.append("project must be non-empty")
    if label.verdict is Verdict.Pass:
        for name in ("category", "cause", "subcause"):
            if getattr(label, name) is not None:
                problems.append(f"{name} present on a passing trace")
    return problems


def validate_trace(trace: ParsedTrace) -> list[Violation]:
    """Check every ParsedTrace/Event invariant; empty result = valid.

    Validation never raises: each broken invariant becomes one
    :class:`Violation` naming the event index and the invariant.  The
    check is pure, so two calls on the same value yield identical
    reports.
    """
    out: list[Violation] = []
    n = len(trace.events)
    prev_key: tuple[int, int] | None = None
    for i, ev in enumerate(trace.events):
        if not isinstance(ev.typ, EventType):
            out.append(Violation(i, "unknown event type", repr(ev.typ)))
        if ev.off < 0:
            out.append(Violation(i, "negative offset", str(ev.off)))
        if ev.seq < 0:
            out.append(Violation(i, "negative seq", str(ev.seq)))
        if ev.ts < 0:
            out.append(Violation(i, "negative timestamp", str(ev.ts)))
        if ev.p < -1:
            out.append(Violation(i, "processor id below -1", str(ev.p)))
        if ev.g < 0:
            out.append(Violation(i, "negative goroutine id", str(ev.g)))
        if ev.stk_id < 0:
            out.append(Violation(i, "negative stack id", str(ev.stk_id)))
        if len(ev.args) != 3:
            out.append(Violation(i, "args must have exactly 3 slots", str(len(ev.args))))
        for fr in ev.stk:
            if fr.line < 0:
                out.append(Violation(i, "negative frame line", str(fr.line)))
        if ev.stk_id != 0:
            table = trace.stacks.get(ev.stk_id)
            if table is None:
                out.append(Violation(i, "dangling stack id", str(ev.stk_id)))
            elif tuple(ev.stk) != tuple(table):
                out.append(Violation(i, "stack differs from stack table entry", str(ev.stk_id)))
        if ev.link is not None:
            if ev.link == i:
                out.append(Violation(i, "self-referencing link"))
            elif not (0 <= ev.link < n):
                out.append(Violation(i, "link out of range", str(ev.link)))
        key = ev.sort_key()
        if prev_key is not None and key < prev_key:
            out.append(Violation(i, "unsorted", f"{key} after {prev_key}"))
        prev_key = key
    return out
