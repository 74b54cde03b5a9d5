"""Bidirectional codecs between :class:`ParsedTrace` and its two file formats.

Binary format (canonical extension ``.gotrace``)::

    trace   = "gotrace" version {record}
    record  = opcode byte, then the opcode's field list

All integers are ULEB128 varints; strings are a varint byte length
followed by raw UTF-8.  Most records carry a ``TimeDiff`` that advances a
single global running timestamp; ``ProcStart`` instead carries an
absolute timestamp and resets it.  ``Stack`` records populate the stack
table and do not themselves become events.  Processor and goroutine
attribution is contextual: ``ProcStart`` selects the current processor,
``GoStart`` selects the current goroutine of that processor, and every
other event inherits both.

JSON format (extension ``.trace.json``): an object with ``Events`` and
``Stacks`` keys; event objects use the exported field names Off, Type,
Ts, P, G, StkID, Stk, Args, SArgs and frames use PC, Fn, File, Line.
Numeric fields are accepted both as JSON numbers and as decimal strings,
since 64-bit ids exceed double precision in some emitters.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Any

from .events import Event, EventType, Frame, ParsedTrace

MAGIC = b"gotrace"
FORMAT_VERSION = 1

BINARY_EXTENSION = ".gotrace"
JSON_EXTENSION = ".trace.json"


class TraceFormatError(Exception):
    """Base for binary-format errors; carries the byte offset of the fault."""

    def __init__(self, offset: int, message: str):
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


class BadMagic(TraceFormatError):
    pass


class UnknownOpcode(TraceFormatError):
    pass


class TruncatedRecord(TraceFormatError):
    pass


class VarintOverflow(TraceFormatError):
    pass


class BadString(TraceFormatError):
    pass


class UnencodableTrace(Exception):
    """The trace cannot be expressed on the wire (negative time delta)."""


class JsonTraceError(Exception):
    """Base for JSON-shape errors; ``index`` is the offending event (-1 = document)."""

    def __init__(self, index: int, message: str):
        where = f"event {index}" if index >= 0 else "document"
        super().__init__(f"{where}: {message}")
        self.index = index


class MalformedDocument(JsonTraceError):
    pass


class UnknownEventTypeCode(JsonTraceError):
    pass


class TypeMismatch(JsonTraceError):
    pass


# ---------------------------------------------------------------------------
# varints


def write_varint(buf: bytearray, value: int) -> None:
    if value < 0:
        raise ValueError(f"varint cannot encode negative value {value}")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.append(byte | 0x80)
        else:
            buf.append(byte)
            return


def read_varint(data: bytes, pos: int) -> tuple[int, int]:
    """Decode one ULEB128 varint at ``pos``; returns (value, next position)."""
    result = 0
    shift = 0
    start = pos
    while True:
        if pos >= len(data):
            raise TruncatedRecord(start, "stream ends inside varint")
        if pos - start >= 10:
            raise VarintOverflow(start, "varint longer than 10 bytes")
        byte = data[pos]
        result |= (byte & 0x7F) << shift
        pos += 1
        if not byte & 0x80:
            return result, pos
        shift += 7


def _read_string(data: bytes, pos: int) -> tuple[str, int]:
    length, pos = read_varint(data, pos)
    if pos + length > len(data):
        raise TruncatedRecord(pos, "stream ends inside string")
    raw = data[pos : pos + length]
    try:
        return raw.decode("utf-8"), pos + length
    except UnicodeDecodeError as exc:
        raise BadString(pos, f"invalid UTF-8: {exc}") from None


def _write_string(buf: bytearray, value: str) -> None:
    raw = value.encode("utf-8")
    write_varint(buf, len(raw))
    buf.extend(raw)


# ---------------------------------------------------------------------------
# wire layout


class _F(enum.Enum):
    """Field kinds a record can carry, in wire order."""

    TS_ABS = "ts_abs"        # absolute timestamp -> ts, resets running clock
    TIMEDIFF = "timediff"    # delta -> ts
    P_SELF = "p_self"        # processor id -> p, selects context
    G_SELF = "g_self"        # goroutine id -> g, selects context
    ARG0 = "arg0"            # -> args[0]
    ARG1 = "arg1"            # -> args[1]
    STACK_ID = "stack_id"    # -> stk_id
    MSG = "msg"              # length-prefixed string -> sargs


_TD_STK = (_F.TIMEDIFF, _F.STACK_ID)
_USER = (_F.TIMEDIFF, _F.STACK_ID, _F.MSG)

# Wire field list per opcode.  Stack (0x03) is handled out of band.
WIRE_FIELDS: dict[EventType, tuple[_F, ...]] = {
    EventType.ProcStart: (_F.P_SELF, _F.ARG0, _F.TS_ABS),
    EventType.ProcStop: (_F.TIMEDIFF,),
    EventType.Freq: (_F.ARG0,),
    EventType.Gomaxprocs: (_F.TIMEDIFF, _F.ARG0),
    EventType.GCStart: _TD_STK,
    EventType.GCDone: (_F.TIMEDIFF,),
    EventType.GCScanStart: (_F.TIMEDIFF,),
    EventType.GCScanDone: (_F.TIMEDIFF,),
    EventType.GCSweepStart: _TD_STK,
    EventType.GCSweepDone: (_F.TIMEDIFF,),
    EventType.GoCreate: (_F.TIMEDIFF, _F.ARG0, _F.ARG1, _F.STACK_ID),
    EventType.GoStart: (_F.TIMEDIFF, _F.G_SELF),
    EventType.GoEnd: (_F.TIMEDIFF,),
    EventType.GoStop: _TD_STK,
    EventType.GoYield: _TD_STK,
    EventType.GoPreempt: _TD_STK,
    EventType.GoSleep: _TD_STK,
    EventType.GoBlock: _TD_STK,
    EventType.GoBlockSend: _TD_STK,
    EventType.GoBlockRecv: _TD_STK,
    EventType.GoBlockSelect: _TD_STK,
    EventType.GoBlockSync: _TD_STK,
    EventType.GoBlockCond: _TD_STK,
    EventType.GoBlockNet: _TD_STK,
    EventType.GoUnblock: (_F.TIMEDIFF, _F.ARG0, _F.STACK_ID),
    EventType.GoSysCall: _TD_STK,
    EventType.GoSysExit: (_F.TIMEDIFF, _F.ARG0),
    EventType.GoSysBlock: (_F.TIMEDIFF,),
    EventType.User: _USER,
    EventType.UserStart: _USER,
    EventType.UserEnd: _USER,
}


@dataclass
class ParserState:
    """Context tracked while decoding one event stream.

    ``last_ts`` is non-decreasing across the stream; ``current_p`` starts
    at -1 (no processor yet) and goroutine context is per processor.
    """

    current_p: int = -1
    last_ts: int = 0
    next_seq: int = 0

    def __post_init__(self):
        self.current_g_per_p: dict[int, int] = {}
        self.pending_stacks: dict[int, tuple[Frame, ...]] = {}

    def goroutine(self, p: int) -> int:
        return self.current_g_per_p.get(p, 0)


# ---------------------------------------------------------------------------
# binary decode


def parse_binary(data: bytes) -> ParsedTrace:
    """Decode a binary trace; the result satisfies all ParsedTrace invariants.

    Raises :class:`BadMagic`, :class:`UnknownOpcode`,
    :class:`TruncatedRecord` or :class:`VarintOverflow`, each naming the
    byte offset of the fault.
    """
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagic(0, f"file does not start with {MAGIC!r}")
    pos = len(MAGIC)
    _version, pos = read_varint(data, pos)

    state = ParserState()
    events: list[Event] = []
    while pos < len(data):
        off = pos
        opcode = data[pos]
        pos += 1
        if opcode > 0x1F:
            raise UnknownOpcode(off, f"opcode {opcode:#04x}")
        typ = EventType(opcode)

        if typ is EventType.Stack:
            stack_id, pos = read_varint(data, pos)
            count, pos = read_varint(data, pos)
            frames = []
            for _ in range(count):
                pc, pos = read_varint(data, pos)
                fn, pos = _read_string(data, pos)
                file, pos = _read_string(data, pos)
                line, pos = read_varint(data, pos)
                frames.append(Frame(pc=pc, fn=fn, file=file, line=line))
            state.pending_stacks[stack_id] = tuple(frames)
            continue

        ts = state.last_ts
        p_self: int | None = None
        g_self: int | None = None
        stk_id = 0
        args = [0, 0, 0]
        sargs: tuple[str, ...] = ()
        for kind in WIRE_FIELDS[typ]:
            if kind is _F.MSG:
                msg, pos = _read_string(data, pos)
                sargs = (msg,) if msg else ()
                continue
            value, pos = read_varint(data, pos)
            if kind is _F.TIMEDIFF:
                ts = state.last_ts + value
                state.last_ts = ts
            elif kind is _F.TS_ABS:
                ts = value
                state.last_ts = value
            elif kind is _F.P_SELF:
                p_self = value
            elif kind is _F.G_SELF:
                g_self = value
            elif kind is _F.ARG0:
                args[0] = value
            elif kind is _F.ARG1:
                args[1] = value
            elif kind is _F.STACK_ID:
                stk_id = value

        if p_self is not None:
            state.current_p = p_self
        p = state.current_p
        if g_self is not None:
            state.current_g_per_p[p] = g_self
        g = state.goroutine(p)

        events.append(
            Event(
                typ=typ,
                off=off,
                seq=state.next_seq,
                ts=ts,
                p=p,
                g=g,
                stk_id=stk_id,
                args=(args[0], args[1], args[2]),
                sargs=sargs,
            )
        )
        state.next_seq += 1

    stacks = dict(state.pending_stacks)
    resolved = [
        ev if ev.stk_id == 0 or ev.stk_id not in stacks
        else Event(
            typ=ev.typ, off=ev.off, seq=ev.seq, ts=ev.ts, p=ev.p, g=ev.g,
            stk_id=ev.stk_id, stk=stacks[ev.stk_id], args=ev.args, sargs=ev.sargs,
        )
        for ev in events
    ]
    resolved.sort(key=Event.sort_key)
    return ParsedTrace(events=tuple(resolved), stacks=stacks)


# ---------------------------------------------------------------------------
# binary encode


def _encode_stack_record(buf: bytearray, stack_id: int, frames: tuple[Frame, ...]) -> None:
    buf.append(EventType.Stack.value)
    write_varint(buf, stack_id)
    write_varint(buf, len(frames))
    for fr in frames:
        write_varint(buf, fr.pc)
        _write_string(buf, fr.fn)
        _write_string(buf, fr.file)
        write_varint(buf, fr.line)


def encode_binary(trace: ParsedTrace) -> bytes:
    """Encode a valid trace; stack records come first, events in order.

    Context records (ProcStart/GoStart) are synthesized with a zero time
    delta whenever an event's attribution is not already established by
    the stream, so ``parse_binary(encode_binary(t)) == t`` holds for any
    trace whose own events establish their attribution.  Raises
    :class:`UnencodableTrace` if an event's timestamp precedes its
    predecessor's.
    """
    buf = bytearray()
    buf.extend(MAGIC)
    write_varint(buf, FORMAT_VERSION)

    for stack_id in sorted(trace.stacks):
        _encode_stack_record(buf, stack_id, trace.stacks[stack_id])

    state = ParserState()
    for i, ev in enumerate(trace.events):
        if ev.typ is not EventType.ProcStart and ev.ts < state.last_ts:
            raise UnencodableTrace(
                f"event {i}: timestamp {ev.ts} precedes running clock {state.last_ts}"
            )
        # Establish attribution context the decoder will reproduce.
        if ev.typ is not EventType.ProcStart:
            if ev.p >= 0 and ev.p != state.current_p:
                buf.append(EventType.ProcStart.value)
                write_varint(buf, ev.p)
                write_varint(buf, 0)
                write_varint(buf, state.last_ts)
                state.current_p = ev.p
            if ev.typ is not EventType.GoStart and ev.g != state.goroutine(state.current_p):
                buf.append(EventType.GoStart.value)
                write_varint(buf, 0)
                write_varint(buf, ev.g)
                state.current_g_per_p[state.current_p] = ev.g

        buf.append(ev.typ.value)
        for kind in WIRE_FIELDS[ev.typ]:
            if kind is _F.TIMEDIFF:
                write_varint(buf, ev.ts - state.last_ts)
                state.last_ts = ev.ts
            elif kind is _F.TS_ABS:
                write_varint(buf, ev.ts)
                state.last_ts = ev.ts
            elif kind is _F.P_SELF:
                write_varint(buf, ev.p)
            elif kind is _F.G_SELF:
                write_varint(buf, ev.g)
            elif kind is _F.ARG0:
                write_varint(buf, ev.args[0])
            elif kind is _F.ARG1:
                write_varint(buf, ev.args[1])
            elif kind is _F.STACK_ID:
                write_varint(buf, ev.stk_id)
            elif kind is _F.MSG:
                _write_string(buf, ev.sargs[0] if ev.sargs else "")
        if ev.typ is EventType.ProcStart:
            state.current_p = ev.p
        elif ev.typ is EventType.GoStart:
            state.current_g_per_p[state.current_p] = ev.g

    return bytes(buf)


# ---------------------------------------------------------------------------
# JSON


_EVENT_KEYS = ("Off", "Type", "Ts", "P", "G", "StkID", "Stk", "Args", "SArgs")


def _as_int(value: Any, index: int, key: str) -> int:
    if isinstance(value, bool):
        raise TypeMismatch(index, f"{key}: expected integer, got bool")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 10)
        except ValueError:
            raise TypeMismatch(index, f"{key}: non-decimal string {value!r}") from None
    raise TypeMismatch(index, f"{key}: expected integer, got {type(value).__name__}")


def _parse_frame(obj: Any, index: int) -> Frame:
    if not isinstance(obj, dict):
        raise TypeMismatch(index, f"frame must be an object, got {type(obj).__name__}")
    return Frame(
        pc=_as_int(obj.get("PC", 0), index, "PC"),
        fn=str(obj.get("Fn", "") or ""),
        file=str(obj.get("File", "") or ""),
        line=_as_int(obj.get("Line", 0), index, "Line"),
    )


def parse_json(text: str) -> ParsedTrace:
    """Load the JSON trace shape.

    Missing optional keys take the model defaults (P -> -1, G -> 0, the
    rest zero/empty); Link values are dropped.  Events are sorted by
    (Ts, encounter order) after load and ``seq`` reflects encounter
    order.  Raises :class:`MalformedDocument`,
    :class:`UnknownEventTypeCode` or :class:`TypeMismatch`, each naming
    the event index.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(-1, f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedDocument(-1, "top level must be an object")

    raw_stacks = doc.get("Stacks") or {}
    if not isinstance(raw_stacks, dict):
        raise MalformedDocument(-1, "Stacks must be an object")
    stacks: dict[int, tuple[Frame, ...]] = {}
    for key, frames in raw_stacks.items():
        try:
            stack_id = int(key, 10)
        except ValueError:
            raise MalformedDocument(-1, f"stack id {key!r} is not decimal") from None
        if not isinstance(frames, list):
            raise MalformedDocument(-1, f"stack {key}: frames must be an array")
        stacks[stack_id] = tuple(_parse_frame(fr, -1) for fr in frames)

    raw_events = doc.get("Events") or []
    if not isinstance(raw_events, list):
        raise MalformedDocument(-1, "Events must be an array")
    events: list[Event] = []
    for i, obj in enumerate(raw_events):
        if not isinstance(obj, dict):
            raise TypeMismatch(i, f"event must be an object, got {type(obj).__name__}")
        if "Type" not in obj:
            raise MalformedDocument(i, "event lacks Type")
        code = _as_int(obj["Type"], i, "Type")
        if not 0 <= code <= 0x1F:
            raise UnknownEventTypeCode(i, f"Type {code} outside [0, 31]")

        raw_args = obj.get("Args")
        if raw_args is None:
            args = (0, 0, 0)
        elif isinstance(raw_args, list) and len(raw_args) <= 3:
            vals = [_as_int(v, i, "Args") for v in raw_args]
            vals += [0] * (3 - len(vals))
            args = (vals[0], vals[1], vals[2])
        else:
            raise TypeMismatch(i, "Args must be an array of at most 3 integers")

        raw_sargs = obj.get("SArgs")
        if raw_sargs is None:
            sargs: tuple[str, ...] = ()
        elif isinstance(raw_sargs, list):
            sargs = tuple(str(s) for s in raw_sargs)
        else:
            raise TypeMismatch(i, "SArgs must be an array of strings")

        stk_id = _as_int(obj.get("StkID", 0), i, "StkID")
        raw_stk = obj.get("Stk")
        if raw_stk is None:
            stk = stacks.get(stk_id, ()) if stk_id else ()
        elif isinstance(raw_stk, list):
            stk = tuple(_parse_frame(fr, i) for fr in raw_stk)
        else:
            raise TypeMismatch(i, "Stk must be an array of frames")

        events.append(
            Event(
                typ=EventType(code),
                off=_as_int(obj.get("Off", 0), i, "Off"),
                seq=i,
                ts=_as_int(obj.get("Ts", 0), i, "Ts"),
                p=_as_int(obj.get("P", -1), i, "P"),
                g=_as_int(obj.get("G", 0), i, "G"),
                stk_id=stk_id,
                stk=stk,
                args=args,
                sargs=sargs,
            )
        )

    events.sort(key=Event.sort_key)
    return ParsedTrace(events=tuple(events), stacks=stacks)


def emit_json(trace: ParsedTrace, indent: int | None = None) -> str:
    """Serialize to the JSON shape with deterministic key and stack order."""
    doc = {
        "Events": [
            {
                "Off": ev.off,
                "Type": int(ev.typ),
                "Ts": ev.ts,
                "P": ev.p,
                "G": ev.g,
                "StkID": ev.stk_id,
                "Stk": [
                    {"PC": fr.pc, "Fn": fr.fn, "File": fr.file, "Line": fr.line}
                    for fr in ev.stk
                ],
                "Args": list(ev.args),
                "SArgs": list(ev.sargs),
            }
            for ev in trace.events
        ],
        "Stacks": {
            str(stack_id): [
                {"PC": fr.pc, "Fn": fr.fn, "File": fr.file, "Line": fr.line}
                for fr in trace.stacks[stack_id]
            ]
            for stack_id in sorted(trace.stacks)
        },
    }
    return json.dumps(doc, indent=indent, separators=None if indent else (",", ":"))


# ---------------------------------------------------------------------------
# file helpers


def sniff_format(data: bytes) -> str:
    """Guess 'binary' or 'json' from leading bytes."""
    return "binary" if data[: len(MAGIC)] == MAGIC else "json"


def load_trace_file(path: str, fmt: str = "auto") -> ParsedTrace:
    """Read one trace file in the given format ('auto' sniffs the magic)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if fmt == "auto":
        fmt = sniff_format(data)
    if fmt == "binary":
        return parse_binary(data)
    if fmt == "json":
        return parse_json(data.decode("utf-8"))
    raise ValueError(f"unknown trace format {fmt!r}")
