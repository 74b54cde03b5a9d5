import pytest
from hypothesis import given, strategies as st

from goracle.events import (
    BLOCK_EVENT_TYPES,
    BugCategory,
    Event,
    EventType,
    Frame,
    ParsedTrace,
    TraceLabel,
    Verdict,
    validate_label,
    validate_trace,
)


def test_event_type_covers_all_32_opcodes():
    assert len(EventType) == 32
    assert min(EventType) == 0 and max(EventType) == 0x1F
    assert EventType.ProcStart == 0x00
    assert EventType.UserEnd == 0x1F


def test_block_event_types_exclude_syscall_block():
    assert EventType.GoSysBlock not in BLOCK_EVENT_TYPES
    assert EventType.GoBlock in BLOCK_EVENT_TYPES
    assert len(BLOCK_EVENT_TYPES) == 7


def test_empty_trace_is_valid():
    assert validate_trace(ParsedTrace()) == []


def _mk(typ=EventType.GoStart, **kw):
    return Event(typ=typ, **kw)


def test_valid_small_trace():
    frames = (Frame(pc=1, fn="main.main", file="main.go", line=10),)
    trace = ParsedTrace(
        events=(
            _mk(EventType.ProcStart, ts=5, seq=0, p=0),
            _mk(EventType.GoStart, ts=6, seq=1, p=0, g=1),
            _mk(EventType.GoYield, ts=6, seq=2, p=0, g=1, stk_id=3, stk=frames),
        ),
        stacks={3: frames},
    )
    assert validate_trace(trace) == []


def test_unsorted_trace_reports_violation():
    trace = ParsedTrace(events=(
        _mk(ts=10, seq=0),
        _mk(ts=5, seq=1),
    ))
    violations = validate_trace(trace)
    assert any(v.invariant == "unsorted" for v in violations)


def test_equal_ts_ordered_by_seq():
    trace = ParsedTrace(events=(
        _mk(ts=5, seq=1),
        _mk(ts=5, seq=0),
    ))
    assert any(v.invariant == "unsorted" for v in validate_trace(trace))
    trace = ParsedTrace(events=(
        _mk(ts=5, seq=0),
        _mk(ts=5, seq=1),
    ))
    assert validate_trace(trace) == []


def test_dangling_stack_id():
    trace = ParsedTrace(events=(_mk(stk_id=9),))
    violations = validate_trace(trace)
    assert [v.invariant for v in violations] == ["dangling stack id"]
    assert violations[0].index == 0


def test_stack_must_match_table():
    frames = (Frame(pc=1, fn="a", file="a.go", line=1),)
    other = (Frame(pc=2, fn="b", file="b.go", line=2),)
    trace = ParsedTrace(events=(_mk(stk_id=1, stk=other),), stacks={1: frames})
    assert any(v.invariant == "stack differs from stack table entry"
               for v in validate_trace(trace))


def test_negative_fields_each_get_a_violation():
    trace = ParsedTrace(events=(
        Event(typ=EventType.GoStart, off=-1, seq=-1, ts=-1, p=-2, g=-1,
              stk_id=-1),
    ))
    names = {v.invariant for v in validate_trace(trace)}
    assert {"negative offset", "negative seq", "negative timestamp",
            "processor id below -1", "negative goroutine id",
            "negative stack id"} <= names


def test_p_minus_one_is_legal():
    assert validate_trace(ParsedTrace(events=(_mk(p=-1),))) == []


def test_args_must_have_three_slots():
    ev = Event(typ=EventType.GoStart, args=(1, 2))
    assert any(v.invariant == "args must have exactly 3 slots"
               for v in validate_trace(ParsedTrace(events=(ev,))))


def test_link_bounds():
    bad_self = ParsedTrace(events=(_mk(link=0),))
    assert any(v.invariant == "self-referencing link"
               for v in validate_trace(bad_self))
    bad_range = ParsedTrace(events=(_mk(link=5),))
    assert any(v.invariant == "link out of range"
               for v in validate_trace(bad_range))
    ok = ParsedTrace(events=(_mk(ts=1, seq=0, link=1), _mk(ts=2, seq=1)))
    assert validate_trace(ok) == []


def test_validation_is_pure():
    trace = ParsedTrace(events=(_mk(stk_id=9), _mk(ts=-1)))
    assert validate_trace(trace) == validate_trace(trace)


def test_label_pass_cannot_carry_bug_details():
    bad = TraceLabel(verdict=Verdict.Pass, project="p",
                     category=BugCategory.Blocking)
    assert validate_label(bad)
    good = TraceLabel(verdict=Verdict.Pass, project="p")
    assert validate_label(good) == []


def test_label_project_required():
    assert validate_label(TraceLabel(verdict=Verdict.Fail, project=""))


@given(st.integers(min_value=0, max_value=1 << 40),
       st.integers(min_value=0, max_value=1 << 20))
def test_sort_key_orders_by_ts_then_seq(ts, seq):
    a = _mk(ts=ts, seq=seq)
    b = _mk(ts=ts + 1, seq=0)
    assert a.sort_key() < b.sort_key()
    c = _mk(ts=ts, seq=seq + 1)
    assert a.sort_key() < c.sort_key()
