"""Structural concurrency-bug signatures over parsed traces.

Three patterns, checked by direct scans over the event list:

* UnmatchedBlock: a GoBlock* event whose goroutine is never unblocked
  later (no subsequent GoUnblock carrying that goroutine id).  A stuck
  goroutine; the blocking-bug shape.
* DoubleCreate: two GoCreate events announcing the same new goroutine
  id.  A nonsensical lifecycle; the misuse shape.
* RaceWindow: three user events on one processor with identical string
  payloads whose goroutines interleave A, B, A.  Two goroutines taking
  turns on the same datum; the data-race shape.

This module is deliberately independent of the synthetic generator: it
is the oracle the generator's labels are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

from .events import (
    BLOCK_EVENT_TYPES,
    USER_EVENT_TYPES,
    EventType,
    ParsedTrace,
    Verdict,
)

UNMATCHED_BLOCK = "UnmatchedBlock"
DOUBLE_CREATE = "DoubleCreate"
RACE_WINDOW = "RaceWindow"

ALL_SIGNATURES = (UNMATCHED_BLOCK, DOUBLE_CREATE, RACE_WINDOW)


@dataclass(frozen=True)
class SignatureHit:
    signature: str
    indices: tuple[int, ...]
    detail: str


def find_unmatched_blocks(trace: ParsedTrace) -> list[SignatureHit]:
    hits = []
    events = trace.events
    for i, ev in enumerate(events):
        if ev.typ not in BLOCK_EVENT_TYPES:
            continue
        matched = any(
            later.typ is EventType.GoUnblock and later.args[0] == ev.g
            for later in events[i + 1 :]
        )
        if not matched:
            hits.append(SignatureHit(
                UNMATCHED_BLOCK, (i,),
                f"goroutine {ev.g} blocks at index {i} ({ev.typ.name}) and is never unblocked",
            ))
    return hits


def find_double_creates(trace: ParsedTrace) -> list[SignatureHit]:
    first_create: dict[int, int] = {}
    hits = []
    for i, ev in enumerate(trace.events):
        if ev.typ is not EventType.GoCreate:
            continue
        gid = ev.args[0]
        if gid in first_create:
            hits.append(SignatureHit(
                DOUBLE_CREATE, (first_create[gid], i),
                f"goroutine {gid} created twice (indices {first_create[gid]} and {i})",
            ))
        else:
            first_create[gid] = i
    return hits


def find_race_windows(trace: ParsedTrace) -> list[SignatureHit]:
    # Group user events by (processor, payload); scan each group for an
    # A-B-A goroutine interleaving in trace order.
    groups: dict[tuple[int, tuple[str, ...]], list[tuple[int, int]]] = {}
    for i, ev in enumerate(trace.events):
        if ev.typ in USER_EVENT_TYPES and ev.sargs:
            groups.setdefault((ev.p, ev.sargs), []).append((i, ev.g))

    hits = []
    for (p, sargs), entries in groups.items():
        n = len(entries)
        found = None
        for a in range(n):
            if found:
                break
            for b in range(a + 1, n):
                if entries[b][1] == entries[a][1]:
                    continue
                for c in range(b + 1, n):
                    if entries[c][1] == entries[a][1]:
                        found = (entries[a], entries[b], entries[c])
                        break
                if found:
                    break
        if found:
            (ia, ga), (ib, gb), (ic, _) = found
            hits.append(SignatureHit(
                RACE_WINDOW, (ia, ib, ic),
                f"goroutines {ga} and {gb} interleave on p={p} over payload {sargs!r}",
            ))
    return hits


def scan_signatures(trace: ParsedTrace) -> list[SignatureHit]:
    """All signature hits, in a fixed order."""
    return (
        find_unmatched_blocks(trace)
        + find_double_creates(trace)
        + find_race_windows(trace)
    )


def expected_verdict(trace: ParsedTrace) -> Verdict:
    """Pass when no signature is present, Fail otherwise."""
    if find_unmatched_blocks(trace) or find_double_creates(trace) or find_race_windows(trace):
        return Verdict.Fail
    return Verdict.Pass
