"""Seeded synthetic trace generator with injected bug signatures.

Each failing trace carries at least one structural signature from
``signatures``; each passing trace carries none.  Projects get their own
seeded profile (processor/goroutine id ranges, timing scales, event
budgets, function-name pools) so cross-project drift is present the way
it is between real subject programs.

Plant-label-in-P mode builds pass/fail twins that are token-identical
except for processor-id digits: the failing twin interleaves its user
events A-B-A on one processor (a RaceWindow), the passing twin puts the
middle third on a second processor.  The verdict is then a pure
function of field P, which is exactly what a field-ablation study needs
as ground truth.  Twin traces avoid the two sentinel processor digits in
every other numeric field so no other token correlates with the label.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import signatures
from .codec import emit_json, encode_binary, parse_binary, parse_json
from .events import (
    BugCategory,
    Event,
    EventType,
    Frame,
    ParsedTrace,
    TraceLabel,
    Verdict,
    validate_trace,
)

# Plant mode sentinels: the failing twin keeps every event on FAIL_P;
# the passing twin moves its middle third to PASS_P.
PLANT_FAIL_P = 3
PLANT_PASS_P = 7
_PLANT_FORBIDDEN_DIGITS = {str(PLANT_FAIL_P), str(PLANT_PASS_P)}

_BLOCK_CHOICES = (
    EventType.GoBlock, EventType.GoBlockSend, EventType.GoBlockRecv,
    EventType.GoBlockSelect, EventType.GoBlockSync, EventType.GoBlockCond,
    EventType.GoBlockNet,
)
# Benign filler events; none participate in any signature.
_WORK_CHOICES = (
    EventType.GCStart, EventType.GCDone, EventType.GoYield,
    EventType.GoPreempt, EventType.GoSleep, EventType.GCSweepStart,
    EventType.GCSweepDone, EventType.GoSysCall,
)
_STACKED = {
    EventType.GCStart, EventType.GCSweepStart, EventType.GoYield,
    EventType.GoPreempt, EventType.GoSleep, EventType.GoSysCall,
}

# Runtime and stdlib frames shared by every project's stacks.
_SHARED_FNS = (
    ("runtime.main", "runtime/proc.go"),
    ("runtime.gopark", "runtime/proc.go"),
    ("runtime.chansend1", "runtime/chan.go"),
    ("runtime.chanrecv2", "runtime/chan.go"),
    ("runtime.selectgo", "runtime/select.go"),
    ("sync.(*Mutex).Lock", "sync/mutex.go"),
    ("sync.(*WaitGroup).Wait", "sync/waitgroup.go"),
    ("net/http.(*conn).serve", "net/http/server.go"),
)


@dataclass(frozen=True)
class SynthConfig:
    num_projects: int = 4
    traces_per_project: int = 60
    pass_fraction: float = 0.5
    events_min: int = 6
    events_max: int = 12
    bug_mix: dict[str, float] = field(default_factory=lambda: {
        signatures.UNMATCHED_BLOCK: 1.0,
        signatures.DOUBLE_CREATE: 1.0,
        signatures.RACE_WINDOW: 1.0,
    })
    seed: int = 0
    plant_label_in_p: bool = False
    formats: tuple[str, ...] = ("binary", "json")

    def __post_init__(self):
        if self.num_projects < 1 or self.traces_per_project < 1:
            raise ValueError("num_projects and traces_per_project must be >= 1")
        if not 0.0 <= self.pass_fraction <= 1.0:
            raise ValueError("pass_fraction must be in [0, 1]")
        if not 1 <= self.events_min <= self.events_max:
            raise ValueError("need 1 <= events_min <= events_max")
        unknown = set(self.bug_mix) - set(signatures.ALL_SIGNATURES)
        if unknown:
            raise ValueError(f"unknown signatures in bug_mix: {sorted(unknown)}")
        if not self.bug_mix or sum(self.bug_mix.values()) <= 0:
            raise ValueError("bug_mix weights must sum to a positive value")
        if set(self.formats) - {"binary", "json"}:
            raise ValueError("formats must be drawn from binary/json")


@dataclass
class _Profile:
    """Per-project drift knobs, all derived from the project's seed."""

    name: str
    p_base: int
    g_base: int
    ts_lo: int
    ts_hi: int
    dt_lo: int
    dt_hi: int
    ev_min: int
    ev_max: int
    pc_base: int
    functions: list[tuple[str, str]]


class _Builder:
    """Event-list builder mirroring the wire format's context machine.

    Because attribution here follows exactly the ProcStart/GoStart rules
    the binary decoder applies, encode_binary never needs to synthesize
    context records and parse(encode(t)) reproduces t field for field.
    """

    def __init__(self):
        self.events: list[Event] = []
        self.stacks: dict[int, tuple[Frame, ...]] = {}
        self.current_p = -1
        self.current_g: dict[int, int] = {}
        self.clock = 0

    def add_stack(self, frames: tuple[Frame, ...]) -> int:
        stack_id = len(self.stacks) + 1
        self.stacks[stack_id] = frames
        return stack_id

    def _append(self, typ: EventType, stk_id: int = 0,
                args: tuple[int, int, int] = (0, 0, 0),
                sargs: tuple[str, ...] = ()) -> None:
        p = self.current_p
        self.events.append(Event(
            typ=typ, seq=len(self.events), ts=self.clock, p=p,
            g=self.current_g.get(p, 0), stk_id=stk_id,
            stk=self.stacks.get(stk_id, ()) if stk_id else (),
            args=args, sargs=sargs,
        ))

    def proc_start(self, p: int, dt: int, machine_id: int = 0) -> None:
        self.clock += dt
        self.current_p = p
        self._append(EventType.ProcStart, args=(machine_id, 0, 0))

    def go_start(self, gid: int, dt: int) -> None:
        self.clock += dt
        self.current_g[self.current_p] = gid
        self._append(EventType.GoStart)

    def emit(self, typ: EventType, dt: int, stk_id: int = 0,
             args: tuple[int, int, int] = (0, 0, 0),
             sargs: tuple[str, ...] = ()) -> None:
        self.clock += dt
        self._append(typ, stk_id=stk_id, args=args, sargs=sargs)

    def build(self) -> ParsedTrace:
        return ParsedTrace(events=tuple(self.events), stacks=dict(self.stacks))


def _project_profile(cfg: SynthConfig, index: int) -> _Profile:
    name = f"proj-{index:02d}"
    rng = np.random.default_rng(np.random.SeedSequence(
        [cfg.seed, zlib.crc32(name.encode("utf-8"))]
    ))
    shift = int(rng.integers(0, 4))
    dt_lo = int(rng.integers(1, 20))
    # Stack frames mix project-local functions with runtime and stdlib
    # frames every Go binary shares, the way real traces do.
    local = [(f"{name}.worker", f"{name}/worker.go"),
             (f"{name}.handler", f"{name}/handler.go")]
    shared = [_SHARED_FNS[i] for i in rng.permutation(len(_SHARED_FNS))[:4]]
    return _Profile(
        name=name,
        p_base=int(rng.integers(0, 6)),
        g_base=int(rng.integers(2, 9)) * 10,
        ts_lo=int(rng.integers(1_000, 5_000)),
        ts_hi=int(rng.integers(5_000, 9_000)),
        dt_lo=dt_lo,
        dt_hi=dt_lo + int(rng.integers(5, 40)),
        ev_min=cfg.events_min + shift,
        ev_max=cfg.events_max + shift,
        pc_base=int(rng.integers(4_000_000, 5_000_000)),
        functions=local + shared,
    )


def _trace_rng(cfg: SynthConfig, project: str, index: int):
    return np.random.default_rng(np.random.SeedSequence(
        [cfg.seed, zlib.crc32(project.encode("utf-8")), index]
    ))


def _pick_fn(rng, prof: _Profile) -> tuple[str, str]:
    # Most frames are runtime/stdlib ones shared by every project, the
    # way real stacks are; project-local frames appear now and then.
    if rng.random() < 0.25:
        return prof.functions[int(rng.integers(0, len(prof.functions)))]
    return _SHARED_FNS[int(rng.integers(0, len(_SHARED_FNS)))]


def _make_stacks(b: _Builder, rng, prof: _Profile, count: int) -> list[int]:
    ids = []
    for _ in range(count):
        depth = int(rng.integers(1, 3))
        frames = []
        for _ in range(depth):
            fn, file = _pick_fn(rng, prof)
            frames.append(Frame(
                pc=prof.pc_base + int(rng.integers(0, 10_000)),
                fn=fn,
                file=file,
                line=int(rng.integers(10, 400)),
            ))
        ids.append(b.add_stack(tuple(frames)))
    return ids


def _blocking_stack(b: _Builder, rng, prof: _Profile) -> int:
    """A stack for a blocking event, topped by the runtime park frame."""
    blocked_in, file = _SHARED_FNS[int(rng.integers(2, 7))]
    frames = (
        Frame(pc=prof.pc_base + int(rng.integers(0, 10_000)),
              fn="runtime.gopark", file="runtime/proc.go",
              line=int(rng.integers(10, 400))),
        Frame(pc=prof.pc_base + int(rng.integers(0, 10_000)),
              fn=blocked_in, file=file,
              line=int(rng.integers(10, 400))),
    )
    return b.add_stack(frames)


def _dt(rng, prof: _Profile) -> int:
    return int(rng.integers(prof.dt_lo, prof.dt_hi + 1))


def _build_signature_trace(rng, prof: _Profile, verdict: Verdict,
                           bug: str | None) -> ParsedTrace:
    b = _Builder()
    stacks = _make_stacks(b, rng, prof, int(rng.integers(1, 4)))
    budget = int(rng.integers(prof.ev_min, prof.ev_max + 1))

    want_workers = 2 if bug == signatures.RACE_WINDOW else 1
    workers = max(want_workers, min(3, budget // 5))
    gids = [prof.g_base + i for i in range(workers)]

    # The mandatory skeleton (proc start, creates, one start/end pair
    # per worker, the injected signature) is emitted regardless; every
    # optional event draws down what is left of the budget so small
    # events_min/events_max settings give genuinely small traces.
    skeleton = 1 + 3 * workers
    if bug == signatures.DOUBLE_CREATE:
        skeleton += 1
    elif bug == signatures.RACE_WINDOW:
        skeleton += 6
    extra = max(0, budget - skeleton)

    b.proc_start(prof.p_base, dt=int(rng.integers(prof.ts_lo, prof.ts_hi)))
    if extra > 0 and rng.random() < 0.3:
        b.emit(EventType.Gomaxprocs, dt=_dt(rng, prof), args=(workers + 1, 0, 0))
        extra -= 1
    for gid in gids:
        pc = prof.pc_base + int(rng.integers(0, 10_000))
        b.emit(EventType.GoCreate, dt=_dt(rng, prof),
               stk_id=stacks[int(rng.integers(0, len(stacks)))],
               args=(gid, pc, 0))
    if bug == signatures.DOUBLE_CREATE:
        pc = prof.pc_base + int(rng.integers(0, 10_000))
        b.emit(EventType.GoCreate, dt=_dt(rng, prof),
               stk_id=stacks[int(rng.integers(0, len(stacks)))],
               args=(gids[0], pc, 0))

    # Injected signatures go at the head of the trace so they survive
    # head-kept truncation at small sequence lengths.
    if bug == signatures.RACE_WINDOW:
        key = f"{prof.name}.key{int(rng.integers(0, 5))}"
        ga, gb = gids[0], gids[1]
        for gid in (ga, gb, ga):
            b.go_start(gid, dt=_dt(rng, prof))
            b.emit(EventType.User, dt=_dt(rng, prof), sargs=(key,))

    blocked_worker = 0 if bug == signatures.UNMATCHED_BLOCK else -1
    for w, gid in enumerate(gids):
        b.go_start(gid, dt=_dt(rng, prof))
        if w == blocked_worker:
            block = _BLOCK_CHOICES[int(rng.integers(0, len(_BLOCK_CHOICES)))]
            b.emit(block, dt=_dt(rng, prof), stk_id=_blocking_stack(b, rng, prof))
            continue
        n_work = int(rng.integers(0, min(extra, 3) + 1)) if extra > 0 else 0
        for _ in range(n_work):
            typ = _WORK_CHOICES[int(rng.integers(0, len(_WORK_CHOICES)))]
            if typ is EventType.GoSysCall and extra < 2:
                typ = EventType.GoYield
            stk = stacks[int(rng.integers(0, len(stacks)))] if typ in _STACKED else 0
            b.emit(typ, dt=_dt(rng, prof), stk_id=stk)
            extra -= 1
            if typ is EventType.GoSysCall:
                b.emit(EventType.GoSysExit, dt=_dt(rng, prof), args=(gid, 0, 0))
                extra -= 1
            if extra <= 0:
                break
        b.emit(EventType.GoEnd, dt=_dt(rng, prof))

    if extra > 0 and rng.random() < 0.5:
        b.emit(EventType.ProcStop, dt=_dt(rng, prof))
    trace = b.build()
    assert verdict is (Verdict.Fail if bug else Verdict.Pass)
    return trace


def _plant_number(rng, lo: int, hi: int) -> int:
    """A number in [lo, hi] whose decimal digits avoid the plant sentinels."""
    for _ in range(64):
        val = int(rng.integers(lo, hi + 1))
        if not (_PLANT_FORBIDDEN_DIGITS & set(str(val))):
            return val
    # Dense forbidden stretches exist (e.g. 30..39); fall back to a
    # digit-wise build of the right magnitude.
    digits = "012456889"
    width = len(str(lo))
    first = "124568"
    out = first[int(rng.integers(0, len(first)))]
    out += "".join(digits[int(rng.integers(0, len(digits)))] for _ in range(width - 1))
    return int(out)


def _advance_clock(rng, clock: int) -> int:
    """Next timestamp after ``clock`` with no plant-sentinel digits.

    Twin traces share the resulting absolute timestamps, and keeping
    sentinel digits out of Ts means the only sentinel tokens anywhere
    come from field P itself.
    """
    c = clock + int(rng.integers(2, 10))
    while _PLANT_FORBIDDEN_DIGITS & set(str(c)):
        c += 1
    return c


def _build_plant_pair(rng, prof: _Profile) -> tuple[ParsedTrace, ParsedTrace]:
    """Token-identical twins except for P digits; fail twin has the race."""
    ga = _plant_number(rng, 10, 99)
    gb = ga + 1
    while _PLANT_FORBIDDEN_DIGITS & set(str(gb)):
        gb += 1
    key = f"shared.key{_plant_number(rng, 0, 2)}"
    clock = _plant_number(rng, 1_000, 9_000)
    ts_seq = [clock]
    for _ in range(12):
        clock = _advance_clock(rng, clock)
        ts_seq.append(clock)
    pcs = [_plant_number(rng, 400_000, 900_000) for _ in range(2)]

    def build(middle_p: int) -> ParsedTrace:
        b = _Builder()
        at = iter(ts_seq)

        def dt() -> int:
            return next(at) - b.clock

        b.proc_start(PLANT_FAIL_P, dt=dt())
        b.emit(EventType.GoCreate, dt=dt(), args=(ga, pcs[0], 0))
        b.emit(EventType.GoCreate, dt=dt(), args=(gb, pcs[1], 0))
        b.go_start(ga, dt=dt())
        b.emit(EventType.User, dt=dt(), sargs=(key,))
        b.proc_start(middle_p, dt=dt())
        b.go_start(gb, dt=dt())
        b.emit(EventType.User, dt=dt(), sargs=(key,))
        b.proc_start(PLANT_FAIL_P, dt=dt())
        b.go_start(ga, dt=dt())
        b.emit(EventType.User, dt=dt(), sargs=(key,))
        b.emit(EventType.GoEnd, dt=dt())
        b.emit(EventType.ProcStop, dt=dt())
        trace = b.build()
        # A ProcStart inherits the incoming processor's goroutine
        # context, which differs between the twins (a fresh processor
        # starts at g=0).  These corpora are emitted as JSON, where G is
        # explicit, so pin ProcStart rows to g=0 in both twins and keep
        # every non-P token identical.
        events = tuple(
            replace(ev, g=0) if ev.typ is EventType.ProcStart else ev
            for ev in trace.events
        )
        return ParsedTrace(events=events, stacks=trace.stacks)

    fail_trace = build(PLANT_FAIL_P)
    pass_trace = build(PLANT_PASS_P)
    return pass_trace, fail_trace


def _canonical(trace: ParsedTrace, fmt: str) -> ParsedTrace:
    """Round the trace through its output codec so offsets and sequence
    numbers match what a consumer re-parsing the file will see."""
    if fmt == "binary":
        return parse_binary(encode_binary(trace))
    return parse_json(emit_json(trace))


def _pick_bug(rng, mix: dict[str, float]) -> str:
    names = [s for s in signatures.ALL_SIGNATURES if mix.get(s, 0) > 0]
    weights = np.array([mix[s] for s in names], dtype=np.float64)
    weights /= weights.sum()
    return names[int(rng.choice(len(names), p=weights))]


_BUG_CATEGORY = {
    signatures.UNMATCHED_BLOCK: BugCategory.Blocking,
    signatures.DOUBLE_CREATE: BugCategory.NonBlocking,
    signatures.RACE_WINDOW: BugCategory.NonBlocking,
}
_BUG_SUBCAUSE = {
    signatures.UNMATCHED_BLOCK: "goroutine leak",
    signatures.DOUBLE_CREATE: "lifecycle misuse",
    signatures.RACE_WINDOW: "data race",
}


def synth_traces(cfg: SynthConfig) -> list[tuple[ParsedTrace, TraceLabel, str]]:
    """Generate the corpus in memory: (trace, label, format) triples.

    Traces come back canonicalized through their output format, so
    writing and re-parsing them reproduces them field for field.
    """
    out: list[tuple[ParsedTrace, TraceLabel, str]] = []
    for pi in range(cfg.num_projects):
        prof = _project_profile(cfg, pi)
        n = cfg.traces_per_project
        n_pass = int(round(n * cfg.pass_fraction))
        verdicts = [Verdict.Pass] * n_pass + [Verdict.Fail] * (n - n_pass)

        if cfg.plant_label_in_p:
            pairs: list[ParsedTrace] = []
            for i in range(max(n_pass, n - n_pass)):
                rng = _trace_rng(cfg, prof.name, i)
                pairs.extend(_build_plant_pair(rng, prof))
            pass_pool = [t for i, t in enumerate(pairs) if i % 2 == 0]
            fail_pool = [t for i, t in enumerate(pairs) if i % 2 == 1]
            for i, verdict in enumerate(verdicts):
                trace = (pass_pool if verdict is Verdict.Pass else fail_pool).pop(0)
                label = _label_for(prof.name, verdict,
                                   signatures.RACE_WINDOW if verdict is Verdict.Fail else None,
                                   i)
                out.append((_canonical(trace, "json"), label, "json"))
            continue

        for i, verdict in enumerate(verdicts):
            rng = _trace_rng(cfg, prof.name, i)
            bug = _pick_bug(rng, cfg.bug_mix) if verdict is Verdict.Fail else None
            trace = _build_signature_trace(rng, prof, verdict, bug)
            fmt = cfg.formats[i % len(cfg.formats)]
            # Canonicalize through the binary codec regardless of the
            # output format: off then equals the wire offset, so both
            # codec round-trips reproduce the trace exactly.
            out.append((_canonical(trace, "binary"), _label_for(prof.name, verdict, bug, i), fmt))
    return out


def _label_for(project: str, verdict: Verdict, bug: str | None, index: int) -> TraceLabel:
    if verdict is Verdict.Pass:
        return TraceLabel(verdict=Verdict.Pass, project=project)
    return TraceLabel(
        verdict=Verdict.Fail, project=project, category=_BUG_CATEGORY[bug],
        cause=bug, subcause=_BUG_SUBCAUSE[bug], bug_id=f"{project}-{bug}-{index:03d}",
    )


def synth_generate(cfg: SynthConfig, out_dir: str):
    """Write the generated corpus under out_dir and return its manifest.

    Layout: one subdirectory per project, one trace file per entry
    (.gotrace or .trace.json), plus corpus.manifest.jsonl at the root.
    Identical configs produce byte-identical trees.
    """
    import os

    from .codec import BINARY_EXTENSION, JSON_EXTENSION
    from .corpus import MANIFEST_SUFFIX, CorpusManifest, ManifestEntry

    entries: list[ManifestEntry] = []
    os.makedirs(out_dir, exist_ok=True)
    per_project_index: dict[str, int] = {}
    for trace, label, fmt in synth_traces(cfg):
        project_dir = os.path.join(out_dir, label.project)
        os.makedirs(project_dir, exist_ok=True)
        idx = per_project_index.get(label.project, 0)
        per_project_index[label.project] = idx + 1
        ext = BINARY_EXTENSION if fmt == "binary" else JSON_EXTENSION
        rel = os.path.join(label.project, f"{label.verdict.name.lower()}_{idx:03d}{ext}")
        full = os.path.join(out_dir, rel)
        if fmt == "binary":
            with open(full, "wb") as fh:
                fh.write(encode_binary(trace))
        else:
            with open(full, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(emit_json(trace) + "\n")
        entries.append(ManifestEntry(path=rel, format=fmt, label=label))

    manifest = CorpusManifest(entries=entries, base_dir=os.path.abspath(out_dir))
    manifest.save(os.path.join(out_dir, "corpus" + MANIFEST_SUFFIX))
    return manifest


def verify_corpus(corpus: list[tuple[ParsedTrace, TraceLabel, str]]) -> None:
    """Assert generator invariants; raises AssertionError on violation."""
    for trace, label, _ in corpus:
        violations = validate_trace(trace)
        if violations:
            raise AssertionError(f"invalid trace for {label.bug_id or label.project}: "
                                 f"{violations[0]}")
        got = signatures.expected_verdict(trace)
        if got is not label.verdict:
            raise AssertionError(
                f"label mismatch for {label.bug_id or label.project}: "
                f"labeled {label.verdict.name}, checker says {got.name}"
            )
