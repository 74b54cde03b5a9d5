"""Build a trace, write it in both formats, and read it back.

Shows the event model, the two codecs, and what the validator and the
error types report when a file is damaged.

Run: python3 demos/01_trace_roundtrip.py
"""

from goracle import (
    BadMagic,
    EventType,
    SynthConfig,
    emit_json,
    encode_binary,
    parse_binary,
    parse_json,
    synth_traces,
    validate_trace,
)

# Generate one small labeled trace instead of hand-assembling events;
# the generator guarantees every trace invariant holds.
trace, label, _ = synth_traces(
    SynthConfig(num_projects=1, traces_per_project=1, seed=7,
                events_min=4, events_max=8)
)[0]

print(f"project {label.project}, verdict {label.verdict.value}")
print(f"{len(trace.events)} events, {len(trace.stacks)} stacks")
for ev in trace.events[:6]:
    print(f"  ts={ev.ts:<6} p={ev.p} g={ev.g:<3} {ev.typ.name}")
print()

# Binary round-trip: compact wire format with varint-encoded fields.
blob = encode_binary(trace)
print(f"binary encoding: {len(blob)} bytes, magic {blob[:7]!r}")
assert parse_binary(blob) == trace
print("parse_binary(encode_binary(trace)) == trace")

# JSON round-trip: the interchange format the CLI prints.
doc = emit_json(trace)
print(f"json encoding: {len(doc)} characters")
assert parse_json(doc) == trace
print("parse_json(emit_json(trace)) == trace")
print()

# The validator returns violations instead of raising.
violations = validate_trace(trace)
print(f"validate_trace: {len(violations)} violations")

# Damaged input produces a typed error carrying the byte offset.
try:
    parse_binary(b"nottrace" + blob[8:])
except BadMagic as exc:
    print(f"damaged file rejected: {exc}")

# Event types are the 32 opcodes of the wire format.
print(f"\nEventType has {len(EventType)} opcodes, e.g. "
      f"{EventType.GoCreate.name}=0x{EventType.GoCreate.value:02x}, "
      f"{EventType.GoBlockRecv.name}=0x{EventType.GoBlockRecv.value:02x}")
