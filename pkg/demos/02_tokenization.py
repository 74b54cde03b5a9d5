"""From a parsed trace to the fixed-length id sequence a model consumes.

Shows raw-token serialization, field masking, vocabulary construction,
unknown-token handling, and padding/truncation.

Run: python3 demos/02_tokenization.py
"""

from goracle import (
    ALL_FIELDS,
    Event,
    EventType,
    PAD_ID,
    ParsedTrace,
    SynthConfig,
    UNK_ID,
    build_vocab,
    parse_field_set,
    serialize_trace,
    synth_traces,
    tokenize,
)

corpus = [t for t, _, _ in synth_traces(
    SynthConfig(num_projects=2, traces_per_project=4, seed=3,
                events_min=3, events_max=6)
)]
trace = corpus[0]

# Every event serializes to keyword tokens and single-digit tokens in a
# fixed field order; numbers are split digit by digit.
raw = serialize_trace(trace, ALL_FIELDS)
print(f"serialized: {len(raw)} raw tokens; first event's slice:")
print(" ", " ".join(raw[:24]))
print()

# Dropping fields shrinks the serialization; the remaining tokens keep
# their relative order.  This is the mechanism behind ablation studies.
no_ts = serialize_trace(trace, parse_field_set("Off,Type,P,G,StkID,Stk"))
print(f"without Ts: {len(no_ts)} tokens ({len(raw) - len(no_ts)} fewer)")
it = iter(raw)
assert all(tok in it for tok in no_ts), "subset serialization reordered"
print("field-subset serialization is a subsequence of the full one")
print()

# The vocabulary is fit on training serializations only.
vocab = build_vocab([serialize_trace(t, ALL_FIELDS) for t in corpus[:6]])
print(f"vocabulary: {len(vocab)} tokens "
      f"(reserved: PAD={PAD_ID} UNK={UNK_ID} EOT=2, digits 3..12)")

# Tokens the vocabulary never saw map to UNK instead of crashing.
# GoStop never occurs in this corpus, so its name token is unknown.
unseen = ParsedTrace(events=(
    Event(typ=EventType.ProcStart, ts=1, p=0, g=0),
    Event(typ=EventType.GoStop, ts=2, p=0, g=1),
))
seq = tokenize(unseen, vocab, ALL_FIELDS, L=64)
n_unk = sum(1 for i in seq.ids[: seq.true_len] if i == UNK_ID)
print(f"trace with a GoStop event: {seq.true_len} real tokens, "
      f"{n_unk} map to UNK")
assert n_unk >= 1

# Fixed length L: short traces pad, long ones keep their head.
short = tokenize(trace, vocab, ALL_FIELDS, L=512)
print(f"L=512: true_len={short.true_len}, "
      f"{512 - short.true_len} PAD entries")
clipped = tokenize(trace, vocab, ALL_FIELDS, L=32)
print(f"L=32: true_len={clipped.true_len}, head kept, tail truncated")
assert clipped.ids == short.ids[:32]
