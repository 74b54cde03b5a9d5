"""Trace serialization into flat token streams and integer sequences.

A trace becomes, per event: the event-type name ("Ev" + symbolic name),
then per included scalar field a keyword token followed by the value's
decimal digits as individual tokens.  Stack frames keep only the
function name (one "Fn:"-prefixed token) and the line number digits;
file paths and PCs are pruned as run-specific noise.  Args contributes
only non-zero slots, SArgs each string as a single keyword token.  One
end-of-trace token closes the stream.

Numbers are tokenized digit by digit so the vocabulary stays small: a
handful of reserved tokens, ten digits, and one keyword per distinct
string in the corpus dictionary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .events import Event, ParsedTrace

PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"
EOT_TOKEN = "<EOT>"

PAD_ID = 0
UNK_ID = 1
EOT_ID = 2

_DIGITS = "0123456789"
_DIGIT_BASE_ID = 3  # "0".."9" occupy ids 3..12
NUM_RESERVED = _DIGIT_BASE_ID + len(_DIGITS)


class Field(enum.Enum):
    """The nine serializable event fields."""

    Off = "Off"
    Type = "Type"
    Ts = "Ts"
    P = "P"
    G = "G"
    StkID = "StkID"
    Stk = "Stk"
    Args = "Args"
    SArgs = "SArgs"


FieldSet = frozenset[Field]

ALL_FIELDS: FieldSet = frozenset(Field)
# The seven fields the ablation study may remove; Args/SArgs are
# serialized but stay fixed.
ABLATABLE_FIELDS: tuple[Field, ...] = (
    Field.Off, Field.Type, Field.Ts, Field.P, Field.G, Field.StkID, Field.Stk,
)


def parse_field_set(spec: str) -> FieldSet:
    """Parse a comma-separated field list, e.g. "Type,Ts,G"."""
    names = [part.strip() for part in spec.split(",") if part.strip()]
    try:
        fields = frozenset(Field(name) for name in names)
    except ValueError as exc:
        raise ValueError(f"unknown field in {spec!r}: {exc}") from None
    if not fields:
        raise ValueError("field set cannot be empty")
    return fields


def _digits(value: int) -> list[str]:
    return list(str(value))


def _scalar(out: list[str], keyword: str, value: int) -> None:
    out.append(keyword)
    if value < 0:
        # Digit tokenization has no sign; mark negatives explicitly.
        out.append("neg")
        out.extend(_digits(-value))
    else:
        out.extend(_digits(value))


def serialize_event(ev: Event, fields: FieldSet) -> list[str]:
    out: list[str] = []
    if Field.Type in fields:
        out.append(f"Ev{ev.typ.name}")
    if Field.Off in fields:
        _scalar(out, "Off", ev.off)
    if Field.Ts in fields:
        _scalar(out, "Ts", ev.ts)
    if Field.P in fields:
        _scalar(out, "P", ev.p)
    if Field.G in fields:
        _scalar(out, "G", ev.g)
    if Field.StkID in fields:
        _scalar(out, "StkID", ev.stk_id)
    if Field.Stk in fields:
        for fr in ev.stk:
            out.append(f"Fn:{fr.fn}")
            out.extend(_digits(fr.line) if fr.line >= 0 else ["neg", *_digits(-fr.line)])
    if Field.Args in fields:
        for slot in ev.args:
            if slot:
                _scalar(out, "Args", slot)
    if Field.SArgs in fields:
        out.extend(ev.sargs)
    return out


def serialize_trace(trace: ParsedTrace, fields: FieldSet = ALL_FIELDS) -> list[str]:
    """Flatten a trace to raw string tokens, ending with the EOT token.

    Excluded fields contribute no tokens, so serialization under a
    smaller field set is a subsequence of serialization under a larger
    one.
    """
    if not fields:
        raise ValueError("field set cannot be empty")
    out: list[str] = []
    for ev in trace.events:
        out.extend(serialize_event(ev, fields))
    out.append(EOT_TOKEN)
    return out


@dataclass
class Vocabulary:
    """Injective token -> contiguous id mapping with fixed reserved ids."""

    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID, EOT_TOKEN: EOT_ID}
            for i, d in enumerate(_DIGITS):
                self.token_to_id[d] = _DIGIT_BASE_ID + i
        self._check()

    def _check(self) -> None:
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise ValueError("vocabulary ids must be contiguous from 0")
        for tok, want in ((PAD_TOKEN, PAD_ID), (UNK_TOKEN, UNK_ID), (EOT_TOKEN, EOT_ID)):
            if self.token_to_id.get(tok) != want:
                raise ValueError(f"reserved token {tok} must have id {want}")

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def add(self, token: str) -> int:
        existing = self.token_to_id.get(token)
        if existing is not None:
            return existing
        new_id = len(self.token_to_id)
        self.token_to_id[token] = new_id
        return new_id

    def tokens(self) -> list[str]:
        """All tokens in id order."""
        by_id = sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        return [tok for tok, _ in by_id]

    def save(self, path: str) -> None:
        # Line-oriented: line number = id.  Tokens never contain newlines.
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in self.tokens():
                if "\n" in tok:
                    raise ValueError(f"token {tok!r} contains a newline")
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8", newline="\n") as fh:
            tokens = [line[:-1] if line.endswith("\n") else line for line in fh]
        return cls(token_to_id={tok: i for i, tok in enumerate(tokens)})


def build_vocab(corpus: list[list[str]]) -> Vocabulary:
    """Reserved tokens first, then distinct keywords in first-seen order."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    vocab = Vocabulary()
    for raw_tokens in corpus:
        for tok in raw_tokens:
            vocab.add(tok)
    return vocab


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length id sequence; entries beyond true_len are PAD."""

    ids: tuple[int, ...]
    true_len: int

    def __post_init__(self):
        if not 0 <= self.true_len <= len(self.ids):
            raise ValueError("true_len out of range")
        if any(v != PAD_ID for v in self.ids[self.true_len :]):
            raise ValueError("entries beyond true_len must be PAD")


def encode_tokens(raw_tokens: list[str], vocab: Vocabulary, L: int) -> TokenSequence:
    """Map raw tokens to ids, keep the head if over L, right-pad to L."""
    if L < 1:
        raise ValueError("L must be >= 1")
    ids = [vocab.id_of(tok) for tok in raw_tokens[:L]]
    true_len = len(ids)
    ids.extend([PAD_ID] * (L - true_len))
    return TokenSequence(ids=tuple(ids), true_len=true_len)


def tokenize(
    trace: ParsedTrace,
    vocab: Vocabulary,
    fields: FieldSet = ALL_FIELDS,
    L: int = 2048,
) -> TokenSequence:
    return encode_tokens(serialize_trace(trace, fields), vocab, L)
