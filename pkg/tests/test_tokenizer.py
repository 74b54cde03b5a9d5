import pytest
from hypothesis import given, strategies as st

from goracle.events import Event, EventType, Frame, ParsedTrace
from goracle.synth import SynthConfig, synth_traces
from goracle.tokenizer import (
    ALL_FIELDS,
    ABLATABLE_FIELDS,
    EOT_ID,
    EOT_TOKEN,
    Field,
    PAD_ID,
    PAD_TOKEN,
    TokenSequence,
    UNK_ID,
    UNK_TOKEN,
    Vocabulary,
    build_vocab,
    encode_tokens,
    parse_field_set,
    serialize_event,
    serialize_trace,
    tokenize,
)


def test_reserved_ids():
    vocab = Vocabulary()
    assert vocab.id_of(PAD_TOKEN) == PAD_ID == 0
    assert vocab.id_of(UNK_TOKEN) == UNK_ID == 1
    assert vocab.id_of(EOT_TOKEN) == EOT_ID == 2
    for i in range(10):
        assert vocab.id_of(str(i)) == 3 + i
    assert len(vocab) == 13


def test_serialize_event_field_order_and_digits():
    ev = Event(typ=EventType.GoCreate, off=42, ts=105, p=2, g=17,
               stk_id=0, args=(80, 0, 0))
    toks = serialize_event(ev, ALL_FIELDS)
    assert toks == [
        "EvGoCreate",
        "Off", "4", "2",
        "Ts", "1", "0", "5",
        "P", "2",
        "G", "1", "7",
        "StkID", "0",
        "Args", "8", "0",
    ]


def test_negative_p_gets_neg_marker():
    ev = Event(typ=EventType.GoStart, p=-1)
    toks = serialize_event(ev, frozenset({Field.P}))
    assert toks == ["P", "neg", "1"]


def test_stack_frames_keep_fn_and_line_only():
    fr = Frame(pc=4_198_400, fn="main.worker", file="main/worker.go", line=37)
    ev = Event(typ=EventType.GoYield, stk_id=3, stk=(fr,))
    toks = serialize_event(ev, frozenset({Field.Stk}))
    assert toks == ["Fn:main.worker", "3", "7"]
    assert all("4198400" not in t and "worker.go" not in t for t in toks)


def test_args_zero_slots_skipped():
    ev = Event(typ=EventType.GoStart, args=(0, 7, 0))
    toks = serialize_event(ev, frozenset({Field.Args}))
    assert toks == ["Args", "7"]
    none = Event(typ=EventType.GoStart, args=(0, 0, 0))
    assert serialize_event(none, frozenset({Field.Args})) == []


def test_sargs_one_token_per_string():
    ev = Event(typ=EventType.User, sargs=("proj.key1",))
    assert serialize_event(ev, frozenset({Field.SArgs})) == ["proj.key1"]


def test_serialize_trace_appends_single_eot():
    trace = ParsedTrace(events=(Event(typ=EventType.GoStart),))
    toks = serialize_trace(trace, ALL_FIELDS)
    assert toks.count(EOT_TOKEN) == 1
    assert toks[-1] == EOT_TOKEN


def test_empty_field_set_rejected():
    with pytest.raises(ValueError):
        serialize_trace(ParsedTrace(), frozenset())
    with pytest.raises(ValueError):
        parse_field_set("")


def test_field_subset_serialization_is_subsequence():
    cfg = SynthConfig(num_projects=1, traces_per_project=6, seed=13)
    small = ALL_FIELDS - {Field.P}
    for trace, _, _ in synth_traces(cfg):
        big = serialize_trace(trace, ALL_FIELDS)
        sub = serialize_trace(trace, small)
        it = iter(big)
        assert all(tok in it for tok in sub)


def test_parse_field_set():
    assert parse_field_set("Type,Ts") == frozenset({Field.Type, Field.Ts})
    with pytest.raises(ValueError):
        parse_field_set("Type,Nope")


def test_ablatable_fields_are_the_seven():
    assert tuple(f.value for f in ABLATABLE_FIELDS) == (
        "Off", "Type", "Ts", "P", "G", "StkID", "Stk")


def test_build_vocab_and_unknown_maps_to_unk():
    vocab = build_vocab([["EvGoStart", "G", "4"], ["EvGoEnd"]])
    assert "EvGoStart" in vocab and "EvGoEnd" in vocab
    assert vocab.id_of("never-seen") == UNK_ID


def test_vocab_save_load_round_trip(tmp_path):
    vocab = build_vocab([["EvGoStart", "Fn:main.main", "neg"]])
    path = tmp_path / "vocab.txt"
    vocab.save(str(path))
    again = Vocabulary.load(str(path))
    assert again.tokens() == vocab.tokens()
    # line number equals id
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[PAD_ID] == PAD_TOKEN
    assert lines[vocab.id_of("Fn:main.main")] == "Fn:main.main"


def test_vocab_rejects_non_contiguous_ids():
    with pytest.raises(ValueError):
        Vocabulary(token_to_id={PAD_TOKEN: 0, UNK_TOKEN: 1, EOT_TOKEN: 5})


def test_encode_tokens_pads_to_length():
    vocab = build_vocab([["EvGoStart"]])
    seq = encode_tokens(["EvGoStart", EOT_TOKEN], vocab, 6)
    assert seq.true_len == 2
    assert len(seq.ids) == 6
    assert list(seq.ids[2:]) == [PAD_ID] * 4


def test_encode_tokens_truncates_head_kept():
    vocab = build_vocab([[str(i % 10) for i in range(20)]])
    toks = [str(i % 10) for i in range(20)]
    seq = encode_tokens(toks, vocab, 8)
    assert seq.true_len == 8
    assert [vocab.tokens()[i] for i in seq.ids] == toks[:8]


def test_token_sequence_rejects_non_pad_tail():
    with pytest.raises(ValueError):
        TokenSequence(ids=(5, PAD_ID, 5), true_len=1)


def test_tokenize_end_to_end():
    cfg = SynthConfig(num_projects=1, traces_per_project=4, seed=21)
    items = synth_traces(cfg)
    corp = [serialize_trace(t, ALL_FIELDS) for t, _, _ in items]
    vocab = build_vocab(corp)
    for (trace, _, _), toks in zip(items, corp):
        seq = tokenize(trace, vocab, ALL_FIELDS, L=2048)
        assert seq.true_len == len(toks)
        assert seq.ids[seq.true_len - 1] == EOT_ID


@given(st.lists(st.sampled_from(["EvGoStart", "G", "7", "Fn:main.main"]),
                min_size=1, max_size=30),
       st.integers(min_value=1, max_value=40))
def test_encode_tokens_shape_property(tokens, length):
    vocab = build_vocab([tokens])
    seq = encode_tokens(tokens, vocab, length)
    assert len(seq.ids) == length
    assert seq.true_len == min(len(tokens), length)
    assert all(i == PAD_ID for i in seq.ids[seq.true_len:])
    assert all(i != PAD_ID for i in seq.ids[:seq.true_len])
