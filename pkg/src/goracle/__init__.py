"""goracle: learn a pass/fail oracle from Go execution traces.

The pipeline: decode runtime traces (binary or JSON), serialize them to
token streams, and train a small transformer classifier that flags the
traces of buggy concurrent executions.  A seeded generator with
injected bug signatures provides labeled corpora for training and for
leave-one-program-out evaluation.
"""

from .checkpoint import (
    CorruptCheckpoint,
    VersionMismatch,
    load_checkpoint,
    load_checkpoint_file,
    save_checkpoint,
    save_checkpoint_file,
)
from .codec import (
    BadMagic,
    JsonTraceError,
    MalformedDocument,
    TraceFormatError,
    TruncatedRecord,
    TypeMismatch,
    UnencodableTrace,
    UnknownEventTypeCode,
    UnknownOpcode,
    VarintOverflow,
    emit_json,
    encode_binary,
    load_trace_file,
    parse_binary,
    parse_json,
    sniff_format,
)
from .corpus import (
    CorpusError,
    CorpusManifest,
    EmptyManifest,
    ManifestEntry,
    UnknownProject,
    corpus_counts,
    load_corpus,
    split_lopo,
)
from .evaluation import (
    AblationReport,
    ArmResult,
    FoldError,
    LengthMismatch,
    Metrics,
    ablation_records,
    compute_metrics,
    crossval_records,
    percent,
    render_ablation_table,
    render_crossval_table,
    run_ablation,
    run_crossval,
)
from .events import (
    BugCategory,
    Event,
    EventType,
    Frame,
    ParsedTrace,
    TraceLabel,
    Verdict,
    Violation,
    validate_label,
    validate_trace,
)
from .network import (
    DimensionMismatch,
    EmptyDataset,
    ModelConfig,
    ModelParams,
    TrainConfig,
    forward,
    init_model,
    loss_and_grad,
    predict,
    predict_many,
    train,
)
from .signatures import (
    ALL_SIGNATURES,
    SignatureHit,
    expected_verdict,
    find_double_creates,
    find_race_windows,
    find_unmatched_blocks,
    scan_signatures,
)
from .synth import SynthConfig, synth_generate, synth_traces, verify_corpus
from .tokenizer import (
    ABLATABLE_FIELDS,
    ALL_FIELDS,
    EOT_ID,
    PAD_ID,
    UNK_ID,
    Field,
    FieldSet,
    TokenSequence,
    Vocabulary,
    build_vocab,
    encode_tokens,
    parse_field_set,
    serialize_event,
    serialize_trace,
    tokenize,
)

__version__ = "0.1.0"
