"""Command-line surface for the trace-classification pipeline.

Exit codes are part of the contract: 0 success, 1 parse or I/O failure,
2 validation failure, 3 partial failure (some inputs processed), 64
usage error (bad flags or arguments).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import signatures
from .checkpoint import load_checkpoint_file, save_checkpoint_file
from .codec import (
    JsonTraceError,
    TraceFormatError,
    UnencodableTrace,
    emit_json,
    encode_binary,
    load_trace_file,
)
from .corpus import (
    MANIFEST_SUFFIX,
    CorpusError,
    CorpusManifest,
    EmptyManifest,
    UnknownProject,
    corpus_counts,
    load_corpus,
)
from .evaluation import (
    FoldError,
    ablation_records,
    crossval_records,
    render_ablation_table,
    render_crossval_table,
    run_ablation,
    run_crossval,
)
from .events import Verdict, validate_trace
from .network import (
    EmptyDataset,
    ModelConfig,
    TrainConfig,
    init_model,
    predict,
    train,
)
from .synth import SynthConfig, synth_generate
from .tokenizer import (
    ABLATABLE_FIELDS,
    ALL_FIELDS,
    Field,
    build_vocab,
    parse_field_set,
    serialize_trace,
    tokenize,
)

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_VALIDATION = 2
EXIT_PARTIAL = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    """argparse with the usage exit code pinned to 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _default_seed() -> int:
    raw = os.environ.get("GORACLE_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        print(f"warning: ignoring non-integer GORACLE_SEED={raw!r}",
              file=sys.stderr)
        return 0


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=_default_seed(),
                   help="base RNG seed (default from GORACLE_SEED or 0)")
    p.add_argument("--steps", type=int, default=2500)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seq-len", type=int, default=2048)
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--fields", type=parse_field_set, default=None,
                   help="comma-separated serialization fields (default all)")


def _configs(args) -> tuple[ModelConfig, TrainConfig]:
    """Build model/train configs, mapping bad flag values to exit 64."""
    try:
        mcfg = ModelConfig(
            vocab_size=1,
            seq_len=args.seq_len,
            embed_dim=args.embed_dim,
            num_layers=args.layers,
            num_heads=args.heads,
        )
        tcfg = TrainConfig(
            steps=args.steps,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            seed=args.seed,
        )
    except ValueError as exc:
        print(f"goracle: error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE) from None
    return mcfg, tcfg


def _fields(args):
    return args.fields if args.fields else ALL_FIELDS


def _load_manifest_corpus(path: str):
    manifest = CorpusManifest.load(path)
    return load_corpus(manifest)


def cmd_parse(args) -> int:
    try:
        trace = load_trace_file(args.input, args.format)
    except (TraceFormatError, JsonTraceError, OSError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.validate:
        violations = validate_trace(trace)
        if violations:
            for v in violations:
                print(f"event {v.index}: {v.invariant}: {v.detail}",
                      file=sys.stderr)
            print(f"{len(violations)} violation(s)", file=sys.stderr)
            return EXIT_VALIDATION
    print(emit_json(trace, indent=2))
    return EXIT_OK


def cmd_convert(args) -> int:
    try:
        trace = load_trace_file(args.input, args.format)
        if args.to == "json":
            payload = emit_json(trace, indent=2).encode("utf-8") + b"\n"
        else:
            payload = encode_binary(trace)
    except (TraceFormatError, JsonTraceError, UnencodableTrace, OSError) as exc:
        print(f"convert error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        with open(args.output, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        print(f"convert error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    return EXIT_OK


def cmd_synth(args) -> int:
    bug_mix = None
    if args.bugs:
        names = [b.strip() for b in args.bugs.split(",") if b.strip()]
        bug_mix = {name: 1.0 for name in names}
    try:
        kwargs = dict(
            num_projects=args.projects,
            traces_per_project=args.traces_per_project,
            pass_fraction=args.pass_fraction,
            events_min=args.events_min,
            events_max=args.events_max,
            seed=args.seed,
            plant_label_in_p=args.plant_label_in_p,
            formats=tuple(args.formats.split(",")),
        )
        if bug_mix is not None:
            kwargs["bug_mix"] = bug_mix
        cfg = SynthConfig(**kwargs)
    except ValueError as exc:
        print(f"goracle: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        synth_generate(cfg, args.out)
    except OSError as exc:
        print(f"synth error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    print(os.path.join(args.out, "corpus" + MANIFEST_SUFFIX))
    return EXIT_OK


def cmd_train(args) -> int:
    fields = _fields(args)
    mcfg, tcfg = _configs(args)
    try:
        corpus = _load_manifest_corpus(args.manifest)
    except (CorpusError, EmptyManifest, OSError) as exc:
        print(f"train error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    vocab = build_vocab([serialize_trace(t, fields) for t, _ in corpus])
    cfg = replace(mcfg, vocab_size=len(vocab))
    data = [
        (tokenize(t, vocab, fields, L=cfg.seq_len),
         0 if lab.verdict is Verdict.Pass else 1)
        for t, lab in corpus
    ]
    field_names = ",".join(f.value for f in Field if f in fields)
    print(f"train: steps={tcfg.steps} batch={tcfg.batch_size} "
          f"lr={tcfg.learning_rate} seq-len={cfg.seq_len} "
          f"embed-dim={cfg.embed_dim} layers={cfg.num_layers} "
          f"heads={cfg.num_heads} seed={tcfg.seed} vocab={len(vocab)} "
          f"traces={len(data)} fields={field_names}")
    params = init_model(cfg, np.random.default_rng(tcfg.seed))
    try:
        params, _ = train(params, cfg, data, tcfg, log_every=1)
    except (EmptyDataset, FloatingPointError) as exc:
        print(f"train error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    save_checkpoint_file(args.out, params, cfg, vocab, fields)
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def cmd_classify(args) -> int:
    try:
        params, cfg, vocab, fields = load_checkpoint_file(args.checkpoint)
    except Exception as exc:
        print(f"classify error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    failures = 0
    for path in args.traces:
        try:
            trace = load_trace_file(path)
            seq = tokenize(trace, vocab, fields, L=cfg.seq_len)
            verdict, (_, p_fail) = predict(params, cfg, seq)
        except (TraceFormatError, JsonTraceError, OSError) as exc:
            print(f"{path} error {exc}", file=sys.stderr)
            failures += 1
            continue
        print(f"{path} {verdict.value} {p_fail:.4f}")
    return EXIT_PARTIAL if failures else EXIT_OK


def _write_reports(out_dir: str, stem: str, table: str, records: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, stem + ".txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    with open(os.path.join(out_dir, stem + ".jsonl"), "w", encoding="utf-8") as fh:
        fh.write(records)


def cmd_crossval(args) -> int:
    fields = _fields(args)
    mcfg, tcfg = _configs(args)
    try:
        corpus = _load_manifest_corpus(args.manifest)
        results = run_crossval(
            corpus, mcfg, tcfg, fields=fields,
            hold_out=args.hold_out or None, jobs=args.jobs,
            progress=lambda k: print(f"fold {k} done", file=sys.stderr),
        )
    except (CorpusError, EmptyManifest, UnknownProject, FoldError,
            OSError) as exc:
        print(f"crossval error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    table = render_crossval_table(results)
    _write_reports(args.out, "crossval", table, crossval_records(results))
    print(table, end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    mcfg, tcfg = _configs(args)
    fields_to_ablate = None
    if args.fields_to_ablate:
        off_limits = [f.value for f in args.fields_to_ablate
                      if f not in ABLATABLE_FIELDS]
        if off_limits:
            print(f"goracle: error: fields not ablatable: {off_limits}",
                  file=sys.stderr)
            return EXIT_USAGE
        fields_to_ablate = sorted(args.fields_to_ablate,
                                  key=lambda f: list(Field).index(f))
    try:
        corpus = _load_manifest_corpus(args.manifest)
        report = run_ablation(
            corpus, mcfg, tcfg,
            split_seed=args.split_seed, ablate=fields_to_ablate,
            jobs=args.jobs,
            progress=lambda k: print(f"arm {k} done", file=sys.stderr),
        )
    except (CorpusError, EmptyManifest, OSError) as exc:
        print(f"ablate error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (FoldError, ValueError) as exc:
        print(f"ablate error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    table = render_ablation_table(report)
    _write_reports(args.out, "ablation", table, ablation_records(report))
    print(table, end="")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = args.input
    if path.endswith(MANIFEST_SUFFIX):
        try:
            manifest = CorpusManifest.load(path)
            corpus = load_corpus(manifest)
        except (CorpusError, EmptyManifest, OSError) as exc:
            print(f"inspect error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        print(f"corpus: {len(corpus)} traces, "
              f"{len(corpus_counts(corpus))} projects")
        for project, (n_pass, n_fail) in corpus_counts(corpus).items():
            print(f"  {project}: {n_pass} passing, {n_fail} failing")
        return EXIT_OK
    if path.endswith(".ckpt"):
        try:
            params, cfg, vocab, fields = load_checkpoint_file(path)
        except Exception as exc:
            print(f"inspect error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        n_params = sum(int(np.prod(params[n].shape)) for n in params.names())
        field_names = ",".join(f.value for f in Field if f in fields)
        print(f"checkpoint: vocab={len(vocab)} tensors={len(params.names())} "
              f"parameters={n_params}")
        print(f"  config: seq-len={cfg.seq_len} embed-dim={cfg.embed_dim} "
              f"layers={cfg.num_layers} heads={cfg.num_heads}")
        print(f"  fields: {field_names}")
        return EXIT_OK
    try:
        trace = load_trace_file(path)
    except (TraceFormatError, JsonTraceError, OSError) as exc:
        print(f"inspect error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    procs = sorted({ev.p for ev in trace.events})
    gs = sorted({ev.g for ev in trace.events})
    span = (trace.events[-1].ts - trace.events[0].ts) if trace.events else 0
    violations = validate_trace(trace)
    print(f"trace: {len(trace.events)} events, {len(trace.stacks)} stacks, "
          f"{len(procs)} procs, {len(gs)} goroutines, span {span}")
    hits = signatures.scan_signatures(trace)
    for hit in hits:
        print(f"  signature {hit.signature}: events {list(hit.indices)} "
              f"({hit.detail})")
    if not hits:
        print("  no bug signatures")
    if violations:
        for v in violations:
            print(f"  violation at event {v.index}: {v.invariant}")
        return EXIT_VALIDATION
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="goracle",
                     description="Classify execution traces as passing "
                                 "or failing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="decode a trace and print it as JSON")
    p.add_argument("input")
    p.add_argument("--format", choices=("auto", "binary", "json"),
                   default="auto")
    p.add_argument("--validate", action="store_true",
                   help="also check trace invariants")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("convert", help="convert a trace between formats")
    p.add_argument("input")
    p.add_argument("--format", choices=("auto", "binary", "json"),
                   default="auto")
    p.add_argument("--to", choices=("binary", "json"), required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--projects", type=int, default=4)
    p.add_argument("--traces-per-project", type=int, default=60)
    p.add_argument("--pass-fraction", type=float, default=0.5)
    p.add_argument("--events-min", type=int, default=6)
    p.add_argument("--events-max", type=int, default=12)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--bugs", type=str, default=None,
                   help="comma-separated signature names to inject")
    p.add_argument("--plant-label-in-p", action="store_true")
    p.add_argument("--formats", type=str, default="binary,json")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a classifier on a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="classify trace files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("traces", nargs="+")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("crossval",
                       help="leave-one-program-out cross-validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hold-out", action="append", default=None,
                   help="run only these folds (repeatable)")
    p.add_argument("--jobs", type=int, default=1)
    _add_model_flags(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("ablate", help="single-field ablation study")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--fields-to-ablate", type=parse_field_set, default=None)
    p.add_argument("--jobs", type=int, default=1)
    _add_model_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect",
                       help="summarize a trace, manifest, or checkpoint")
    p.add_argument("input")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        # argparse --help exits 0; _Parser.error and _configs exit 64
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
