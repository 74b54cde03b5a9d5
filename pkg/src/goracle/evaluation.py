"""Metrics, leave-one-program-out cross-validation, field ablation.

Failing traces are the positive class.  Rates live as exact Fractions
(or None where a class is empty) and become rounded whole percents only
in the rendering helpers, so report numbers never accumulate float
error and "n/a" can never be confused with a true zero.
"""

from __future__ import annotations

import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .corpus import corpus_counts, split_lopo
from .events import ParsedTrace, TraceLabel, Verdict
from .network import (
    ModelConfig,
    ModelParams,
    TrainConfig,
    init_model,
    predict_many,
    train,
)
from .tokenizer import (
    ABLATABLE_FIELDS,
    ALL_FIELDS,
    Field,
    FieldSet,
    Vocabulary,
    build_vocab,
    serialize_trace,
    tokenize,
)

Corpus = Sequence[tuple[ParsedTrace, TraceLabel]]


class LengthMismatch(Exception):
    pass


class FoldError(Exception):
    """A cross-validation fold failed; the message names the fold."""


@dataclass(frozen=True)
class Metrics:
    """Confusion counts with exact derived rates (Fail = positive)."""

    tp: int
    fn: int
    tn: int
    fp: int

    def __post_init__(self):
        for name in ("tp", "fn", "tn", "fp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def tpr(self) -> Fraction | None:
        return Fraction(self.tp, self.tp + self.fn) if self.tp + self.fn else None

    @property
    def tnr(self) -> Fraction | None:
        return Fraction(self.tn, self.tn + self.fp) if self.tn + self.fp else None

    @property
    def total(self) -> Fraction | None:
        n = self.tp + self.fn + self.tn + self.fp
        return Fraction(self.tp + self.tn, n) if n else None


def percent(rate: Fraction | None) -> int | None:
    """Whole-percent rendering, round half up; None stays None."""
    if rate is None:
        return None
    return math.floor(rate * 100 + Fraction(1, 2))


def _show(rate: Fraction | None) -> str:
    p = percent(rate)
    return "n/a" if p is None else f"{p}%"


def compute_metrics(predictions: Sequence[Verdict],
                    labels: Sequence[Verdict]) -> Metrics:
    if len(predictions) != len(labels):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(labels)} labels"
        )
    if not labels:
        raise LengthMismatch("empty prediction/label lists")
    tp = fn = tn = fp = 0
    for pred, lab in zip(predictions, labels):
        if lab is Verdict.Fail:
            if pred is Verdict.Fail:
                tp += 1
            else:
                fn += 1
        else:
            if pred is Verdict.Pass:
                tn += 1
            else:
                fp += 1
    return Metrics(tp=tp, fn=fn, tn=tn, fp=fp)


def _fold_seeds(base_seed: int, key: str) -> tuple[np.random.SeedSequence, int]:
    """Deterministic (init seed sequence, train seed) for one fold/arm.

    Keyed by name rather than position so corpus order and --jobs never
    change which seeds a fold gets.
    """
    ss = np.random.SeedSequence([base_seed, zlib.crc32(key.encode("utf-8"))])
    init_ss, train_ss = ss.spawn(2)
    train_seed = int(train_ss.generate_state(1)[0])
    return init_ss, train_seed


def _fit_and_eval(job: tuple) -> tuple[str, Metrics]:
    """Train one model and evaluate it; module-level so jobs can pickle it."""
    key, seed_key, train_items, test_items, model_cfg, train_cfg, fields = job
    try:
        vocab = build_vocab([serialize_trace(t, fields) for t, _ in train_items])
        cfg = replace(model_cfg, vocab_size=len(vocab))
        seq_train = [
            (tokenize(t, vocab, fields, L=cfg.seq_len),
             0 if lab.verdict is Verdict.Pass else 1)
            for t, lab in train_items
        ]
        init_ss, train_seed = _fold_seeds(train_cfg.seed, seed_key)
        params = init_model(cfg, np.random.default_rng(init_ss))
        params, _ = train(params, cfg, seq_train,
                          replace(train_cfg, seed=train_seed))
        seq_test = [tokenize(t, vocab, fields, L=cfg.seq_len)
                    for t, _ in test_items]
        preds = [v for v, _ in predict_many(params, cfg, seq_test)]
        metrics = compute_metrics(preds, [lab.verdict for _, lab in test_items])
    except Exception as exc:
        raise FoldError(f"fold {key!r} failed: {exc}") from exc
    return key, metrics


def _run_jobs(jobs: list[tuple], jobs_n: int,
              progress: Callable[[str], None] | None) -> dict[str, Metrics]:
    results: dict[str, Metrics] = {}
    if jobs_n <= 1:
        for job in jobs:
            key, metrics = _fit_and_eval(job)
            results[key] = metrics
            if progress:
                progress(key)
    else:
        with ProcessPoolExecutor(max_workers=jobs_n) as pool:
            for key, metrics in pool.map(_fit_and_eval, jobs):
                results[key] = metrics
                if progress:
                    progress(key)
    # Join in the order jobs were issued so reports are stable.
    return {job[0]: results[job[0]] for job in jobs}


def run_crossval(
    corpus: Corpus,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    fields: FieldSet = ALL_FIELDS,
    hold_out: Sequence[str] | None = None,
    jobs: int = 1,
    progress: Callable[[str], None] | None = None,
) -> dict[str, Metrics]:
    """Leave-one-program-out cross-validation, one fold per project.

    Every fold trains a freshly initialized model on the other projects
    with a vocabulary built from its train split alone, so held-out
    tokens unseen in training map to UNK.
    """
    projects = list(corpus_counts(corpus))
    if len(projects) < 2:
        raise FoldError("cross-validation needs at least 2 projects")
    folds = list(hold_out) if hold_out is not None else projects
    jobs_list = []
    for project in folds:
        train_items, test_items = split_lopo(list(corpus), project)
        jobs_list.append(
            (project, project, train_items, test_items, model_cfg, train_cfg,
             fields)
        )
    return _run_jobs(jobs_list, jobs, progress)


@dataclass(frozen=True)
class ArmResult:
    """One ablation arm: its metrics plus percentage-point deltas."""

    metrics: Metrics
    delta_tpr: Fraction | None
    delta_tnr: Fraction | None
    delta_total: Fraction | None


@dataclass(frozen=True)
class AblationReport:
    baseline: Metrics
    per_field: dict[str, ArmResult]
    n_train: int
    n_test: int
    n_pass: int
    n_fail: int

    def __post_init__(self):
        allowed = {f.value for f in ABLATABLE_FIELDS}
        extra = set(self.per_field) - allowed
        if extra:
            raise ValueError(f"unexpected ablation arms: {sorted(extra)}")


def _delta(arm: Fraction | None, base: Fraction | None) -> Fraction | None:
    if arm is None or base is None:
        return None
    return (arm - base) * 100


def run_ablation(
    corpus: Corpus,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    split_seed: int = 0,
    ablate: Sequence[Field] | None = None,
    jobs: int = 1,
    progress: Callable[[str], None] | None = None,
) -> AblationReport:
    """Baseline plus seven single-field-removal arms on one fixed split.

    All arms share the same 80/20 split and the same init/train seeds;
    only the field set (and therefore the vocabulary) varies.  Passing
    ``ablate`` restricts the arms to a subset of the seven fields.
    """
    items = list(corpus)
    if len(items) < 2:
        raise ValueError("ablation needs at least 2 traces")
    to_ablate = tuple(ablate) if ablate is not None else ABLATABLE_FIELDS
    bad = [f.value for f in to_ablate if f not in ABLATABLE_FIELDS]
    if bad:
        raise ValueError(f"fields not ablatable: {bad}")
    rng = np.random.default_rng(np.random.SeedSequence([split_seed]))
    order = rng.permutation(len(items))
    n_test = max(1, round(0.2 * len(items)))
    test_idx = set(int(i) for i in order[:n_test])
    train_items = [items[i] for i in range(len(items)) if i not in test_idx]
    test_items = [items[i] for i in range(len(items)) if i in test_idx]

    arms: list[tuple[str, FieldSet]] = [("baseline", ALL_FIELDS)]
    arms += [(f.value, ALL_FIELDS - {f}) for f in to_ablate]
    # Every arm trains from the same init and batch order; only the
    # field set (and therefore the vocabulary) differs between arms.
    jobs_list = [
        (name, "ablation", train_items, test_items, model_cfg, train_cfg,
         fields)
        for name, fields in arms
    ]
    results = _run_jobs(jobs_list, jobs, progress)

    base = results["baseline"]
    per_field = {
        name: ArmResult(
            metrics=m,
            delta_tpr=_delta(m.tpr, base.tpr),
            delta_tnr=_delta(m.tnr, base.tnr),
            delta_total=_delta(m.total, base.total),
        )
        for name, m in results.items()
        if name != "baseline"
    }
    n_fail = sum(1 for _, lab in items if lab.verdict is Verdict.Fail)
    return AblationReport(
        baseline=base,
        per_field=per_field,
        n_train=len(train_items),
        n_test=len(test_items),
        n_pass=len(items) - n_fail,
        n_fail=n_fail,
    )


def _record(key_name: str, key: str, m: Metrics) -> str:
    rec = {
        key_name: key,
        "tp": m.tp,
        "fn": m.fn,
        "tn": m.tn,
        "fp": m.fp,
        "tpr": None if m.tpr is None else float(m.tpr),
        "tnr": None if m.tnr is None else float(m.tnr),
        "total": None if m.total is None else float(m.total),
    }
    return json.dumps(rec, sort_keys=True)


def crossval_records(results: dict[str, Metrics]) -> str:
    """Machine-readable report: one JSON object per fold, newline-ended."""
    return "".join(_record("fold", k, m) + "\n" for k, m in results.items())


def render_crossval_table(results: dict[str, Metrics]) -> str:
    lines = [f"{'fold':<12} {'tp':>4} {'fn':>4} {'tn':>4} {'fp':>4} "
             f"{'tpr':>5} {'tnr':>5} {'total':>6}"]
    for name, m in results.items():
        lines.append(
            f"{name:<12} {m.tp:>4} {m.fn:>4} {m.tn:>4} {m.fp:>4} "
            f"{_show(m.tpr):>5} {_show(m.tnr):>5} {_show(m.total):>6}"
        )
    return "\n".join(lines) + "\n"


def _show_delta(d: Fraction | None) -> str:
    if d is None:
        return "n/a"
    return f"{math.floor(d + Fraction(1, 2)):+d}"


def ablation_records(report: AblationReport) -> str:
    """Machine-readable report: baseline row then one row per arm."""
    out = [_record("field", "baseline", report.baseline)]
    for name, arm in report.per_field.items():
        rec = json.loads(_record("field", name, arm.metrics))
        rec["delta_tpr"] = None if arm.delta_tpr is None else float(arm.delta_tpr)
        rec["delta_tnr"] = None if arm.delta_tnr is None else float(arm.delta_tnr)
        rec["delta_total"] = (None if arm.delta_total is None
                              else float(arm.delta_total))
        out.append(json.dumps(rec, sort_keys=True))
    return "".join(line + "\n" for line in out)


def render_ablation_table(report: AblationReport) -> str:
    head = (f"corpus: {report.n_pass} passing / {report.n_fail} failing; "
            f"split {report.n_train} train / {report.n_test} test\n")
    lines = [head.rstrip("\n"),
             f"{'arm':<10} {'tp':>4} {'fn':>4} {'tn':>4} {'fp':>4} "
             f"{'tpr':>5} {'tnr':>5} {'total':>6} "
             f"{'dTPR':>5} {'dTNR':>5} {'dTot':>5}"]
    b = report.baseline
    lines.append(
        f"{'baseline':<10} {b.tp:>4} {b.fn:>4} {b.tn:>4} {b.fp:>4} "
        f"{_show(b.tpr):>5} {_show(b.tnr):>5} {_show(b.total):>6} "
        f"{'':>5} {'':>5} {'':>5}"
    )
    for name, arm in report.per_field.items():
        m = arm.metrics
        lines.append(
            f"{'-' + name:<10} {m.tp:>4} {m.fn:>4} {m.tn:>4} {m.fp:>4} "
            f"{_show(m.tpr):>5} {_show(m.tnr):>5} {_show(m.total):>6} "
            f"{_show_delta(arm.delta_tpr):>5} {_show_delta(arm.delta_tnr):>5} "
            f"{_show_delta(arm.delta_total):>5}"
        )
    return "\n".join(lines) + "\n"
