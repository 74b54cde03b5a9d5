"""Labeled-corpus management: manifests, loading, project splits.

A corpus is described by a ``.manifest.jsonl`` file: one JSON record per
line with fields path, format, verdict, project, category, cause,
subcause, bug_id.  Paths are stored relative to the manifest's own
directory so a corpus tree can be moved wholesale.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .codec import load_trace_file
from .events import (
    BugCategory,
    ParsedTrace,
    TraceLabel,
    Verdict,
    validate_label,
    validate_trace,
)

MANIFEST_SUFFIX = ".manifest.jsonl"

_RECORD_FIELDS = ("path", "format", "verdict", "project",
                  "category", "cause", "subcause", "bug_id")


class EmptyManifest(Exception):
    pass


class UnknownProject(Exception):
    pass


class CorpusError(Exception):
    """A manifest entry whose file is missing, unparseable, or invalid."""


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    format: str  # "binary" | "json"
    label: TraceLabel

    def __post_init__(self):
        if self.format not in ("binary", "json"):
            raise ValueError(f"format must be binary or json, got {self.format!r}")
        problems = validate_label(self.label)
        if problems:
            raise ValueError(f"{self.path}: {problems[0]}")

    def to_record(self) -> dict:
        lb = self.label
        return {
            "path": self.path,
            "format": self.format,
            "verdict": lb.verdict.name,
            "project": lb.project,
            "category": lb.category.name if lb.category else None,
            "cause": lb.cause,
            "subcause": lb.subcause,
            "bug_id": lb.bug_id,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ManifestEntry":
        unknown = set(rec) - set(_RECORD_FIELDS)
        if unknown:
            raise ValueError(f"unknown manifest fields: {sorted(unknown)}")
        label = TraceLabel(
            verdict=Verdict[rec["verdict"]],
            project=rec["project"],
            category=BugCategory[rec["category"]] if rec.get("category") else None,
            cause=rec.get("cause"),
            subcause=rec.get("subcause"),
            bug_id=rec.get("bug_id"),
        )
        return cls(path=rec["path"], format=rec["format"], label=label)


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    base_dir: str = "."

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ValueError(f"duplicate manifest path {e.path!r}")
            seen.add(e.path)

    def projects(self) -> list[str]:
        out: list[str] = []
        for e in self.entries:
            if e.label.project not in out:
                out.append(e.label.project)
        return out

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str) -> "CorpusManifest":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entries.append(ManifestEntry.from_record(json.loads(line)))
                except (ValueError, KeyError) as exc:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from None
        return cls(entries=entries, base_dir=os.path.dirname(os.path.abspath(path)))


def load_corpus(manifest: CorpusManifest) -> list[tuple[ParsedTrace, TraceLabel]]:
    """Parse and validate every manifest entry.

    Raises EmptyManifest for a corpus of zero entries and CorpusError
    (naming the entry path) when a file is missing, fails to parse, or
    violates trace invariants.
    """
    if not manifest.entries:
        raise EmptyManifest("manifest has no entries")
    corpus: list[tuple[ParsedTrace, TraceLabel]] = []
    for entry in manifest.entries:
        full = os.path.join(manifest.base_dir, entry.path)
        try:
            trace = load_trace_file(full, fmt=entry.format)
        except OSError as exc:
            raise CorpusError(f"{entry.path}: cannot read: {exc}") from None
        except Exception as exc:
            raise CorpusError(f"{entry.path}: parse failed: {exc}") from exc
        violations = validate_trace(trace)
        if violations:
            raise CorpusError(
                f"{entry.path}: {len(violations)} invariant violation(s), "
                f"first: {violations[0].invariant}: {violations[0].detail}"
            )
        corpus.append((trace, entry.label))
    return corpus


def corpus_counts(corpus: list[tuple[ParsedTrace, TraceLabel]]) -> dict[str, tuple[int, int]]:
    """Per-project (passing, failing) counts, insertion-ordered."""
    counts: dict[str, list[int]] = {}
    for _, label in corpus:
        slot = counts.setdefault(label.project, [0, 0])
        slot[0 if label.verdict is Verdict.Pass else 1] += 1
    return {k: (v[0], v[1]) for k, v in counts.items()}


def split_lopo(corpus: list[tuple[ParsedTrace, TraceLabel]],
               held_out_project: str):
    """Leave-one-program-out: test = the held-out project, train = the rest."""
    projects = {label.project for _, label in corpus}
    if held_out_project not in projects:
        raise UnknownProject(
            f"{held_out_project!r} not in corpus (have {sorted(projects)})"
        )
    train = [(t, lb) for t, lb in corpus if lb.project != held_out_project]
    test = [(t, lb) for t, lb in corpus if lb.project == held_out_project]
    return train, test
