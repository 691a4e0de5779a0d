"""Bug-report ingestion, severity mapping and stratified partitioning."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from bugsev.errors import (
    DegenerateError,
    RowError,
    SchemaError,
    StratificationError,
    UnmappedLabelError,
)
from bugsev.seeding import rng_for


class Severity(IntEnum):
    LOW = 0
    HIGH = 1


EXCLUDED = "EXCLUDED"

DEFAULT_POLICY: dict[str, str] = {
    "blocker": "HIGH",
    "critical": "HIGH",
    "major": "HIGH",
    "normal": "LOW",
    "minor": "LOW",
    "trivial": "LOW",
    "enhancement": EXCLUDED,
}

# logical field -> CSV header
DEFAULT_SCHEMA: dict[str, str] = {
    "project": "Project",
    "bug_id": "Bug_ID",
    "resolution_status": "Resolution_Status",
    "short_description": "Short_Description",
    "bug_type": "Bug_Type",
    "priority_label": "Priority_Label",
    "raw_severity": "Severity_Label",
}


@dataclass(frozen=True)
class BugReport:
    project: str
    bug_id: int
    resolution_status: str
    short_description: str
    bug_type: str | None
    priority_label: str | None
    raw_severity: str
    numeric: Mapping[str, float | None] = field(default_factory=dict)

    def to_record(self, label: Severity | None = None) -> dict:
        rec = {
            DEFAULT_SCHEMA[name]: getattr(self, name) for name in DEFAULT_SCHEMA
        }
        if self.numeric:
            rec["numeric"] = dict(self.numeric)
        if label is not None:
            rec["label"] = label.name
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "BugReport":
        return cls(
            project=rec.get("Project") or "",
            bug_id=int(rec["Bug_ID"]),
            resolution_status=rec.get("Resolution_Status") or "",
            short_description=rec.get("Short_Description") or "",
            bug_type=rec.get("Bug_Type") or None,
            priority_label=rec.get("Priority_Label") or None,
            raw_severity=rec.get("Severity_Label") or "",
            numeric=dict(rec.get("numeric") or {}),
        )


@dataclass(frozen=True)
class Corpus:
    reports: tuple[BugReport, ...]
    labels: tuple[Severity, ...]
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if len(self.reports) != len(self.labels):
            raise ValueError("reports and labels differ in length")

    def __len__(self) -> int:
        return len(self.reports)

    @property
    def y(self) -> np.ndarray:
        return np.fromiter((int(c) for c in self.labels), dtype=np.int8, count=len(self.labels))

    @property
    def degenerate(self) -> bool:
        return len(set(self.labels)) < 2

    def class_counts(self) -> dict[Severity, int]:
        counts = Counter(self.labels)
        return {c: counts.get(c, 0) for c in (Severity.HIGH, Severity.LOW)}

    def prevalence(self) -> float:
        return self.class_counts()[Severity.HIGH] / len(self) if len(self) else 0.0

    def subset(self, indices: Iterable[int]) -> "Corpus":
        idx = [int(i) for i in indices]
        return Corpus(
            reports=tuple(self.reports[i] for i in idx),
            labels=tuple(self.labels[i] for i in idx),
            provenance=self.provenance,
        )


def map_severity(raw: str, policy: Mapping[str, str] | None = None) -> Severity | str:
    """Map a raw severity string to HIGH/LOW, or ``EXCLUDED``.

    Matching is case-insensitive on both the raw value and the policy keys.
    """
    table = {k.casefold(): v for k, v in (policy or DEFAULT_POLICY).items()}
    key = raw.strip().casefold()
    if key not in table:
        raise UnmappedLabelError(raw)
    target = table[key]
    if target == EXCLUDED:
        return EXCLUDED
    return Severity[target]


def parse_csv(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    policy: Mapping[str, str] | None = None,
    numeric_columns: Sequence[str] = (),
) -> Corpus:
    """Read a bug-report CSV into a labelled :class:`Corpus`.

    Rows whose severity is excluded by the policy, unknown to it, or whose
    Bug_ID repeats an earlier row are kept out of the corpus and listed in
    ``corpus.provenance["excluded"]``.
    """
    columns = dict(DEFAULT_SCHEMA)
    if schema:
        columns.update(schema)
    path = Path(path)
    reports: list[BugReport] = []
    labels: list[Severity] = []
    excluded: list[dict] = []
    seen: set[int] = set()
    total = 0

    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(columns["bug_id"]) from None
        except csv.Error as exc:
            raise RowError(reader.line_num, f"malformed CSV: {exc}") from None
        header = [h.strip().lstrip("﻿") for h in header]
        positions = {}
        for name, col in list(columns.items()) + [(c, c) for c in numeric_columns]:
            if col not in header:
                raise SchemaError(col)
            positions[name] = header.index(col)

        while True:
            try:
                row = next(reader)
            except StopIteration:
                break
            except csv.Error as exc:
                raise RowError(reader.line_num, f"malformed CSV: {exc}") from None
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            total += 1
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))

            def cell(name: str) -> str:
                return row[positions[name]].strip()

            raw_id = cell("bug_id")
            try:
                bug_id = int(raw_id)
                if bug_id < 0:
                    raise ValueError
            except ValueError:
                raise RowError(line, f"non-integer Bug_ID {raw_id!r}") from None

            numeric = {}
            for col in numeric_columns:
                text = row[positions[col]].strip()
                if not text:
                    numeric[col] = None
                    continue
                try:
                    numeric[col] = float(text)
                except ValueError:
                    raise RowError(line, f"non-numeric {col} {text!r}") from None

            report = BugReport(
                project=cell("project"),
                bug_id=bug_id,
                resolution_status=cell("resolution_status"),
                short_description=cell("short_description"),
                bug_type=cell("bug_type") or None,
                priority_label=cell("priority_label") or None,
                raw_severity=cell("raw_severity"),
                numeric=numeric,
            )
            if bug_id in seen:
                excluded.append({"line": line, "bug_id": bug_id, "reason": "duplicate_bug_id"})
                continue
            seen.add(bug_id)
            try:
                label = map_severity(report.raw_severity, policy)
            except UnmappedLabelError:
                excluded.append(
                    {"line": line, "bug_id": bug_id, "reason": f"unmapped_severity:{report.raw_severity}"}
                )
                continue
            if label == EXCLUDED:
                excluded.append(
                    {"line": line, "bug_id": bug_id, "reason": f"excluded_severity:{report.raw_severity.casefold()}"}
                )
                continue
            reports.append(report)
            labels.append(label)

    provenance = _ledger(str(path), total, excluded)
    return Corpus(tuple(reports), tuple(labels), provenance)


def _ledger(source: str, total: int, excluded: list[dict]) -> dict:
    reasons = Counter(e["reason"].split(":", 1)[0] for e in excluded)
    return {
        "source": source,
        "total_rows": total,
        "kept_rows": total - len(excluded),
        "excluded_rows": len(excluded),
        "reasons": dict(sorted(reasons.items())),
        "excluded": excluded,
    }


def write_jsonl(corpus: Corpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for report, label in zip(corpus.reports, corpus.labels):
            fh.write(json.dumps(report.to_record(label), sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def read_jsonl(path: str | Path) -> Corpus:
    reports, labels = [], []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                reports.append(BugReport.from_record(rec))
                labels.append(Severity[rec["label"]])
            except (KeyError, ValueError, TypeError) as exc:
                raise RowError(lineno, f"bad corpus record: {exc}") from None
    ids = [r.bug_id for r in reports]
    if len(set(ids)) != len(ids):
        dup = next(i for i, c in Counter(ids).items() if c > 1)
        raise RowError(0, f"duplicate Bug_ID {dup} in corpus file")
    return Corpus(tuple(reports), tuple(labels), {"source": str(path), "total_rows": len(reports)})


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def allocate_test_counts(class_sizes: Mapping[Severity, int], fraction: float) -> dict[Severity, int]:
    """Largest-remainder allocation of ``round(N * fraction)`` test rows.

    Equal remainders go to the larger class first.
    """
    n = sum(class_sizes.values())
    total = _round_half_up(n * fraction)
    quotas = {c: class_sizes[c] * fraction for c in class_sizes}
    counts = {c: math.floor(q) for c, q in quotas.items()}
    left = total - sum(counts.values())
    order = sorted(class_sizes, key=lambda c: (-(quotas[c] - counts[c]), -class_sizes[c], int(c)))
    for c in order[:max(left, 0)]:
        counts[c] += 1
    return counts


def _class_indices(labels: Sequence[Severity]) -> dict[Severity, np.ndarray]:
    y = np.fromiter((int(c) for c in labels), dtype=np.int8, count=len(labels))
    return {c: np.flatnonzero(y == int(c)) for c in (Severity.HIGH, Severity.LOW)}


def split_indices(labels: Sequence[Severity], test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    by_class = _class_indices(labels)
    if any(len(ix) == 0 for ix in by_class.values()):
        raise DegenerateError("corpus has a single class")
    counts = allocate_test_counts({c: len(ix) for c, ix in by_class.items()}, test_fraction)
    train, test = [], []
    for c, ix in by_class.items():
        perm = rng_for(seed, "split", c.name).permutation(ix)
        k = counts[c]
        if test_fraction > 0 and (k == 0 or k == len(ix)):
            raise DegenerateError(
                f"test_fraction {test_fraction} leaves a split without {c.name} rows"
            )
        test.append(perm[:k])
        train.append(perm[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_split(corpus: Corpus, test_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Split into (train, test) with per-class largest-remainder allocation."""
    train_idx, test_idx = split_indices(corpus.labels, test_fraction, seed)
    return corpus.subset(train_idx), corpus.subset(test_idx)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: tuple[int, ...]
    seed: int

    def train_test(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        a = np.asarray(self.assignments)
        return np.flatnonzero(a != fold), np.flatnonzero(a == fold)

    def sizes(self) -> list[int]:
        return np.bincount(np.asarray(self.assignments), minlength=self.k).tolist()


def make_folds(labels: Sequence[Severity], k: int = 3, seed: int = 0) -> FoldPlan:
    """Stratified k-fold assignment.

    Each class is shuffled and the classes are dealt round-robin as one
    continuous sequence, so both fold sizes and per-class fold counts differ
    by at most one.
    """
    if k < 2:
        raise StratificationError("k must be at least 2")
    by_class = _class_indices(labels)
    for c, ix in by_class.items():
        if len(ix) < k:
            raise StratificationError(f"class {c.name} has {len(ix)} rows, fewer than k={k}")
    order = np.concatenate(
        [rng_for(seed, "folds", c.name).permutation(by_class[c]) for c in (Severity.HIGH, Severity.LOW)]
    )
    assignments = np.empty(len(labels), dtype=np.int64)
    assignments[order] = np.arange(len(order)) % k
    return FoldPlan(k=k, assignments=tuple(int(a) for a in assignments), seed=seed)
