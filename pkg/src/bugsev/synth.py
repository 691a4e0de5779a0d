"""Synthetic bug-report corpora for offline tests and demos."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from bugsev.corpus import DEFAULT_SCHEMA, BugReport, Corpus, Severity

_HIGH_STEMS = ["crash", "hang", "corrupt", "deadlock", "segfault", "dataloss", "freeze", "overflow"]
_LOW_STEMS = ["typo", "label", "tooltip", "spacing", "wording", "icon", "color", "align"]
_COMMON_STEMS = ["editor", "view", "build", "dialog", "project", "file", "menu", "debug", "search", "update"]
BUG_TYPES = ["Database", "Documentation", "Network", "UI", "Core"]
PRIORITIES = ["P1", "P2", "P3", "P4", "P5"]


def _vocab(stems: list[str], size: int) -> list[str]:
    return [f"{stems[i % len(stems)]}{i // len(stems)}" for i in range(size)]


def synthetic_corpus(
    n_high: int,
    n_low: int,
    seed: int = 0,
    signal: float = 1.0,
    vocab_size: int = 40,
    doc_len: tuple[int, int] = (4, 9),
    missing_type_rate: float = 0.0,
) -> Corpus:
    """Generate a labelled corpus.

    Each token of a HIGH (LOW) description is drawn from the HIGH (LOW)
    vocabulary with probability ``signal`` and from a shared vocabulary
    otherwise; ``signal=1`` gives two disjoint vocabularies. Metadata is
    independent of the label.
    """
    rng = np.random.default_rng(seed)
    high_v = _vocab(_HIGH_STEMS, vocab_size)
    low_v = _vocab(_LOW_STEMS, vocab_size)
    common_v = _vocab(_COMMON_STEMS, vocab_size)
    labels = np.array([1] * n_high + [0] * n_low)
    labels = labels[rng.permutation(labels.size)]
    reports, sev = [], []
    for i, lab in enumerate(labels):
        own = high_v if lab else low_v
        n_tok = int(rng.integers(doc_len[0], doc_len[1] + 1))
        words = [
            own[rng.integers(len(own))] if rng.random() < signal else common_v[rng.integers(len(common_v))]
            for _ in range(n_tok)
        ]
        raw = ["blocker", "critical", "major"][rng.integers(3)] if lab else ["normal", "minor", "trivial"][rng.integers(3)]
        bug_type = None if rng.random() < missing_type_rate else BUG_TYPES[rng.integers(len(BUG_TYPES))]
        reports.append(BugReport(
            project="Synthetic",
            bug_id=100000 + i,
            resolution_status="FIXED",
            short_description=" ".join(words).capitalize(),
            bug_type=bug_type,
            priority_label=PRIORITIES[rng.integers(len(PRIORITIES))],
            raw_severity=raw,
        ))
        sev.append(Severity(int(lab)))
    return Corpus(tuple(reports), tuple(sev), {"source": f"synthetic(seed={seed})", "total_rows": len(reports)})


def write_csv(corpus: Corpus, path: str | Path) -> None:
    header = list(DEFAULT_SCHEMA.values())
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in corpus.reports:
            rec = r.to_record()
            w.writerow(["" if rec[h] is None else rec[h] for h in header])
