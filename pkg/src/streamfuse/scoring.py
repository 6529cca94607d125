"""Error-rate scoring via Levenshtein alignment with unit costs.

Among minimum-cost alignments the counts are canonicalized by minimizing
insertions+deletions (preferring substitutions), which makes the
(S, I, D) triple unique for any pair: I - D is fixed by the length
difference and S = errors - I - D.  Uniqueness also gives the swap
symmetry: exchanging reference and hypothesis exchanges I and D and
leaves S unchanged.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


@dataclass
class EditCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_units: int = 0

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    def __add__(self, other):
        return EditCounts(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_units + other.ref_units,
        )

    @property
    def rate(self):
        if self.ref_units == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.ref_units


@dataclass
class ScoreReport:
    unit: str
    per_utterance: dict = field(default_factory=dict)
    totals: EditCounts = field(default_factory=EditCounts)

    @property
    def error_rate(self):
        return self.totals.rate


def normalize_text(text):
    return re.sub(r"\s+", " ", text.strip().lower())


def to_units(text, unit):
    text = normalize_text(text)
    if unit == "word":
        return text.split()
    if unit == "char":
        return list(text.replace(" ", ""))
    raise ValueError(f"unknown scoring unit {unit!r}")


def levenshtein_counts(ref, hyp) -> EditCounts:
    """Unique (S, I, D) for the minimum-cost alignment of two unit lists."""
    n, m = len(ref), len(hyp)
    # cell value: (errors, ins+del); counts recovered from the unique optimum
    prev = [(j, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, i)] + [None] * m
        for j in range(1, m + 1):
            sub = 0 if ref[i - 1] == hyp[j - 1] else 1
            diag = (prev[j - 1][0] + sub, prev[j - 1][1])
            dele = (prev[j][0] + 1, prev[j][1] + 1)
            ins = (cur[j - 1][0] + 1, cur[j - 1][1] + 1)
            cur[j] = min(diag, dele, ins)
        prev = cur
    errors, ins_plus_del = prev[m]
    delta = m - n  # = I - D for every alignment
    insertions = (ins_plus_del + delta) // 2
    deletions = ins_plus_del - insertions
    return EditCounts(errors - ins_plus_del, insertions, deletions, n)


def score(refs: dict, hyps: dict, unit="word") -> ScoreReport:
    """Corpus scoring aligned by utterance id.

    A missing hypothesis counts as a full deletion; a hypothesis id with
    no reference is an error.
    """
    unknown = sorted(set(hyps) - set(refs))
    if unknown:
        raise ValueError(f"hypotheses for unknown utterance ids: {unknown}")
    report = ScoreReport(unit=unit)
    for utt in sorted(refs):
        ref_units = to_units(refs[utt], unit)
        if utt in hyps:
            counts = levenshtein_counts(ref_units, to_units(hyps[utt], unit))
        else:
            counts = EditCounts(0, 0, len(ref_units), len(ref_units))
        report.per_utterance[utt] = counts
        report.totals = report.totals + counts
    return report


def corpus_error_rate(pairs, unit="word") -> float:
    """Error rate over (ref, hyp) text pairs without utterance ids."""
    totals = EditCounts()
    for ref, hyp in pairs:
        totals = totals + levenshtein_counts(to_units(ref, unit), to_units(hyp, unit))
    return totals.rate


def refs_from_manifest_entries(entries) -> dict:
    """utterance id -> transcript, rejecting conflicting duplicates."""
    refs = {}
    for e in entries:
        if e.transcript is None:
            continue
        if e.utterance_id in refs and refs[e.utterance_id] != e.transcript:
            raise ValueError(f"conflicting transcripts for utterance {e.utterance_id!r}")
        refs[e.utterance_id] = e.transcript
    return refs
