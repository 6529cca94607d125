"""Comparison tables and analysis artifacts built from decode outputs."""

from __future__ import annotations

import os
from dataclasses import dataclass

from .beamsearch import read_decode_file
from .params import ParameterStore
from .scoring import score


@dataclass
class SystemSpec:
    name: str
    decode_path: str
    checkpoint_paths: tuple = ()


@dataclass
class SystemRow:
    name: str
    trainable_params: int
    frozen_params: int
    error_rate: float


def compare_fusion(systems, refs, unit="word") -> list[SystemRow]:
    """One row per system in declared order: parameter counts split into
    trainable and frozen, plus the scored error rate of its decode file."""
    missing = []
    for s in systems:
        for p in (s.decode_path, *s.checkpoint_paths):
            if not os.path.exists(p):
                missing.append(f"{s.name}: {p}")
    if missing:
        raise FileNotFoundError("missing system artifacts: " + "; ".join(missing))

    rows = []
    for s in systems:
        trainable = frozen = 0
        for p in s.checkpoint_paths:
            store = ParameterStore.load(p)
            trainable += store.count(trainable_only=True)
            frozen += store.count() - store.count(trainable_only=True)
        hyps = {r["utterance_id"]: r["text"] for r in read_decode_file(s.decode_path)}
        report = score(refs, hyps, unit=unit)
        rows.append(SystemRow(s.name, trainable, frozen, report.error_rate))
    return rows


def render_comparison(rows, unit="word") -> str:
    headers = ("system", "trainable", "frozen", f"{unit[0]}er")
    cells = [headers] + [
        (r.name, f"{r.trainable_params}", f"{r.frozen_params}", f"{r.error_rate:.4f}") for r in rows
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def write_comparison_tsv(path, rows, unit="word"):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"system\ttrainable\tfrozen\t{unit[0]}er\n")
        for r in rows:
            f.write(f"{r.name}\t{r.trainable_params}\t{r.frozen_params}\t{r.error_rate:.6f}\n")


def beta_trace(decode_records) -> list[tuple]:
    """(utterance_id, step, weights) per output step, validated as a simplex."""
    rows = []
    for rec in decode_records:
        beta = rec.get("beta")
        if beta is None:
            raise ValueError(f"decode record {rec['utterance_id']!r} has no stream-weight diagnostics")
        for step, weights in enumerate(beta):
            if abs(sum(weights) - 1.0) > 1e-9:
                raise ValueError(f"stream weights at {rec['utterance_id']!r} step {step} do not sum to 1")
            rows.append((rec["utterance_id"], step, list(weights)))
    return rows


def write_beta_trace(path, rows):
    n = max((len(w) for _, _, w in rows), default=0)
    with open(path, "w", encoding="utf-8") as f:
        f.write("utterance_id\tstep\t" + "\t".join(f"beta{i}" for i in range(n)) + "\n")
        for utt, step, weights in rows:
            f.write(f"{utt}\t{step}\t" + "\t".join(f"{w:.10f}" for w in weights) + "\n")
