"""Conventional combination baselines: signal-level averaging, feature-level
frame concatenation, and word-level ROVER voting.
"""

from __future__ import annotations

import os
from collections import Counter

import numpy as np

from .data import FeatureSequence, ManifestEntry, StreamBundle, write_feature_file, write_manifest


def signal_average(seqs) -> FeatureSequence:
    """Frame-wise mean after truncating to the shortest stream."""
    seqs = list(seqs)
    if not seqs:
        raise ValueError("signal_average of empty stream list")
    dims = {s.dim for s in seqs}
    if len(dims) != 1:
        raise ValueError(f"streams disagree on feature dim: {sorted(dims)}")
    t = min(s.frame_count for s in seqs)
    mean = np.mean([s.frames[:t] for s in seqs], axis=0)
    first = seqs[0]
    return FeatureSequence(mean, first.utterance_id, "avg", kind=first.kind)


def frame_concat(seqs) -> FeatureSequence:
    """Frame-by-frame concatenation along the feature axis, stream order
    as given; streams truncated to the shortest."""
    seqs = list(seqs)
    if not seqs:
        raise ValueError("frame_concat of empty stream list")
    t = min(s.frame_count for s in seqs)
    cat = np.concatenate([s.frames[:t] for s in seqs], axis=1)
    first = seqs[0]
    return FeatureSequence(cat, first.utterance_id, "cat", kind=first.kind)


def fuse_bundles(bundles, mode) -> list[StreamBundle]:
    fn = {"average": signal_average, "concat": frame_concat}[mode]
    return [StreamBundle(b.utterance_id, [fn(b.streams)], b.labels) for b in bundles]


def fuse_corpus_split(bundles, mode, out_dir, split) -> str:
    """Write a fused single-stream corpus split; ids and transcripts unchanged."""
    feat_dir = os.path.join(os.fspath(out_dir), "features", split)
    os.makedirs(feat_dir, exist_ok=True)
    entries = []
    for b in fuse_bundles(bundles, mode):
        seq = b.streams[0]
        rel = os.path.join("features", split, f"{seq.utterance_id}.{seq.stream_id}.feat")
        write_feature_file(os.path.join(out_dir, rel), seq)
        entries.append(
            ManifestEntry(
                seq.utterance_id,
                seq.stream_id,
                rel,
                seq.frame_count,
                b.labels.to_text() if b.labels is not None else None,
            )
        )
    manifest = os.path.join(os.fspath(out_dir), f"{split}.manifest")
    write_manifest(manifest, entries)
    return manifest


# -- ROVER ----------------------------------------------------------------------

# A word transition network is a list of slots; each slot holds one
# candidate per merged hypothesis, with None as the null (deletion) word.


def _align_into_wtn(wtn, words, merged):
    """Extend the network by one hypothesis via edit-distance alignment.

    Matching a word into a slot costs 0 when the slot already contains it;
    ties prefer alignment over deletion over insertion.  `merged` is the
    number of hypotheses already in the network (insertion slots need that
    many nulls).
    """
    n, m = len(wtn), len(words)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    move = [[None] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
        move[i][0] = "del"
    for j in range(1, m + 1):
        cost[0][j] = j
        move[0][j] = "ins"
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = 0 if words[j - 1] in wtn[i - 1] else 1
            options = (
                (cost[i - 1][j - 1] + sub, "diag"),
                (cost[i - 1][j] + 1, "del"),
                (cost[i][j - 1] + 1, "ins"),
            )
            cost[i][j], move[i][j] = min(options, key=lambda o: (o[0], ("diag", "del", "ins").index(o[1])))
    out = []
    i, j = n, m
    while i > 0 or j > 0:
        mv = move[i][j]
        if mv == "diag":
            out.append(wtn[i - 1] + [words[j - 1]])
            i, j = i - 1, j - 1
        elif mv == "del":
            out.append(wtn[i - 1] + [None])
            i -= 1
        else:
            out.append([None] * merged + [words[j - 1]])
            j -= 1
    out.reverse()
    return out


def build_wtn(ordered_hyps):
    """Word transition network from hypotheses, best-scored first."""
    wtn = [[w] for w in ordered_hyps[0]]
    for merged, words in enumerate(ordered_hyps[1:], start=1):
        wtn = _align_into_wtn(wtn, words, merged)
    return wtn


def vote_slot(candidates, weights):
    """Plurality winner of one slot; ties resolve toward the word voted by
    the highest-scored (earliest) hypothesis, and the null word loses ties."""
    tally = Counter()
    for cand, w in zip(candidates, weights):
        tally[cand] += w
    best = max(tally.values())
    winners = [c for c, v in tally.items() if v == best]
    words = [w for w in winners if w is not None]
    if not words:
        return None
    if len(words) == 1 and len(winners) == len(words):
        return words[0]
    for cand in candidates:  # candidates are ordered best hypothesis first
        if cand in words:
            return cand
    return words[0]


def rover(hypotheses, scores=None, weighted=False):
    """Fuse N >= 2 word sequences by aligned plurality voting.

    `scores` orders the merge (higher joint score first) and, when
    `weighted` is set, scales each hypothesis's votes by its softmax
    weight; otherwise every hypothesis votes with weight 1.
    """
    hypotheses = [list(h) for h in hypotheses]
    if len(hypotheses) < 2:
        raise ValueError("rover needs at least two hypotheses")
    if scores is None:
        scores = [0.0] * len(hypotheses)
    if len(scores) != len(hypotheses):
        raise ValueError("one score per hypothesis required")
    order = sorted(range(len(hypotheses)), key=lambda k: (-scores[k], k))
    ordered = [hypotheses[k] for k in order]
    if weighted:
        s = np.asarray([scores[k] for k in order], dtype=np.float64)
        e = np.exp(s - s.max())
        weights = (e / e.sum()).tolist()
    else:
        weights = [1.0] * len(ordered)
    wtn = build_wtn(ordered)
    fused = []
    for slot in wtn:
        win = vote_slot(slot, weights)
        if win is not None:
            fused.append(win)
    return fused
