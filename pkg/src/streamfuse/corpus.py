"""Synthetic multi-stream corpus generation and structured masking.

Each utterance is a random token sequence rendered as smoothed prototype
frames (piecewise-linear tracks between per-token anchor vectors plus
i.i.d. jitter), then viewed through N corrupted streams.  The default
corruption alternates noise bursts across streams every ~20 frames, so
the more informative stream changes within an utterance and stream
fusion has something to exploit.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import (
    FeatureSequence,
    ManifestEntry,
    tokens_to_text,
    write_feature_file,
    write_manifest,
)

CORPUS_META = "corpus.json"


@dataclass
class CorruptionProfile:
    """Time-varying per-stream corruption.

    noise_high applies inside this stream's "bad" bursts, noise_low
    elsewhere; bursts of `burst_frames` rotate across streams so exactly
    one stream is degraded at a time.  pure_noise replaces the signal
    entirely (an SNR of -inf surrogate).
    """

    noise_high: float = 2.0
    noise_low: float = 0.05
    burst_frames: int = 20
    dropout_rate: float = 0.1
    dropout_frames: int = 5
    gain_drift: float = 0.05
    pure_noise: bool = False
    pure_noise_sigma: float = 1.5


@dataclass
class CorpusSpec:
    vocab_size: int = 10
    utterances: dict = field(default_factory=lambda: {"train": 120, "dev": 24, "test": 24})
    label_len: tuple = (3, 6)
    feature_dim: int = 8
    frames_per_label: tuple = (4, 8)
    n_streams: int = 2
    profiles: tuple | None = None  # one CorruptionProfile per stream
    jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_streams < 1:
            raise ValueError("need at least one stream")
        if self.vocab_size < 2:
            raise ValueError("vocabulary needs at least two symbols")
        self.label_len = tuple(self.label_len)
        self.frames_per_label = tuple(self.frames_per_label)
        if self.label_len[0] < 1 or self.label_len[0] > self.label_len[1]:
            raise ValueError(f"bad label length range {self.label_len}")
        if self.frames_per_label[0] < 1 or self.frames_per_label[0] > self.frames_per_label[1]:
            raise ValueError(f"bad frames-per-label range {self.frames_per_label}")
        if self.profiles is None:
            self.profiles = tuple(CorruptionProfile() for _ in range(self.n_streams))
        else:
            self.profiles = tuple(
                p if isinstance(p, CorruptionProfile) else CorruptionProfile(**p) for p in self.profiles
            )
        if len(self.profiles) != self.n_streams:
            raise ValueError(f"{len(self.profiles)} profiles for {self.n_streams} streams")

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        raw["profiles"] = tuple(raw["profiles"]) if raw.get("profiles") else None
        return cls(**raw)


def _prototype(label_vecs, labels, frames_per, rng, jitter):
    """Piecewise-linear track through the labels' anchor vectors."""
    segs = []
    for j, lab in enumerate(labels):
        f = frames_per[j]
        v0 = label_vecs[lab]
        v1 = label_vecs[labels[j + 1]] if j + 1 < len(labels) else label_vecs[lab]
        alphas = (np.arange(f) / f).reshape(-1, 1)
        segs.append(v0 + alphas * (v1 - v0))
    proto = np.concatenate(segs, axis=0)
    return proto + rng.normal(0.0, jitter, size=proto.shape)


def _corrupt(proto, stream_idx, profile: CorruptionProfile, n_streams, phase, rng):
    T, D = proto.shape
    if profile.pure_noise:
        return rng.normal(0.0, profile.pure_noise_sigma, size=(T, D))
    t = np.arange(T)
    burst = (t + phase) // max(profile.burst_frames, 1)
    bad = (burst % n_streams) == stream_idx if n_streams > 1 else np.zeros(T, dtype=bool)
    sigma = np.where(bad, profile.noise_high, profile.noise_low).reshape(-1, 1)
    gain = 1.0 + profile.gain_drift * np.sin(2 * np.pi * t / max(T, 1) + rng.uniform(0, 2 * np.pi))
    x = gain.reshape(-1, 1) * proto + rng.normal(0.0, 1.0, size=(T, D)) * sigma
    if profile.dropout_rate > 0 and rng.uniform() < profile.dropout_rate and T > profile.dropout_frames:
        start = int(rng.integers(0, T - profile.dropout_frames + 1))
        x[start : start + profile.dropout_frames] = 0.0
    return x


def generate_utterance(spec: CorpusSpec, label_vecs, rng):
    """(label ids, list of per-stream frame matrices) for one utterance.

    Labels avoid adjacent repeats so every utterance admits a CTC
    alignment at the default subsampling factor.
    """
    L = int(rng.integers(spec.label_len[0], spec.label_len[1] + 1))
    labels = []
    for _ in range(L):
        tok = int(rng.integers(0, spec.vocab_size))
        while labels and tok == labels[-1]:
            tok = int(rng.integers(0, spec.vocab_size))
        labels.append(tok)
    frames_per = rng.integers(spec.frames_per_label[0], spec.frames_per_label[1] + 1, size=L).tolist()
    proto = _prototype(label_vecs, labels, frames_per, rng, spec.jitter)
    phase = int(rng.integers(0, max(spec.profiles[0].burst_frames, 1) * spec.n_streams))
    streams = [
        _corrupt(proto, i, spec.profiles[i], spec.n_streams, phase, rng) for i in range(spec.n_streams)
    ]
    return labels, streams


def generate_corpus(spec: CorpusSpec, out_dir):
    """Write feature files and per-split manifests; a pure function of spec+seed.

    Returns {split: manifest path}.
    """
    out_dir = os.fspath(out_dir)
    label_vecs = np.random.default_rng([spec.seed, 0xBEEF]).normal(0.0, 1.0, size=(spec.vocab_size, spec.feature_dim))
    manifests = {}
    for split_idx, (split, count) in enumerate(sorted(spec.utterances.items())):
        if count < 1:
            raise ValueError(f"split {split!r} needs at least one utterance")
        feat_dir = os.path.join(out_dir, "features", split)
        os.makedirs(feat_dir, exist_ok=True)
        entries = []
        for u in range(count):
            rng = np.random.default_rng([spec.seed, split_idx, u])
            utt_id = f"{split}-{u:04d}"
            labels, streams = generate_utterance(spec, label_vecs, rng)
            text = tokens_to_text(labels)
            for i, frames in enumerate(streams):
                stream_id = f"s{i}"
                rel = os.path.join("features", split, f"{utt_id}.{stream_id}.feat")
                seq = FeatureSequence(frames, utt_id, stream_id, kind="raw")
                write_feature_file(os.path.join(out_dir, rel), seq)
                entries.append(ManifestEntry(utt_id, stream_id, rel, seq.frame_count, text))
        manifest_path = os.path.join(out_dir, f"{split}.manifest")
        write_manifest(manifest_path, entries)
        manifests[split] = manifest_path
    with open(os.path.join(out_dir, CORPUS_META), "w", encoding="utf-8") as f:
        f.write(spec.to_json() + "\n")
    return manifests


def load_corpus_spec(corpus_dir) -> CorpusSpec:
    with open(os.path.join(os.fspath(corpus_dir), CORPUS_META), encoding="utf-8") as f:
        return CorpusSpec.from_json(f.read())


# -- structured masking -------------------------------------------------------


@dataclass
class AugmentPolicy:
    time_mask_width: int = 6  # maximum width per mask
    time_mask_count: int = 2
    feature_mask_width: int = 2
    feature_mask_count: int = 1

    def validate(self, n_frames, dim):
        if self.time_mask_count and self.time_mask_width > n_frames:
            raise ValueError(f"time mask width {self.time_mask_width} wider than sequence of {n_frames}")
        if self.feature_mask_count and self.feature_mask_width > dim:
            raise ValueError(f"feature mask width {self.feature_mask_width} wider than {dim} channels")
        if self.time_mask_count * self.time_mask_width > 0.5 * n_frames:
            raise ValueError("time masking would exceed half the utterance")
        if self.feature_mask_count * self.feature_mask_width > 0.5 * dim:
            raise ValueError("feature masking would exceed half the channels")


def spec_augment(frames: np.ndarray, policy: AugmentPolicy, seed) -> np.ndarray:
    """Zero out random time spans and feature channels; shape is preserved.

    Mask widths are drawn uniformly in [1, max]; `seed` may be an int or
    a numpy Generator.
    """
    frames = np.asarray(frames, dtype=np.float64)
    T, D = frames.shape
    policy.validate(T, D)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = frames.copy()
    for _ in range(policy.time_mask_count):
        w = int(rng.integers(1, policy.time_mask_width + 1))
        start = int(rng.integers(0, T - w + 1))
        out[start : start + w, :] = 0.0
    for _ in range(policy.feature_mask_count):
        w = int(rng.integers(1, policy.feature_mask_width + 1))
        start = int(rng.integers(0, D - w + 1))
        out[:, start : start + w] = 0.0
    return out
