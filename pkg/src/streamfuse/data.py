"""Feature/label containers, the binary feature-file codec, and manifests.

Feature container (shared by raw acoustic-like frames and encoder-output
features, distinguished by a kind byte):

    magic "UFE1" | u32 version | u8 kind (0=raw, 1=ufe) | u32 frame_count
    | u32 dim | u32+utf8 utterance_id | u32+utf8 stream_id
    | frame_count*dim little-endian float64, row-major

Manifest: one tab-separated record per line:
    utterance_id  stream_id  path  frame_count  [transcript]
"""

from __future__ import annotations

import os
import string
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

FEATURE_MAGIC = b"UFE1"
FEATURE_VERSION = 1
KIND_RAW = 0
KIND_UFE = 1
_KIND_NAMES = {KIND_RAW: "raw", KIND_UFE: "ufe"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}


class FeatureFileError(ValueError):
    """Bad magic, bad version, or truncated/trailing payload."""


@dataclass
class FeatureSequence:
    """T x D matrix of frames for one stream of one utterance."""

    frames: np.ndarray
    utterance_id: str
    stream_id: str
    kind: str = "raw"  # "raw" acoustic-like frames or "ufe" encoder outputs

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {self.frames.shape}")
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown feature kind {self.kind!r}")

    @property
    def frame_count(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


@dataclass
class LabelSequence:
    """Token-id sequence over a vocabulary of size V.

    Real tokens are ids 0..V-1.  Id V doubles as start-of-sequence on the
    decoder input side and end-of-sequence on the output side; the CTC
    blank is the last class (index V) of the V+1-way CTC head.
    """

    ids: list[int]
    vocab_size: int

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        bad = [i for i in self.ids if not 0 <= i < self.vocab_size]
        if bad:
            raise ValueError(f"label ids {bad} out of range for vocabulary of {self.vocab_size}")

    def __len__(self):
        return len(self.ids)

    @property
    def sos_id(self):
        return self.vocab_size

    @property
    def eos_id(self):
        return self.vocab_size

    @property
    def blank_id(self):
        return self.vocab_size

    def to_text(self):
        return tokens_to_text(self.ids)

    @classmethod
    def from_text(cls, text, vocab_size):
        return cls(text_to_tokens(text, vocab_size), vocab_size)


def token_alphabet(vocab_size):
    if not 2 <= vocab_size <= 26:
        raise ValueError(f"vocabulary size must be in [2, 26], got {vocab_size}")
    return string.ascii_lowercase[:vocab_size]


def tokens_to_text(ids):
    return " ".join(string.ascii_lowercase[i] for i in ids)


def text_to_tokens(text, vocab_size):
    alphabet = token_alphabet(vocab_size)
    ids = []
    for w in text.split():
        if w not in alphabet:
            raise ValueError(f"token {w!r} not in vocabulary {alphabet!r}")
        ids.append(alphabet.index(w))
    return ids


@dataclass
class StreamBundle:
    """Parallel per-stream inputs for one utterance plus its target labels.

    Streams are homogeneous: all raw features or all encoder-output
    features.  Labels may be None at decode time.
    """

    utterance_id: str
    streams: list[FeatureSequence]
    labels: LabelSequence | None = None

    def __post_init__(self):
        if not self.streams:
            raise ValueError("bundle needs at least one stream")
        kinds = {s.kind for s in self.streams}
        if len(kinds) != 1:
            raise ValueError(f"mixed stream kinds in bundle: {sorted(kinds)}")
        ids = {s.utterance_id for s in self.streams}
        if ids != {self.utterance_id}:
            raise ValueError(f"stream utterance ids {ids} disagree with bundle {self.utterance_id!r}")

    @property
    def mode(self):
        return self.streams[0].kind

    @property
    def n_streams(self):
        return len(self.streams)


# -- binary feature codec ---------------------------------------------------


def write_feature_file(path, seq: FeatureSequence):
    """Serialize one feature sequence; atomic via temp-file rename."""
    if seq.frame_count < 1:
        raise FeatureFileError("refusing to write zero-frame feature file")
    ub = seq.utterance_id.encode("utf-8")
    sb = seq.stream_id.encode("utf-8")
    blob = bytearray()
    blob += FEATURE_MAGIC
    blob += struct.pack("<IB", FEATURE_VERSION, _KIND_CODES[seq.kind])
    blob += struct.pack("<II", seq.frame_count, seq.dim)
    blob += struct.pack("<I", len(ub)) + ub
    blob += struct.pack("<I", len(sb)) + sb
    blob += np.ascontiguousarray(seq.frames, dtype="<f8").tobytes()
    _atomic_write(path, bytes(blob))


def read_feature_file(path) -> FeatureSequence:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FEATURE_MAGIC:
        raise FeatureFileError(f"{path}: bad magic {data[:4]!r}")
    try:
        version, kind = struct.unpack_from("<IB", data, 4)
        frame_count, dim = struct.unpack_from("<II", data, 9)
        off = 17
        (ulen,) = struct.unpack_from("<I", data, off)
        off += 4
        utt = data[off : off + ulen].decode("utf-8")
        off += ulen
        (slen,) = struct.unpack_from("<I", data, off)
        off += 4
        stream = data[off : off + slen].decode("utf-8")
        off += slen
    except struct.error:
        raise FeatureFileError(f"{path}: truncated header") from None
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    if kind not in _KIND_NAMES:
        raise FeatureFileError(f"{path}: unknown kind byte {kind}")
    if frame_count < 1 or dim < 1:
        raise FeatureFileError(f"{path}: invalid dimensions {frame_count}x{dim}")
    payload = data[off:]
    expected = 8 * frame_count * dim
    if len(payload) < expected:
        raise FeatureFileError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise FeatureFileError(f"{path}: {len(payload) - expected} trailing bytes")
    frames = np.frombuffer(payload, dtype="<f8").reshape(frame_count, dim).copy()
    return FeatureSequence(frames, utt, stream, kind=_KIND_NAMES[kind])


def _atomic_write(path, blob):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-feat-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- manifests ----------------------------------------------------------------


@dataclass
class ManifestEntry:
    utterance_id: str
    stream_id: str
    path: str
    frame_count: int
    transcript: str | None = None


def write_manifest(path, entries):
    lines = []
    for e in entries:
        cols = [e.utterance_id, e.stream_id, e.path, str(e.frame_count)]
        if e.transcript is not None:
            cols.append(e.transcript)
        lines.append("\t".join(cols))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) not in (4, 5):
                raise ValueError(f"{path}:{ln}: expected 4 or 5 tab-separated fields, got {len(cols)}")
            entries.append(
                ManifestEntry(cols[0], cols[1], cols[2], int(cols[3]), cols[4] if len(cols) == 5 else None)
            )
    return entries


def load_bundles(manifest_path, vocab_size=None, streams=None) -> list[StreamBundle]:
    """Group manifest rows into per-utterance bundles, streams in id order.

    `streams`: optional whitelist of stream ids.  Every utterance must
    provide all selected streams; a missing stream is an error.
    """
    entries = read_manifest(manifest_path)
    base = os.path.dirname(os.fspath(manifest_path))
    by_utt: dict[str, dict[str, ManifestEntry]] = {}
    order: list[str] = []
    for e in entries:
        if streams is not None and e.stream_id not in streams:
            continue
        slot = by_utt.setdefault(e.utterance_id, {})
        if e.stream_id in slot:
            raise ValueError(f"duplicate (utterance, stream) pair ({e.utterance_id}, {e.stream_id})")
        if e.utterance_id not in order:
            order.append(e.utterance_id)
        slot[e.stream_id] = e

    stream_ids = sorted({sid for slots in by_utt.values() for sid in slots})
    bundles = []
    for utt in order:
        slots = by_utt[utt]
        missing = [sid for sid in stream_ids if sid not in slots]
        if missing:
            raise ValueError(f"utterance {utt!r} is missing streams {missing}")
        seqs, transcript = [], None
        for sid in stream_ids:
            e = slots[sid]
            p = e.path if os.path.isabs(e.path) else os.path.join(base, e.path)
            seq = read_feature_file(p)
            if seq.frame_count != e.frame_count:
                raise ValueError(
                    f"{p}: frame_count {seq.frame_count} disagrees with manifest {e.frame_count}"
                )
            seqs.append(seq)
            if e.transcript is not None:
                transcript = e.transcript
        labels = None
        if transcript is not None and vocab_size is not None:
            labels = LabelSequence.from_text(transcript, vocab_size)
        bundles.append(StreamBundle(utt, seqs, labels))
    return bundles


def pool_single_stream(bundles) -> list[StreamBundle]:
    """Flatten multi-stream bundles into independent single-stream ones."""
    pooled = []
    for b in bundles:
        for seq in b.streams:
            pooled.append(StreamBundle(b.utterance_id, [seq], b.labels))
    return pooled
