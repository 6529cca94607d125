"""Feature-file codec, manifests, and label handling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamfuse.data import (
    FeatureFileError,
    FeatureSequence,
    LabelSequence,
    ManifestEntry,
    StreamBundle,
    load_bundles,
    read_feature_file,
    read_manifest,
    text_to_tokens,
    tokens_to_text,
    write_feature_file,
    write_manifest,
)


class TestFeatureCodec:
    @given(
        t=st.integers(1, 20),
        d=st.integers(1, 8),
        kind=st.sampled_from(["raw", "ufe"]),
        seed=st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=30, deadline=None)
    def test_roundtrip_bitwise(self, tmp_path_factory, t, d, kind, seed):
        rng = np.random.default_rng(seed)
        seq = FeatureSequence(rng.normal(size=(t, d)), f"utt-{seed}", "s0", kind=kind)
        path = tmp_path_factory.mktemp("feat") / "x.feat"
        write_feature_file(path, seq)
        back = read_feature_file(path)
        assert np.array_equal(back.frames, seq.frames)
        assert (back.utterance_id, back.stream_id, back.kind) == (seq.utterance_id, seq.stream_id, kind)

    def test_corrupted_magic_rejected(self, tmp_path):
        path = tmp_path / "x.feat"
        write_feature_file(path, FeatureSequence(np.ones((2, 2)), "u", "s"))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FeatureFileError, match="magic"):
            read_feature_file(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "x.feat"
        write_feature_file(path, FeatureSequence(np.ones((3, 2)), "u", "s"))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FeatureFileError, match="truncated"):
            read_feature_file(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "x.feat"
        write_feature_file(path, FeatureSequence(np.ones((3, 2)), "u", "s"))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FeatureFileError, match="trailing"):
            read_feature_file(path)

    def test_zero_frame_file_rejected(self, tmp_path):
        with pytest.raises(FeatureFileError, match="zero-frame"):
            write_feature_file(tmp_path / "x.feat", FeatureSequence(np.zeros((0, 4)), "u", "s"))

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "x.feat"
        write_feature_file(path, FeatureSequence(np.ones((1, 1)), "u", "s"))
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(FeatureFileError, match="version"):
            read_feature_file(path)


class TestLabels:
    def test_text_roundtrip(self):
        seq = LabelSequence([0, 3, 1], 5)
        assert seq.to_text() == "a d b"
        assert LabelSequence.from_text("a d b", 5).ids == [0, 3, 1]

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            LabelSequence([5], 5)

    def test_unknown_token_rejected(self):
        with pytest.raises(ValueError, match="not in vocabulary"):
            text_to_tokens("z", 5)

    def test_special_ids(self):
        seq = LabelSequence([0], 5)
        assert seq.sos_id == seq.eos_id == seq.blank_id == 5


class TestManifests:
    def test_roundtrip(self, tmp_path):
        entries = [
            ManifestEntry("u0", "s0", "features/u0.s0.feat", 10, "a b"),
            ManifestEntry("u0", "s1", "features/u0.s1.feat", 10, "a b"),
            ManifestEntry("u1", "s0", "features/u1.s0.feat", 7),
        ]
        path = tmp_path / "m.manifest"
        write_manifest(path, entries)
        back = read_manifest(path)
        assert back == entries

    def test_bundle_loading_and_missing_stream(self, tmp_path):
        rng = np.random.default_rng(0)
        entries = []
        for utt, streams in (("u0", ("s0", "s1")), ("u1", ("s0", "s1"))):
            for sid in streams:
                rel = f"{utt}.{sid}.feat"
                seq = FeatureSequence(rng.normal(size=(6, 3)), utt, sid)
                write_feature_file(tmp_path / rel, seq)
                entries.append(ManifestEntry(utt, sid, rel, 6, "a b a"))
        path = tmp_path / "m.manifest"
        write_manifest(path, entries)
        bundles = load_bundles(path, vocab_size=3)
        assert [b.utterance_id for b in bundles] == ["u0", "u1"]
        assert bundles[0].n_streams == 2
        assert bundles[0].labels.ids == [0, 1, 0]

        write_manifest(path, entries[:-1])  # u1 now lacks s1
        with pytest.raises(ValueError, match="missing streams"):
            load_bundles(path, vocab_size=3)

    def test_duplicate_stream_rejected(self, tmp_path):
        seq = FeatureSequence(np.ones((2, 2)), "u0", "s0")
        write_feature_file(tmp_path / "a.feat", seq)
        entries = [ManifestEntry("u0", "s0", "a.feat", 2, "a"), ManifestEntry("u0", "s0", "a.feat", 2, "a")]
        path = tmp_path / "m.manifest"
        write_manifest(path, entries)
        with pytest.raises(ValueError, match="duplicate"):
            load_bundles(path, vocab_size=2)


class TestBundles:
    def test_mixed_kinds_rejected(self):
        a = FeatureSequence(np.ones((2, 2)), "u", "s0", kind="raw")
        b = FeatureSequence(np.ones((2, 2)), "u", "s1", kind="ufe")
        with pytest.raises(ValueError, match="mixed"):
            StreamBundle("u", [a, b])

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one stream"):
            StreamBundle("u", [])
