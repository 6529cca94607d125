"""Signal/feature-level fusion and ROVER voting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamfuse.data import FeatureSequence, LabelSequence, StreamBundle
from streamfuse.fusion import build_wtn, frame_concat, fuse_bundles, rover, signal_average, vote_slot


def seqs(arrays, utt="u0"):
    return [FeatureSequence(a, utt, f"s{i}") for i, a in enumerate(arrays)]


class TestSignalAverage:
    def test_identical_streams_idempotent(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        out = signal_average(seqs([x, x.copy()]))
        np.testing.assert_array_equal(out.frames, x)

    def test_opposite_streams_cancel(self):
        x = np.random.default_rng(1).normal(size=(5, 3))
        out = signal_average(seqs([x, -x]))
        np.testing.assert_allclose(out.frames, np.zeros((5, 3)), atol=1e-15)

    def test_mean_matches_direct(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        out = signal_average(seqs([a, b]))
        np.testing.assert_allclose(out.frames, (a + b) / 2, atol=1e-15)

    def test_truncates_to_minimum(self):
        a, b = np.ones((10, 2)), np.ones((9, 2))
        assert signal_average(seqs([a, b])).frame_count == 9

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            signal_average([])


class TestFrameConcat:
    def test_layout(self):
        a = np.full((4, 3), 1.0)
        b = np.full((4, 3), 2.0)
        out = frame_concat(seqs([a, b]))
        assert out.dim == 6
        np.testing.assert_array_equal(out.frames[:, :3], a)
        np.testing.assert_array_equal(out.frames[:, 3:], b)

    def test_single_stream_identity(self):
        a = np.random.default_rng(3).normal(size=(5, 2))
        np.testing.assert_array_equal(frame_concat(seqs([a])).frames, a)

    def test_truncation_rule(self):
        out = frame_concat(seqs([np.ones((10, 2)), np.ones((9, 2))]))
        assert out.frame_count == 9

    def test_bundle_fusion_preserves_ids_and_labels(self):
        rng = np.random.default_rng(4)
        labels = LabelSequence([0, 1], 3)
        b = StreamBundle("utt-7", seqs([rng.normal(size=(5, 2)), rng.normal(size=(5, 2))], utt="utt-7"), labels)
        for mode in ("average", "concat"):
            fused = fuse_bundles([b], mode)[0]
            assert fused.utterance_id == "utt-7"
            assert fused.labels is labels
            assert fused.n_streams == 1


class TestRover:
    def test_unanimous(self):
        assert rover([["a", "b", "c"]] * 3, [0, 0, 0]) == ["a", "b", "c"]

    def test_majority_per_slot(self):
        hyps = [["a", "b", "c"], ["a", "x", "c"], ["a", "b", "c"]]
        assert rover(hyps, [0, 0, 0]) == ["a", "b", "c"]

    def test_needs_two_hypotheses(self):
        with pytest.raises(ValueError):
            rover([["a"]])

    def test_tie_goes_to_best_scored_hypothesis(self):
        # two-way tie on the middle slot: the higher-scored hyp wins
        hyps = [["a", "b", "c"], ["a", "x", "c"]]
        assert rover(hyps, [1.0, 0.0]) == ["a", "b", "c"]
        assert rover(hyps, [0.0, 1.0]) == ["a", "x", "c"]

    def test_null_loses_ties(self):
        # deletion vs word tie: the word survives
        hyps = [["a", "b"], ["a"]]
        assert rover(hyps, [0.0, 1.0]) == ["a", "b"]

    def test_deletions_win_majority(self):
        hyps = [["a"], ["a"], ["a", "b"]]
        assert rover(hyps, [0, 0, 0]) == ["a"]

    def test_insertion_slots_get_nulls(self):
        wtn = build_wtn([["a", "c"], ["a", "b", "c"]])
        assert [len(slot) for slot in wtn] == [2, 2, 2]
        assert [None, "b"] in wtn

    def test_plurality_matches_recount(self):
        rng = np.random.default_rng(5)
        vocab = ["a", "b", "c", "d"]
        for trial in range(20):
            hyps = [
                [vocab[int(rng.integers(0, 4))] for _ in range(int(rng.integers(1, 6)))] for _ in range(3)
            ]
            scores = rng.normal(size=3).tolist()
            fused = rover(hyps, scores)
            order = sorted(range(3), key=lambda k: (-scores[k], k))
            wtn = build_wtn([hyps[k] for k in order])
            recount = [w for w in (vote_slot(slot, [1.0] * 3) for slot in wtn) if w is not None]
            assert fused == recount

    def test_invariant_to_uniform_duplication(self):
        rng = np.random.default_rng(6)
        hyps = [["a", "b"], ["a", "c"], ["b", "c"]]
        scores = [3.0, 2.0, 1.0]
        base = rover(hyps, scores)
        dup = rover(hyps * 2, [s - i * 1e-6 for i in range(2) for s in scores])
        assert base == dup

    def test_every_output_word_appears_in_some_input_at_its_slot(self):
        rng = np.random.default_rng(7)
        for trial in range(10):
            hyps = [["x", "y", "z"][int(rng.integers(0, 3))] for _ in range(4)], [
                ["x", "y", "z"][int(rng.integers(0, 3))] for _ in range(3)
            ]
            hyps = [list(hyps[0]), list(hyps[1])]
            scores = [1.0, 0.0]
            fused = rover(hyps, scores)
            wtn = build_wtn(hyps)
            assert len(fused) <= len(wtn)
            for w in fused:
                assert any(w in slot for slot in wtn)
