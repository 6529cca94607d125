"""Multi-task forward, label smoothing, and feature extraction."""

import math
import os

import numpy as np
import pytest

from streamfuse import autodiff as ad
from streamfuse.autodiff import Tape, Tensor
from streamfuse.data import (
    FeatureSequence,
    LabelSequence,
    StreamBundle,
    read_feature_file,
    write_feature_file,
)
from streamfuse.model import (
    ModelConfig,
    MtlConfig,
    MultiStreamModel,
    attention_xent,
    label_unigram,
    mtl_combine,
)
from streamfuse.nn import AttentionConfig, DecoderConfig, EncoderConfig


def small_model(n_streams=1, mode="raw", vocab=5, seed=0, input_dim=6):
    cfg = ModelConfig(
        vocab_size=vocab,
        n_streams=n_streams,
        input_mode=mode,
        input_dim=input_dim,
        encoder=EncoderConfig(input_dim=input_dim, conv_layers=((8, 2), (8, 2)), hidden_units=8, projection_units=10)
        if mode == "raw"
        else None,
        frame_att=AttentionConfig(kind="location", att_dim=8),
        stream_att=AttentionConfig(kind="content", att_dim=6),
        decoder=DecoderConfig(embed_dim=6, hidden_units=12),
    )
    return MultiStreamModel(cfg, seed=seed)


def raw_bundle(n_streams=1, T=20, D=6, vocab=5, L=3, seed=0, utt="u0"):
    rng = np.random.default_rng(seed)
    streams = [FeatureSequence(rng.normal(size=(T, D)), utt, f"s{i}") for i in range(n_streams)]
    labels = LabelSequence(rng.integers(0, vocab, size=L).tolist(), vocab)
    return StreamBundle(utt, streams, labels)


class TestMtlCombination:
    def test_lambda_endpoints(self):
        model = small_model()
        bundle = raw_bundle()
        loss0, diag0 = model.forward_mtl(bundle, MtlConfig(ctc_weight=0.0, label_smoothing=0.0))
        assert loss0.item() == pytest.approx(diag0["att_loss"], abs=1e-12)
        loss1, diag1 = model.forward_mtl(bundle, MtlConfig(ctc_weight=1.0, label_smoothing=0.0))
        assert loss1.item() == pytest.approx(diag1["ctc_loss"], abs=1e-12)

    def test_known_component_losses(self):
        # weight 0.2 on a ctc loss of 1 and attention loss of 2 -> 1.8
        assert mtl_combine(Tensor(1.0), Tensor(2.0), 0.2).item() == pytest.approx(1.8, abs=1e-12)

    def test_linear_in_weight(self):
        model = small_model(seed=2)
        bundle = raw_bundle(seed=2)
        losses = {}
        for lam in (0.0, 0.3, 0.7, 1.0):
            losses[lam], _ = model.forward_mtl(bundle, MtlConfig(ctc_weight=lam, label_smoothing=0.0))
        for lam in (0.3, 0.7):
            expect = lam * losses[1.0].item() + (1 - lam) * losses[0.0].item()
            assert losses[lam].item() == pytest.approx(expect, rel=1e-12)

    def test_multi_stream_uses_averaged_ctc(self):
        model = small_model(n_streams=2, seed=3)
        bundle = raw_bundle(n_streams=2, seed=3)
        loss, diag = model.forward_mtl(bundle, MtlConfig(ctc_weight=1.0, label_smoothing=0.0))
        reprs = model.stream_reprs(bundle)
        from streamfuse.ctc import ctc_loss

        per_stream = [
            ctc_loss(model.ctc_log_posteriors(i, reprs[i]), bundle.labels.ids).item() for i in range(2)
        ]
        assert loss.item() == pytest.approx(np.mean(per_stream), abs=1e-9)

    def test_beta_diagnostics_form_simplex(self):
        model = small_model(n_streams=2, seed=4)
        bundle = raw_bundle(n_streams=2, seed=4)
        _, diag = model.forward_mtl(bundle, MtlConfig(), collect_diagnostics=True)
        assert len(diag["beta"]) == len(bundle.labels) + 1
        for beta in diag["beta"]:
            assert beta.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(beta >= 0)

    def test_mode_mismatch_rejected(self):
        model = small_model(mode="raw")
        rng = np.random.default_rng(0)
        ufe_stream = FeatureSequence(rng.normal(size=(4, 10)), "u0", "s0", kind="ufe")
        bundle = StreamBundle("u0", [ufe_stream], LabelSequence([0], 5))
        with pytest.raises(ValueError, match="expects 'raw'"):
            model.forward_mtl(bundle, MtlConfig())


class TestAttentionXent:
    def test_perfect_onehot_zero_loss(self):
        logp = np.full((3, 4), -1e9)
        logp[np.arange(3), [1, 0, 3]] = 0.0
        loss = attention_xent(Tensor(logp), [1, 0, 3], smoothing=0.0)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_predictions(self):
        V, L = 6, 4
        logp = np.full((L, V), -math.log(V))
        loss = attention_xent(Tensor(logp), [0, 1, 2, 3], smoothing=0.05, unigram=np.full(V, 1 / V))
        assert loss.item() == pytest.approx(L * math.log(V), abs=1e-12)

    def test_smoothed_matches_direct_formula(self):
        rng = np.random.default_rng(6)
        V, L, w = 5, 3, 0.05
        logits = rng.normal(size=(L, V))
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        targets = [2, 0, 4]
        unigram = rng.uniform(0.1, 1.0, size=V)
        unigram /= unigram.sum()
        expected = 0.0
        for l in range(L):
            q = (1 - w) * np.eye(V)[targets[l]] + w * unigram
            expected += -(q * logp[l]).sum()
        got = attention_xent(Tensor(logp), targets, smoothing=w, unigram=unigram)
        assert got.item() == pytest.approx(expected, abs=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="target positions"):
            attention_xent(Tensor(np.zeros((3, 4))), [0, 1])


class TestEndToEndGradient:
    def test_mtl_gradient_matches_finite_differences(self):
        model = small_model(n_streams=2, seed=9)
        bundle = raw_bundle(n_streams=2, T=20, seed=9)
        mtl = MtlConfig(ctc_weight=0.3, label_smoothing=0.05)
        unigram = label_unigram([bundle.labels], 5)

        model.store.zero_grads()
        with Tape() as tape:
            loss, _ = model.forward_mtl(bundle, mtl, unigram)
            tape.backward(loss)

        rng = np.random.default_rng(0)
        h = 1e-5
        for component in ("encoder", "frame_att", "han", "decoder", "ctc"):
            names = list(model.store.names(component))
            name = names[int(rng.integers(len(names)))]
            t = model.store[name]
            flat_idx = int(rng.integers(t.values.size))
            idx = np.unravel_index(flat_idx, t.values.shape)
            orig = t.values[idx]
            t.values[idx] = orig + h
            fp = model.forward_mtl(bundle, mtl, unigram)[0].item()
            t.values[idx] = orig - h
            fm = model.forward_mtl(bundle, mtl, unigram)[0].item()
            t.values[idx] = orig
            fd = (fp - fm) / (2 * h)
            an = t.grad_array()[idx]
            assert abs(an - fd) <= 1e-8 + 1e-4 * max(abs(an), abs(fd)), f"{name}[{idx}]"


class TestUfeExtraction:
    def test_extraction_equals_encode(self):
        model = small_model(seed=12)
        bundle = raw_bundle(seed=12)
        seq = bundle.streams[0]
        ufe = model.extract_ufe(seq)
        direct = model.encode_stream(0, seq.frames).values
        assert np.array_equal(ufe.frames, direct)
        assert ufe.kind == "ufe"
        assert ufe.utterance_id == seq.utterance_id
        assert ufe.stream_id == seq.stream_id

    def test_roundtrip_bitwise(self, tmp_path):
        model = small_model(seed=13)
        ufe = model.extract_ufe(raw_bundle(seed=13).streams[0])
        path = tmp_path / "u0.s0.feat"
        write_feature_file(path, ufe)
        back = read_feature_file(path)
        assert np.array_equal(back.frames, ufe.frames)
        assert back.kind == "ufe"

    def test_extraction_requires_encoder(self):
        model = small_model(mode="ufe", input_dim=10)
        seq = FeatureSequence(np.zeros((4, 10)), "u0", "s0", kind="ufe")
        with pytest.raises(ValueError, match="encoder"):
            model.extract_ufe(seq)

    def test_feature_payload_ratio_matches_configuration(self, tmp_path):
        # at s=4, 320-dim extracted features occupy ~0.96x the bytes of
        # 83-dim raw frames (320 / (4*83))
        rng = np.random.default_rng(0)
        t, d_in, d_enc, s = 400, 83, 320, 4
        raw = FeatureSequence(rng.normal(size=(t, d_in)), "u0", "s0", kind="raw")
        ufe = FeatureSequence(rng.normal(size=(t // s, d_enc)), "u0", "s0", kind="ufe")
        p_raw, p_ufe = tmp_path / "raw.feat", tmp_path / "ufe.feat"
        write_feature_file(p_raw, raw)
        write_feature_file(p_ufe, ufe)
        ratio = os.path.getsize(p_ufe) / os.path.getsize(p_raw)
        assert ratio == pytest.approx(d_enc / (s * d_in), rel=0.01)
        assert ratio < 1.0


class TestStageEquivalence:
    def test_fusion_model_on_extracted_features_matches_joint_forward(self):
        # the encoder is a pure prefix of the graph: running the fusion
        # stage on extracted features reproduces the joint forward exactly
        joint = small_model(n_streams=2, seed=21)
        bundle = raw_bundle(n_streams=2, T=20, seed=21)
        mtl = MtlConfig(ctc_weight=0.2, label_smoothing=0.05)
        unigram = label_unigram([bundle.labels], 5)
        joint_loss, _ = joint.forward_mtl(bundle, mtl, unigram)

        ufe_streams = []
        for i, seq in enumerate(bundle.streams):
            h = joint.encode_stream(i, seq.frames).values
            ufe_streams.append(FeatureSequence(h, bundle.utterance_id, seq.stream_id, kind="ufe"))
        ufe_bundle = StreamBundle(bundle.utterance_id, ufe_streams, bundle.labels)

        cfg2 = ModelConfig(
            vocab_size=5,
            n_streams=2,
            input_mode="ufe",
            input_dim=10,
            frame_att=joint.cfg.frame_att,
            stream_att=joint.cfg.stream_att,
            decoder=joint.cfg.decoder,
        )
        stage2 = MultiStreamModel(cfg2, store=joint.store)
        stage2_loss, _ = stage2.forward_mtl(ufe_bundle, mtl, unigram)
        assert stage2_loss.item() == pytest.approx(joint_loss.item(), abs=1e-9)
