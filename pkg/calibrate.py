"""Ad-hoc desk-scale calibration (not part of the package)."""

import sys
import time

import numpy as np

from streamfuse.beamsearch import BeamConfig, decode
from streamfuse.corpus import CorpusSpec, generate_corpus
from streamfuse.data import load_bundles, pool_single_stream
from streamfuse.model import ModelConfig
from streamfuse.nn import AttentionConfig, DecoderConfig, EncoderConfig
from streamfuse.scoring import corpus_error_rate
from streamfuse.training import (
    FREEZE_PRESETS,
    TrainConfig,
    extract_ufe_bundles,
    train_joint,
    train_stage1,
    train_stage2,
)

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 0
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 10
TRAIN_N = int(sys.argv[3]) if len(sys.argv) > 3 else 120


def model_cfg(n_streams=1, mode="raw", input_dim=8, d_enc=64):
    return ModelConfig(
        vocab_size=10,
        n_streams=n_streams,
        input_mode=mode,
        input_dim=input_dim,
        encoder=EncoderConfig(input_dim=input_dim, conv_layers=((16, 2), (16, 2)), hidden_units=32, projection_units=d_enc)
        if mode == "raw"
        else None,
        frame_att=AttentionConfig(kind="location", att_dim=64),
        stream_att=AttentionConfig(kind="content", att_dim=16),
        decoder=DecoderConfig(embed_dim=32, hidden_units=64),
    )


def wer_of(model, bundles, beam=4):
    cfg = BeamConfig(beam_width=beam, ctc_weight=0.3)
    pairs = []
    for b in bundles:
        hyp = decode(model, b, cfg)
        pairs.append((b.labels.to_text(), hyp[0].text if hyp else ""))
    return corpus_error_rate(pairs)


def main():
    t0 = time.monotonic()
    spec = CorpusSpec(seed=SEED, utterances={"train": TRAIN_N, "dev": 24, "test": 24})
    import tempfile, os
    root = tempfile.mkdtemp(prefix="calib-")
    manifests = generate_corpus(spec, root)
    data = {s: load_bundles(p, vocab_size=10) for s, p in manifests.items()}
    print(f"corpus: {time.monotonic()-t0:.1f}s  T={[b.streams[0].frame_count for b in data['train'][:5]]}")

    tcfg = TrainConfig(seed=SEED, max_epochs=EPOCHS, patience=3, log_wer=False)

    t = time.monotonic()
    s1 = train_stage1(data["train"], data["dev"], model_cfg(), tcfg)
    print(f"stage1 pooled: {time.monotonic()-t:.1f}s epochs={len(s1.log)} "
          f"best={s1.best_valid_loss:.3f} losses={[f'{r.valid_loss:.2f}' for r in s1.log]}")

    t = time.monotonic()
    test_pool = pool_single_stream(data["test"])
    test_s0 = [b for b in test_pool if b.streams[0].stream_id == "s0"]
    test_s1 = [b for b in test_pool if b.streams[0].stream_id == "s1"]
    w_pool_s0 = wer_of(s1.model, test_s0)
    w_pool_s1 = wer_of(s1.model, test_s1)
    print(f"pooled stage1 WER s0={w_pool_s0:.3f} s1={w_pool_s1:.3f} decode={time.monotonic()-t:.1f}s")

    for sid in ("s0", "s1"):
        t = time.monotonic()
        tr = [b for b in pool_single_stream(data["train"]) if b.streams[0].stream_id == sid]
        dv = [b for b in pool_single_stream(data["dev"]) if b.streams[0].stream_id == sid]
        m = train_stage1(tr, dv, model_cfg(), tcfg)
        w = wer_of(m.model, test_s0 if sid == "s0" else test_s1)
        print(f"single-{sid}: {time.monotonic()-t:.1f}s epochs={len(m.log)} WER on own stream={w:.3f}")

    t = time.monotonic()
    ufe_train = extract_ufe_bundles(s1.model, data["train"])
    ufe_dev = extract_ufe_bundles(s1.model, data["dev"])
    ufe_test = extract_ufe_bundles(s1.model, data["test"])
    print(f"ufe extract: {time.monotonic()-t:.1f}s")

    t = time.monotonic()
    cfg2 = model_cfg(n_streams=2, mode="ufe", input_dim=64)
    s2 = train_stage2(ufe_train, ufe_dev, s1.store, FREEZE_PRESETS["att-dec-ctc-freeze"], cfg2, tcfg)
    w2 = wer_of(s2.model, ufe_test)
    print(f"stage2 flagship: {time.monotonic()-t:.1f}s epochs={len(s2.log)} WER={w2:.3f} "
          f"trainable={s2.store.count(trainable_only=True)}/{s2.store.count()}")

    t = time.monotonic()
    s2n = train_stage2(ufe_train, ufe_dev, s1.store, FREEZE_PRESETS["none"], cfg2, tcfg)
    w2n = wer_of(s2n.model, ufe_test)
    print(f"stage2 no-pretrain: {time.monotonic()-t:.1f}s epochs={len(s2n.log)} WER={w2n:.3f}")

    t = time.monotonic()
    jt = train_joint(data["train"], data["dev"], model_cfg(n_streams=2), tcfg)
    wj = wer_of(jt.model, data["test"])
    print(f"joint: {time.monotonic()-t:.1f}s epochs={len(jt.log)} WER={wj:.3f}")

    print(f"TOTAL {time.monotonic()-t0:.1f}s")
    joint_total = jt.store.count()
    print(f"joint params={joint_total} han={s2.store.count('han')} frac={s2.store.count('han')/joint_total:.4f}")


if __name__ == "__main__":
    main()
