"""Command-line surface tying corpus synthesis, training, decoding,
fusion baselines, and scoring together.

All verbs exit nonzero on error.  Training-style verbs accept flat
key=value config files (--config) and inline overrides (--set), applied
to the training configuration in that order.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .beamsearch import BeamConfig, DecodeStats, decode, read_decode_file, write_decode_file
from .config import apply_overrides, parse_kv_file, parse_kv_pairs
from .corpus import CorpusSpec, generate_corpus, load_corpus_spec
from .data import (
    LabelSequence,
    ManifestEntry,
    StreamBundle,
    load_bundles,
    read_manifest,
    write_feature_file,
    write_manifest,
)
from .fusion import fuse_corpus_split, rover
from .lm import CharLm, LmConfig
from .model import ModelConfig, MultiStreamModel
from .nn import AttentionConfig
from .params import ParameterStore
from .reports import (
    SystemSpec,
    beta_trace,
    compare_fusion,
    render_comparison,
    write_beta_trace,
    write_comparison_tsv,
)
from .scoring import refs_from_manifest_entries, score
from .training import (
    FREEZE_PRESETS,
    TrainConfig,
    build_stage2_model,
    extract_ufe_bundles,
    load_model,
    save_model,
    train_joint,
    train_lm,
    train_stage1,
    train_stage2,
)

DEFAULT_SPLITS = ("train", "dev", "test")


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig()
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(parse_kv_file(args.config))
    overrides.update(parse_kv_pairs(getattr(args, "set", None)))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if getattr(args, "seed", None) is not None:
        cfg = apply_overrides(cfg, {"seed": str(args.seed)})
    return cfg


def _corpus_bundles(corpus_dir, split, streams=None):
    spec = load_corpus_spec(corpus_dir)
    manifest = os.path.join(corpus_dir, f"{split}.manifest")
    return spec, load_bundles(manifest, vocab_size=spec.vocab_size, streams=streams)


def _model_config(spec: CorpusSpec, args, n_streams, input_mode="raw", input_dim=None) -> ModelConfig:
    frame_kind = getattr(args, "frame_att_kind", None) or "location"
    stream_kind = getattr(args, "stream_att_kind", None) or "content"
    return ModelConfig(
        vocab_size=spec.vocab_size,
        n_streams=n_streams,
        input_mode=input_mode,
        input_dim=input_dim if input_dim is not None else spec.feature_dim,
        frame_att=AttentionConfig(kind=frame_kind),
        stream_att=AttentionConfig(kind=stream_kind, att_dim=16),
    )


def _print_log(result):
    for rec in result.log:
        print(rec.to_line())


def cmd_generate_corpus(args):
    spec = CorpusSpec(seed=args.seed)
    overrides = {}
    if args.config:
        overrides.update(parse_kv_file(args.config))
    overrides.update(parse_kv_pairs(args.set))
    counts = {}
    for split in DEFAULT_SPLITS:
        key = f"{split}_count"
        if key in overrides:
            counts[split] = int(overrides.pop(key))
    if overrides:
        spec = apply_overrides(spec, overrides)
    if counts:
        spec.utterances = {**spec.utterances, **counts}
    manifests = generate_corpus(spec, args.out)
    for split, path in sorted(manifests.items()):
        print(f"{split}: {path}")


def cmd_train_stage1(args):
    cfg = _train_config(args)
    streams = args.streams.split(",") if args.streams else None
    spec, train_b = _corpus_bundles(args.corpus, "train", streams)
    _, dev_b = _corpus_bundles(args.corpus, "dev", streams)
    model_cfg = _model_config(spec, args, n_streams=1)
    result = train_stage1(train_b, dev_b, model_cfg, cfg)
    save_model(result.model, args.out, result)
    _print_log(result)


def cmd_extract_ufe(args):
    model = load_model(args.model)
    spec = load_corpus_spec(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    for split in args.splits.split(","):
        _, bundles = _corpus_bundles(args.corpus, split)
        feat_dir = os.path.join(args.out, "features", split)
        os.makedirs(feat_dir, exist_ok=True)
        entries = []
        for b in extract_ufe_bundles(model, bundles):
            for seq in b.streams:
                rel = os.path.join("features", split, f"{seq.utterance_id}.{seq.stream_id}.feat")
                write_feature_file(os.path.join(args.out, rel), seq)
                entries.append(ManifestEntry(seq.utterance_id, seq.stream_id, rel, seq.frame_count))
        write_manifest(os.path.join(args.out, f"{split}.manifest"), entries)
    meta = {"dim": model.cfg.repr_dim, "vocab_size": model.cfg.vocab_size, "source_model": args.model}
    with open(os.path.join(args.out, "ufe.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"extracted features for splits {args.splits} into {args.out}")


def _ufe_bundles(ufe_dir, corpus_dir, split, with_labels=True):
    with open(os.path.join(ufe_dir, "ufe.json"), encoding="utf-8") as f:
        meta = json.load(f)
    bundles = load_bundles(os.path.join(ufe_dir, f"{split}.manifest"))
    if with_labels:
        refs = refs_from_manifest_entries(read_manifest(os.path.join(corpus_dir, f"{split}.manifest")))
        labeled = []
        for b in bundles:
            labels = LabelSequence.from_text(refs[b.utterance_id], meta["vocab_size"])
            labeled.append(StreamBundle(b.utterance_id, b.streams, labels))
        bundles = labeled
    return meta, bundles


def cmd_train_stage2(args):
    cfg = _train_config(args)
    if args.freeze_plan not in FREEZE_PRESETS:
        raise SystemExit(f"unknown freeze plan {args.freeze_plan!r}; presets: {sorted(FREEZE_PRESETS)}")
    plan = FREEZE_PRESETS[args.freeze_plan]
    meta, train_b = _ufe_bundles(args.ufe, args.corpus, "train")
    _, dev_b = _ufe_bundles(args.ufe, args.corpus, "dev")
    spec = load_corpus_spec(args.corpus)
    n_streams = train_b[0].n_streams
    model_cfg = _model_config(spec, args, n_streams=n_streams, input_mode="ufe", input_dim=meta["dim"])
    stage1_store = ParameterStore.load(os.path.join(args.stage1, "model.ckpt"))
    result = train_stage2(train_b, dev_b, stage1_store, plan, model_cfg, cfg)
    save_model(result.model, args.out, result)
    trainable = result.store.count(trainable_only=True)
    print(f"freeze plan {args.freeze_plan}: {trainable} trainable of {result.store.count()} parameters")
    _print_log(result)


def cmd_train_joint(args):
    cfg = _train_config(args)
    spec, train_b = _corpus_bundles(args.corpus, "train")
    _, dev_b = _corpus_bundles(args.corpus, "dev")
    model_cfg = _model_config(spec, args, n_streams=train_b[0].n_streams)
    result = train_joint(train_b, dev_b, model_cfg, cfg)
    save_model(result.model, args.out, result)
    _print_log(result)


def cmd_train_lm(args):
    cfg = _train_config(args)
    spec, train_b = _corpus_bundles(args.corpus, "train")
    _, dev_b = _corpus_bundles(args.corpus, "dev")
    lm_cfg = LmConfig(vocab_size=spec.vocab_size)
    lm, log = train_lm([b.labels for b in train_b], [b.labels for b in dev_b], lm_cfg, cfg)
    os.makedirs(args.out, exist_ok=True)
    lm.store.save(os.path.join(args.out, "lm.ckpt"))
    with open(os.path.join(args.out, "lm.json"), "w", encoding="utf-8") as f:
        f.write(lm_cfg.to_json() + "\n")
    for line in log:
        print(line)


def _load_lm(lm_dir) -> CharLm:
    with open(os.path.join(lm_dir, "lm.json"), encoding="utf-8") as f:
        cfg = LmConfig.from_json(f.read())
    return CharLm(cfg, store=ParameterStore.load(os.path.join(lm_dir, "lm.ckpt")))


def cmd_decode(args):
    model = load_model(args.model)
    if args.ufe:
        _, bundles = _ufe_bundles(args.ufe, args.corpus, args.split, with_labels=False)
    else:
        _, bundles = _corpus_bundles(args.corpus, args.split)
    lm = _load_lm(args.lm) if args.lm else None
    cfg = BeamConfig(
        beam_width=args.beam_width,
        ctc_weight=args.ctc_weight,
        lm_weight=args.lm_weight,
        max_len_ratio=args.max_len_ratio,
    )
    results = []
    for b in bundles:
        hyps = decode(model, b, cfg, lm=lm, stats=DecodeStats())
        results.append(hyps[0])
    write_decode_file(args.out, results, diagnostics=not args.no_diagnostics)
    print(f"decoded {len(results)} utterances -> {args.out}")


def _refs(corpus_dir, split):
    return refs_from_manifest_entries(read_manifest(os.path.join(corpus_dir, f"{split}.manifest")))


def cmd_score(args):
    refs = _refs(args.corpus, args.split)
    hyps = {r["utterance_id"]: r["text"] for r in read_decode_file(args.hyps)}
    report = score(refs, hyps, unit=args.unit)
    t = report.totals
    if args.per_utt:
        for utt in sorted(report.per_utterance):
            c = report.per_utterance[utt]
            print(f"{utt}\tS={c.substitutions}\tI={c.insertions}\tD={c.deletions}\tN={c.ref_units}")
    print(
        f"{args.unit} error rate: {report.error_rate:.4f} "
        f"(S={t.substitutions} I={t.insertions} D={t.deletions} N={t.ref_units})"
    )


def cmd_compare_fusion(args):
    systems = []
    for item in args.system:
        if "=" not in item:
            raise SystemExit(f"--system expects NAME=DECODE[:CKPT,...], got {item!r}")
        name, rest = item.split("=", 1)
        parts = rest.split(":")
        ckpts = tuple(p for p in parts[1].split(",") if p) if len(parts) > 1 and parts[1] else ()
        systems.append(SystemSpec(name, parts[0], ckpts))
    refs = _refs(args.corpus, args.split)
    rows = compare_fusion(systems, refs, unit=args.unit)
    text = render_comparison(rows, unit=args.unit)
    if args.out_table:
        with open(args.out_table, "w", encoding="utf-8") as f:
            f.write(text)
    if args.out_data:
        write_comparison_tsv(args.out_data, rows, unit=args.unit)
    print(text, end="")


def cmd_beta_trace(args):
    rows = beta_trace(read_decode_file(args.decode))
    write_beta_trace(args.out, rows)
    print(f"wrote {len(rows)} stream-weight rows -> {args.out}")


def _cmd_fuse(args, mode):
    spec = load_corpus_spec(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    for split in args.splits.split(","):
        _, bundles = _corpus_bundles(args.corpus, split)
        fuse_corpus_split(bundles, mode, args.out, split)
    meta = spec.to_json()
    with open(os.path.join(args.out, "corpus.json"), "w", encoding="utf-8") as f:
        f.write(meta + "\n")
    print(f"wrote {mode}-fused corpus -> {args.out}")


def cmd_rover(args):
    if len(args.decode) < 2:
        raise SystemExit("rover needs at least two decode files")
    per_file = [read_decode_file(p) for p in args.decode]
    by_utt = {}
    for records in per_file:
        for rec in records:
            by_utt.setdefault(rec["utterance_id"], []).append(rec)
    fused = []
    for utt in sorted(by_utt):
        recs = by_utt[utt]
        if len(recs) != len(per_file):
            raise SystemExit(f"utterance {utt!r} is missing from some decode files")
        hyps = [r["text"].split() for r in recs]
        scores = [r["score"] for r in recs]
        words = rover(hyps, scores, weighted=args.weighted)
        best = max(range(len(recs)), key=lambda k: scores[k])
        fused.append(
            {
                "utterance_id": utt,
                "text": " ".join(words),
                "score": scores[best],
                "att_score": None,
                "ctc_score": None,
                "lm_score": None,
                "beta": None,
            }
        )
    with open(args.out, "w", encoding="utf-8") as f:
        for rec in fused:
            f.write(json.dumps(rec) + "\n")
    print(f"fused {len(fused)} utterances -> {args.out}")


def _add_train_flags(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="inline config override")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frame-att-kind", choices=("location", "content"), default=None)
    p.add_argument("--stream-att-kind", choices=("location", "content"), default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="streamfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-corpus", help="synthesize a multi-stream corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="flat key=value corpus spec overrides")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_generate_corpus)

    p = sub.add_parser("train-stage1", help="pooled single-stream training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--streams", help="comma-separated stream ids to train on (default: all)")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_stage1)

    p = sub.add_parser("extract-ufe", help="write encoder-output features for each stream")
    p.add_argument("--model", required=True, help="stage-1 model directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", default="train,dev,test")
    p.set_defaults(fn=cmd_extract_ufe)

    p = sub.add_parser("train-stage2", help="fusion training on extracted features")
    p.add_argument("--ufe", required=True)
    p.add_argument("--corpus", required=True, help="corpus directory (transcripts)")
    p.add_argument("--stage1", required=True, help="stage-1 model directory")
    p.add_argument("--freeze-plan", required=True, help=f"one of {sorted(FREEZE_PRESETS)}")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_stage2)

    p = sub.add_parser("train-joint", help="joint multi-encoder baseline from scratch")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_joint)

    p = sub.add_parser("train-lm", help="character language model on the label text")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_lm)

    p = sub.add_parser("decode", help="joint beam-search decoding")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ufe", help="decode precomputed features from this directory")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--beam-width", type=int, default=4)
    p.add_argument("--ctc-weight", type=float, default=0.3)
    p.add_argument("--lm", help="language model directory for shallow fusion")
    p.add_argument("--lm-weight", type=float, default=0.0)
    p.add_argument("--max-len-ratio", type=float, default=1.5)
    p.add_argument("--no-diagnostics", action="store_true")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("score", help="WER/CER against corpus transcripts")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--hyps", required=True, help="decode output file")
    p.add_argument("--unit", choices=("word", "char"), default="word")
    p.add_argument("--per-utt", action="store_true")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("compare-fusion", help="comparison table across systems")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--unit", choices=("word", "char"), default="word")
    p.add_argument("--system", action="append", required=True, metavar="NAME=DECODE[:CKPT,...]")
    p.add_argument("--out-table")
    p.add_argument("--out-data")
    p.set_defaults(fn=cmd_compare_fusion)

    p = sub.add_parser("beta-trace", help="per-step stream weights from decode diagnostics")
    p.add_argument("--decode", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_beta_trace)

    p = sub.add_parser("fuse-signal-average", help="average streams into a single-stream corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", default="train,dev,test")
    p.set_defaults(fn=lambda a: _cmd_fuse(a, "average"))

    p = sub.add_parser("fuse-frame-concat", help="concatenate streams along the feature axis")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", default="train,dev,test")
    p.set_defaults(fn=lambda a: _cmd_fuse(a, "concat"))

    p = sub.add_parser("rover", help="word-level voting over decode outputs")
    p.add_argument("--decode", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weighted", action="store_true")
    p.set_defaults(fn=cmd_rover)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
