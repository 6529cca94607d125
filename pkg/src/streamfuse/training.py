"""Stage-1 pooled training, feature extraction, stage-2 fusion training
with the initialization/freeze grid, and the joint-from-scratch baseline.

All loops are deterministic given (seed, config, data): shuffling, masking
and initialization derive from seeded generators, and parameters update in
sorted-name order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape
from .beamsearch import BeamConfig, decode
from .corpus import AugmentPolicy, spec_augment
from .data import FeatureSequence, StreamBundle, pool_single_stream
from .model import ModelConfig, MtlConfig, MultiStreamModel, label_unigram
from .params import ParameterStore
from .scoring import corpus_error_rate


@dataclass
class ComponentPlan:
    init: str = "random"  # "random" or "stage1"
    trainable: bool = True

    def __post_init__(self):
        if self.init not in ("random", "stage1"):
            raise ValueError(f"unknown init source {self.init!r}")


@dataclass
class FreezePlan:
    """Initialization source and trainability per fusion-stage component.

    The stream-fusion attention is always randomly initialized; freezing
    applies only to components that can carry first-stage weights.
    """

    frame_att: ComponentPlan = field(default_factory=ComponentPlan)
    decoder: ComponentPlan = field(default_factory=ComponentPlan)
    ctc: ComponentPlan = field(default_factory=ComponentPlan)
    han: ComponentPlan = field(default_factory=ComponentPlan)

    def __post_init__(self):
        if self.han.init != "random":
            raise ValueError("stream fusion is always randomly initialized")
        if not any(p.trainable for p in (self.frame_att, self.decoder, self.ctc, self.han)):
            raise ValueError("at least one component must stay trainable")

    def components(self):
        return {"frame_att": self.frame_att, "decoder": self.decoder, "ctc": self.ctc, "han": self.han}


def _plan(pretrained, frozen):
    kw = {}
    for comp in ("frame_att", "decoder", "ctc"):
        if comp in pretrained:
            kw[comp] = ComponentPlan("stage1", trainable=not frozen)
        else:
            kw[comp] = ComponentPlan("random", trainable=True)
    kw["han"] = ComponentPlan("random", trainable=True)
    return FreezePlan(**kw)


# Table-style grid: which components come from stage-1, and whether those
# pretrained components are fine-tuned or frozen during stage-2.
FREEZE_PRESETS = {
    "none": _plan(set(), frozen=False),
    "ctc-finetune": _plan({"ctc"}, frozen=False),
    "ctc-freeze": _plan({"ctc"}, frozen=True),
    "att-finetune": _plan({"frame_att"}, frozen=False),
    "att-freeze": _plan({"frame_att"}, frozen=True),
    "att-dec-finetune": _plan({"frame_att", "decoder"}, frozen=False),
    "att-dec-freeze": _plan({"frame_att", "decoder"}, frozen=True),
    "att-dec-ctc-finetune": _plan({"frame_att", "decoder", "ctc"}, frozen=False),
    "att-dec-ctc-freeze": _plan({"frame_att", "decoder", "ctc"}, frozen=True),
}
FREEZE_PRESETS["freeze-all-pt"] = FREEZE_PRESETS["att-dec-ctc-freeze"]


@dataclass
class TrainConfig:
    batch_size: int = 15
    max_epochs: int = 30
    patience: int = 3
    seed: int = 0
    ctc_weight: float = 0.2
    label_smoothing: float = 0.05
    grad_clip: float = 5.0
    rho: float = 0.95
    # 1e-8 stalls at desk-scale update counts; AdaDelta's warm-up needs
    # thousands of steps there, 1e-6 converges in hundreds
    eps: float = 1e-6
    augment: bool = False
    augment_policy: AugmentPolicy | None = None
    log_wer: bool = True
    dev_beam_width: int = 1

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")


class AdaDelta:
    """Per-parameter adaptive updates (accumulated squared gradients and
    squared updates with decay rho); no global learning rate."""

    def __init__(self, store: ParameterStore, rho=0.95, eps=1e-6):
        self.store = store
        self.rho = rho
        self.eps = eps
        self._acc_g = {}
        self._acc_dx = {}

    def step(self, grad_clip=None):
        items = [(n, t) for n, t in self.store.tensors(trainable_only=True) if t.grad is not None]
        if grad_clip is not None and items:
            norm = math.sqrt(sum(float(np.sum(t.grad**2)) for _, t in items))
            if norm > grad_clip:
                scale = grad_clip / norm
                for _, t in items:
                    t.grad *= scale
        for name, t in items:
            g = t.grad
            acc_g = self._acc_g.setdefault(name, np.zeros_like(t.values))
            acc_dx = self._acc_dx.setdefault(name, np.zeros_like(t.values))
            acc_g *= self.rho
            acc_g += (1.0 - self.rho) * g * g
            dx = -np.sqrt(acc_dx + self.eps) / np.sqrt(acc_g + self.eps) * g
            acc_dx *= self.rho
            acc_dx += (1.0 - self.rho) * dx * dx
            t.values += dx


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    valid_wer: float | None
    trainable_params: int

    def to_line(self):
        wer = "nan" if self.valid_wer is None else f"{self.valid_wer:.4f}"
        return (
            f"epoch={self.epoch} train_loss={self.train_loss:.6f} "
            f"valid_loss={self.valid_loss:.6f} valid_wer={wer} "
            f"trainable_params={self.trainable_params}"
        )


@dataclass
class TrainResult:
    model: MultiStreamModel
    log: list
    best_epoch: int
    best_valid_loss: float

    @property
    def store(self):
        return self.model.store


def _augmented(bundle: StreamBundle, policy, rng):
    streams = [
        FeatureSequence(spec_augment(s.frames, policy, rng), s.utterance_id, s.stream_id, s.kind)
        for s in bundle.streams
    ]
    return StreamBundle(bundle.utterance_id, streams, bundle.labels)


def _greedy_wer(model, bundles):
    cfg = BeamConfig(beam_width=1)
    pairs = []
    for b in bundles:
        hyp = decode(model, b, cfg)
        pairs.append((b.labels.to_text(), hyp[0].text if hyp else ""))
    return corpus_error_rate(pairs)


def run_training(model: MultiStreamModel, train_bundles, dev_bundles, cfg: TrainConfig) -> TrainResult:
    """Generic loop: batched teacher-forced updates, per-epoch validation
    loss, patience-based early stopping, best-checkpoint retention."""
    if not train_bundles:
        raise ValueError("empty training corpus")
    if not dev_bundles:
        raise ValueError("empty validation corpus")
    mtl = MtlConfig(ctc_weight=cfg.ctc_weight, label_smoothing=cfg.label_smoothing)
    unigram = label_unigram([b.labels for b in train_bundles], model.cfg.vocab_size)
    opt = AdaDelta(model.store, rho=cfg.rho, eps=cfg.eps)
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    policy = cfg.augment_policy or AugmentPolicy()
    n_trainable = model.store.count(trainable_only=True)

    log = []
    best_snap = model.store.snapshot()
    best_loss = math.inf
    best_epoch = 0
    bad_epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_bundles))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_bundles[int(i)] for i in order[start : start + cfg.batch_size]]
            model.store.zero_grads()
            with Tape() as tape:
                loss = None
                for b in batch:
                    if cfg.augment:
                        b = _augmented(b, policy, rng)
                    term, _ = model.forward_mtl(b, mtl, unigram)
                    loss = term if loss is None else loss + term
                loss = loss * (1.0 / len(batch))
                tape.backward(loss)
            opt.step(cfg.grad_clip)
            total += float(loss.values) * len(batch)
        train_loss = total / len(order)

        valid_loss = 0.0
        for b in dev_bundles:
            term, _ = model.forward_mtl(b, mtl, unigram)
            valid_loss += float(term.values)
        valid_loss /= len(dev_bundles)
        valid_wer = _greedy_wer(model, dev_bundles) if cfg.log_wer else None
        log.append(EpochRecord(epoch, train_loss, valid_loss, valid_wer, n_trainable))

        if valid_loss < best_loss:
            best_loss = valid_loss
            best_epoch = epoch
            best_snap = model.store.snapshot()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    model.store.restore(best_snap)
    return TrainResult(model, log, best_epoch, best_loss)


# -- stage 1 -------------------------------------------------------------------


def train_stage1(train_bundles, dev_bundles, model_cfg: ModelConfig, cfg: TrainConfig) -> TrainResult:
    """Pooled single-stream training: every stream of every utterance is an
    independent training sample for one shared encoder."""
    if model_cfg.n_streams != 1:
        model_cfg = replace(model_cfg, n_streams=1)
    model = MultiStreamModel(model_cfg, seed=cfg.seed)
    return run_training(model, pool_single_stream(train_bundles), pool_single_stream(dev_bundles), cfg)


def extract_ufe_bundles(model: MultiStreamModel, bundles) -> list[StreamBundle]:
    """Per-stream encoder outputs for every utterance, labels preserved."""
    out = []
    for b in bundles:
        streams = [model.extract_ufe(s) for s in b.streams]
        out.append(StreamBundle(b.utterance_id, streams, b.labels))
    return out


# -- stage 2 -------------------------------------------------------------------


def _stage2_mapping(component, n_streams):
    """stage-2 name -> stage-1 name for one component's parameters."""
    if component == "decoder":
        return lambda store1: {n: n for n in store1.names("decoder")}

    def build(store1):
        mapping = {}
        for src in store1.names(component):
            tail = src.split("/", 2)[2]  # strip "<comp>/stream0/"
            for i in range(n_streams):
                mapping[f"{component}/stream{i}/{tail}"] = src
        return mapping

    return build


def build_stage2_model(stage1_store: ParameterStore, plan: FreezePlan, model_cfg: ModelConfig, seed=0):
    """Fusion-stage model on precomputed features: components are untied
    per-stream copies, initialized and frozen according to the plan."""
    if model_cfg.input_mode != "ufe":
        raise ValueError("stage-2 model must consume precomputed features")
    model = MultiStreamModel(model_cfg, seed=seed)
    for comp, cplan in plan.components().items():
        if comp == "han":
            continue
        if cplan.init == "stage1":
            mapping = _stage2_mapping(comp, model_cfg.n_streams)(stage1_store)
            model.store.copy_values_from(stage1_store, mapping)
        model.store.set_trainable(comp, cplan.trainable)
    if model.cfg.n_streams > 1:
        model.store.set_trainable("han", plan.han.trainable)
    return model


def train_stage2(train_bundles, dev_bundles, stage1_store, plan: FreezePlan, model_cfg, cfg: TrainConfig):
    model = build_stage2_model(stage1_store, plan, model_cfg, seed=cfg.seed)
    frozen_before = {
        n: t.values.tobytes() for n, t in model.store.tensors() if not t.requires_grad
    }
    result = run_training(model, train_bundles, dev_bundles, cfg)
    for name, raw in frozen_before.items():
        if model.store[name].values.tobytes() != raw:
            raise AssertionError(f"frozen parameter {name!r} changed during stage-2 training")
    return result


# -- joint baseline ------------------------------------------------------------


def train_joint(train_bundles, dev_bundles, model_cfg: ModelConfig, cfg: TrainConfig) -> TrainResult:
    """Full model, encoders included, trained end to end from scratch."""
    model = MultiStreamModel(model_cfg, seed=cfg.seed)
    return run_training(model, train_bundles, dev_bundles, cfg)


# -- language model ---------------------------------------------------------


def train_lm(train_labels, dev_labels, lm_cfg, cfg: TrainConfig):
    """Character-LM training on the label side of the corpus; patience on
    held-out token NLL."""
    from .lm import CharLm

    if not train_labels:
        raise ValueError("empty language-model training set")
    lm = CharLm(lm_cfg, seed=cfg.seed)
    opt = AdaDelta(lm.store, rho=cfg.rho, eps=cfg.eps)
    rng = np.random.default_rng([cfg.seed, 0x1A])
    best_snap = lm.store.snapshot()
    best = math.inf
    bad = 0
    log = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_labels))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_labels[int(i)] for i in order[start : start + cfg.batch_size]]
            lm.store.zero_grads()
            with Tape() as tape:
                loss = None
                for seq in batch:
                    term = lm.nll(seq.ids)
                    loss = term if loss is None else loss + term
                loss = loss * (1.0 / len(batch))
                tape.backward(loss)
            opt.step(cfg.grad_clip)
            total += float(loss.values) * len(batch)
        dev = sum(float(lm.nll(seq.ids).values) for seq in dev_labels) / max(len(dev_labels), 1)
        log.append(f"epoch={epoch} train_nll={total / len(order):.6f} valid_nll={dev:.6f}")
        if dev < best:
            best, bad, best_snap = dev, 0, lm.store.snapshot()
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    lm.store.restore(best_snap)
    return lm, log


# -- persistence ---------------------------------------------------------------


def save_model(model: MultiStreamModel, out_dir, result: TrainResult | None = None):
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "model.ckpt")
    model.store.save(ckpt)
    with open(os.path.join(out_dir, "model.json"), "w", encoding="utf-8") as f:
        f.write(model.cfg.to_json() + "\n")
    if result is not None:
        with open(os.path.join(out_dir, "train.log"), "w", encoding="utf-8") as f:
            for rec in result.log:
                f.write(rec.to_line() + "\n")
    return ckpt


def load_model(model_dir) -> MultiStreamModel:
    with open(os.path.join(model_dir, "model.json"), encoding="utf-8") as f:
        cfg = ModelConfig.from_json(f.read())
    store = ParameterStore.load(os.path.join(model_dir, "model.ckpt"))
    return MultiStreamModel(cfg, store=store)
