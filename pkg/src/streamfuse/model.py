"""The full multi-stream network: per-stream encoders (or precomputed
encoder-output inputs), per-stream frame attention, stream-level fusion,
shared decoder, and per-stream CTC heads, trained with the weighted
CTC + attention multi-task objective.

The single-stream configuration is the N=1 instantiation with stream
fusion bypassed, so first-stage and fusion-stage training share one
code path.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .ctc import ctc_loss, multi_stream_ctc
from .data import FeatureSequence, LabelSequence, StreamBundle
from .nn import Attention, AttentionConfig, Decoder, DecoderConfig, EncoderConfig, encode, init_encoder
from .params import ParameterStore


@dataclass
class MtlConfig:
    """Loss mix: ctc_weight * ctc + (1 - ctc_weight) * attention."""

    ctc_weight: float = 0.2
    label_smoothing: float = 0.05
    smoothing_type: str = "unigram"

    def __post_init__(self):
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError(f"ctc_weight must be in [0, 1], got {self.ctc_weight}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")


@dataclass
class ModelConfig:
    vocab_size: int
    n_streams: int = 1
    input_mode: str = "raw"  # "raw" features through encoders, or "ufe" precomputed
    input_dim: int = 8
    encoder: EncoderConfig | None = None
    frame_att: AttentionConfig = field(default_factory=lambda: AttentionConfig(kind="location"))
    stream_att: AttentionConfig = field(default_factory=lambda: AttentionConfig(kind="content", att_dim=16))
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self):
        if self.n_streams < 1:
            raise ValueError("need at least one stream")
        if self.input_mode not in ("raw", "ufe"):
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if self.input_mode == "raw":
            if self.encoder is None:
                self.encoder = EncoderConfig(input_dim=self.input_dim)
            if self.encoder.input_dim != self.input_dim:
                raise ValueError("encoder input_dim disagrees with model input_dim")
        elif self.encoder is not None:
            raise ValueError("ufe-mode model takes precomputed features; no encoder config allowed")

    @property
    def repr_dim(self):
        """Dimensionality of the per-stream representation the decoder sees."""
        return self.encoder.projection_units if self.input_mode == "raw" else self.input_dim

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text) -> "ModelConfig":
        raw = json.loads(text)
        enc = raw.pop("encoder", None)
        fa = raw.pop("frame_att")
        sa = raw.pop("stream_att")
        dec = raw.pop("decoder")
        return cls(
            encoder=EncoderConfig(**{**enc, "conv_layers": tuple(map(tuple, enc["conv_layers"]))})
            if enc
            else None,
            frame_att=AttentionConfig(**fa),
            stream_att=AttentionConfig(**sa),
            decoder=DecoderConfig(**dec),
            **raw,
        )


def mtl_combine(ctc_term: Tensor, att_term: Tensor, ctc_weight: float) -> Tensor:
    """Weighted multi-task loss from its two component losses."""
    return ad.add(ad.mul(ctc_term, ctc_weight), ad.mul(att_term, 1.0 - ctc_weight))


def attention_xent(log_probs: Tensor, targets, smoothing=0.0, unigram=None) -> Tensor:
    """Sequence negative log likelihood with optional unigram label smoothing.

    log_probs: (L, V') per-position log distributions (V' includes eos);
    targets: L token ids.  The smoothed target mixes the one-hot with the
    label unigram distribution at the given weight.
    """
    L, V = log_probs.shape
    targets = list(targets)
    if len(targets) != L:
        raise ValueError(f"{L} distributions for {len(targets)} target positions")
    onehot = np.zeros((L, V))
    onehot[np.arange(L), targets] = 1.0
    picked = ad.reduce_sum(ad.mul(log_probs, ad.constant(onehot)))
    if smoothing == 0.0:
        return ad.mul(picked, -1.0)
    if unigram is None:
        unigram = np.full(V, 1.0 / V)
    unigram = np.asarray(unigram, dtype=np.float64)
    if unigram.shape != (V,):
        raise ValueError(f"unigram distribution shape {unigram.shape} != ({V},)")
    smooth = ad.reduce_sum(ad.matmul(log_probs, ad.constant(unigram.reshape(V, 1))))
    return ad.mul(ad.add(ad.mul(picked, 1.0 - smoothing), ad.mul(smooth, smoothing)), -1.0)


class MultiStreamModel:
    """Encoders/inputs -> per-stream attention -> fusion -> decoder, plus CTC heads."""

    def __init__(self, cfg: ModelConfig, store: ParameterStore | None = None, seed: int = 0):
        self.cfg = cfg
        if store is None:
            store = ParameterStore()
            rng = np.random.default_rng(seed)
            d = cfg.repr_dim
            for i in range(cfg.n_streams):
                if cfg.input_mode == "raw":
                    init_encoder(store, f"encoder/stream{i}", cfg.encoder, rng)
                Attention.create(store, f"frame_att/stream{i}", cfg.frame_att, cfg.decoder.hidden_units, d, rng)
                store.create(f"ctc/stream{i}/W", ad.uniform_init(rng, (d, cfg.vocab_size + 1), d))
                store.create(f"ctc/stream{i}/b", np.zeros(cfg.vocab_size + 1))
            if cfg.n_streams > 1:
                Attention.create(store, "han", cfg.stream_att, cfg.decoder.hidden_units, d, rng)
            Decoder.create(store, cfg.decoder, cfg.vocab_size, d, rng)
        self.store = store
        self.frame_atts = [Attention(store, f"frame_att/stream{i}", cfg.frame_att) for i in range(cfg.n_streams)]
        self.han = Attention(store, "han", cfg.stream_att) if cfg.n_streams > 1 else None
        self.decoder = Decoder(store, cfg.decoder, cfg.vocab_size, cfg.repr_dim)

    # -- per-stream representations ---------------------------------------

    def encode_stream(self, i, frames) -> Tensor:
        if self.cfg.input_mode != "raw":
            raise ValueError("model has no encoder; it consumes precomputed features")
        return encode(self.store, f"encoder/stream{i}", self.cfg.encoder, frames)

    def stream_reprs(self, bundle: StreamBundle) -> list[Tensor]:
        if bundle.n_streams != self.cfg.n_streams:
            raise ValueError(f"bundle has {bundle.n_streams} streams, model expects {self.cfg.n_streams}")
        expected = "raw" if self.cfg.input_mode == "raw" else "ufe"
        if bundle.mode != expected:
            raise ValueError(f"model expects {expected!r} inputs, bundle carries {bundle.mode!r}")
        reprs = []
        for i, seq in enumerate(bundle.streams):
            if self.cfg.input_mode == "raw":
                reprs.append(self.encode_stream(i, seq.frames))
            else:
                if seq.dim != self.cfg.input_dim:
                    raise ValueError(f"stream {i} is {seq.dim}-dim, model expects {self.cfg.input_dim}")
                reprs.append(ad.constant(seq.frames))
        return reprs

    def ctc_log_posteriors(self, i, h: Tensor) -> Tensor:
        logits = ad.add(ad.matmul(h, self.store[f"ctc/stream{i}/W"]), self.store[f"ctc/stream{i}/b"])
        return ad.log_softmax(logits, axis=1)

    # -- one label-synchronous step ----------------------------------------

    def initial_att_states(self, reprs):
        return [att.initial_weights(h.shape[0]) for att, h in zip(self.frame_atts, reprs)]

    def initial_beta(self):
        if self.han is None:
            return None
        return self.han.initial_weights(self.cfg.n_streams)

    def decode_step(self, reprs, reprs_proj, token_in, dec_state, att_states, beta_prev):
        """Advance one output step given the previous token and states.

        Returns (log_probs (1, V+1), new_dec_state, new_att_states,
        new_beta_prev, beta ndarray (N,), frame_weights list of ndarray).
        """
        h_query = dec_state[0]
        contexts, new_att_states, frame_weights = [], [], []
        for i in range(self.cfg.n_streams):
            ctx, w = self.frame_atts[i].step(reprs[i], reprs_proj[i], h_query, att_states[i])
            contexts.append(ctx)
            new_att_states.append(w)
            frame_weights.append(w.values[0].copy())
        if self.han is None:
            fused, beta, new_beta_prev = contexts[0], np.array([1.0]), None
        else:
            stacked = ad.concat(contexts, axis=0)
            fused, bw = self.han.step(stacked, self.han.precompute(stacked), h_query, beta_prev)
            beta, new_beta_prev = bw.values[0].copy(), bw
        log_probs, new_dec_state = self.decoder.step(token_in, fused, dec_state)
        return log_probs, new_dec_state, new_att_states, new_beta_prev, beta, frame_weights

    # -- training objective --------------------------------------------------

    def forward_mtl(self, bundle: StreamBundle, mtl: MtlConfig, unigram=None, collect_diagnostics=False):
        """Teacher-forced multi-task loss; diagnostics carry the per-step
        stream weights and per-stream frame weights."""
        if bundle.labels is None:
            raise ValueError("forward_mtl needs target labels")
        labels = bundle.labels
        reprs = self.stream_reprs(bundle)
        ctc_terms = [ctc_loss(self.ctc_log_posteriors(i, reprs[i]), labels.ids) for i in range(self.cfg.n_streams)]
        ctc_term = multi_stream_ctc(ctc_terms)

        reprs_proj = [att.precompute(h) for att, h in zip(self.frame_atts, reprs)]
        att_states = self.initial_att_states(reprs)
        beta_prev = self.initial_beta()
        dec_state = self.decoder.initial_state()
        inputs = [labels.sos_id] + labels.ids
        targets = labels.ids + [labels.eos_id]
        rows, betas, frame_w = [], [], []
        for token_in in inputs:
            logp, dec_state, att_states, beta_prev, beta, fw = self.decode_step(
                reprs, reprs_proj, token_in, dec_state, att_states, beta_prev
            )
            rows.append(logp)
            if collect_diagnostics:
                betas.append(beta)
                frame_w.append(fw)
        log_probs = ad.concat(rows, axis=0)
        att_term = attention_xent(log_probs, targets, mtl.label_smoothing, unigram)
        loss = mtl_combine(ctc_term, att_term, mtl.ctc_weight)
        diag = {
            "ctc_loss": float(ctc_term.values),
            "att_loss": float(att_term.values),
            "beta": betas,
            "frame_weights": frame_w,
        }
        return loss, diag

    # -- feature extraction ---------------------------------------------------

    def extract_ufe(self, seq: FeatureSequence) -> FeatureSequence:
        """Encoder outputs as a serializable feature sequence (stage-1 byproduct)."""
        if self.cfg.input_mode != "raw" or "encoder" not in self.store.components():
            raise ValueError("feature extraction needs a model with trained encoder parameters")
        h = self.encode_stream(0, seq.frames)
        return FeatureSequence(h.values.copy(), seq.utterance_id, seq.stream_id, kind="ufe")


def label_unigram(label_seqs, vocab_size) -> np.ndarray:
    """Empirical token distribution over U + eos from training labels."""
    counts = np.zeros(vocab_size + 1)
    for seq in label_seqs:
        for i in seq.ids:
            counts[i] += 1
        counts[vocab_size] += 1  # one eos per utterance
    total = counts.sum()
    if total == 0:
        return np.full(vocab_size + 1, 1.0 / (vocab_size + 1))
    return counts / total
