"""Model building blocks: subsampling encoder, additive attention with
optional location features, and the recurrent decoder.

All parameters live in a ParameterStore under component-tagged names
(encoder/..., frame_att/..., han/..., decoder/...), so the freeze mask
and checkpoint mapping operate purely on names.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, uniform_init
from .params import ParameterStore


@dataclass
class EncoderConfig:
    """Conv subsampling front end plus bidirectional recurrent layers.

    conv_layers: (channels, stride) per layer; each layer's kernel width
    equals its stride so the output length is an exact floor division.
    """

    input_dim: int
    conv_layers: tuple = ((16, 2), (16, 2))
    recurrent_layers: int = 1
    hidden_units: int = 32
    projection_units: int = 64
    subsampling_factor: int = 4

    def __post_init__(self):
        self.conv_layers = tuple((int(c), int(s)) for c, s in self.conv_layers)
        if self.subsampling_factor < 1:
            raise ValueError("subsampling factor must be >= 1")
        prod = math.prod(s for _, s in self.conv_layers) if self.conv_layers else 1
        if prod != self.subsampling_factor:
            raise ValueError(
                f"product of conv strides {prod} != subsampling factor {self.subsampling_factor}"
            )


@dataclass
class AttentionConfig:
    kind: str = "location"  # "location" (conv over previous weights) or "content"
    att_dim: int = 64
    conv_filters: int = 4
    conv_width: int = 7

    def __post_init__(self):
        if self.kind not in ("location", "content"):
            raise ValueError(f"unknown attention kind {self.kind!r}")
        if self.kind == "location" and self.conv_width % 2 != 1:
            raise ValueError("location filter width must be odd")


@dataclass
class DecoderConfig:
    embed_dim: int = 32
    hidden_units: int = 64


# -- LSTM ------------------------------------------------------------------


def init_lstm(store: ParameterStore, prefix, input_dim, hidden, rng):
    """Gate order i, f, g, o; forget-gate bias starts at 1."""
    store.create(f"{prefix}/W", uniform_init(rng, (input_dim, 4 * hidden), input_dim))
    store.create(f"{prefix}/U", uniform_init(rng, (hidden, 4 * hidden), hidden))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    store.create(f"{prefix}/b", b)


def lstm_step(store, prefix, x, h, c):
    hidden = h.shape[1]
    z = ad.add(ad.add(ad.matmul(x, store[f"{prefix}/W"]), ad.matmul(h, store[f"{prefix}/U"])), store[f"{prefix}/b"])
    i = ad.sigmoid(ad.narrow(z, 1, 0, hidden))
    f = ad.sigmoid(ad.narrow(z, 1, hidden, hidden))
    g = ad.tanh(ad.narrow(z, 1, 2 * hidden, hidden))
    o = ad.sigmoid(ad.narrow(z, 1, 3 * hidden, hidden))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def run_lstm(store, prefix, xs, hidden):
    """Unidirectional pass over (T, in); returns (T, hidden)."""
    T = xs.shape[0]
    h = ad.constant(np.zeros((1, hidden)))
    c = ad.constant(np.zeros((1, hidden)))
    rows = []
    for t in range(T):
        x_t = ad.narrow(xs, 0, t, 1)
        h, c = lstm_step(store, prefix, x_t, h, c)
        rows.append(h)
    return ad.concat(rows, axis=0)


# -- encoder ----------------------------------------------------------------


def init_encoder(store, prefix, cfg: EncoderConfig, rng):
    in_ch = cfg.input_dim
    for j, (ch, stride) in enumerate(cfg.conv_layers):
        store.create(f"{prefix}/conv{j}/W", uniform_init(rng, (stride, in_ch, ch), stride * in_ch))
        store.create(f"{prefix}/conv{j}/b", np.zeros(ch))
        in_ch = ch
    in_dim = in_ch
    for j in range(cfg.recurrent_layers):
        init_lstm(store, f"{prefix}/lstm{j}/fw", in_dim, cfg.hidden_units, rng)
        init_lstm(store, f"{prefix}/lstm{j}/bw", in_dim, cfg.hidden_units, rng)
        in_dim = 2 * cfg.hidden_units
    store.create(f"{prefix}/proj/W", uniform_init(rng, (in_dim, cfg.projection_units), in_dim))
    store.create(f"{prefix}/proj/b", np.zeros(cfg.projection_units))


def encode(store, prefix, cfg: EncoderConfig, frames) -> Tensor:
    """Subsample raw frames to exactly floor(T/s) higher-level frames."""
    x = frames if isinstance(frames, Tensor) else ad.constant(frames)
    if x.shape[0] < cfg.subsampling_factor:
        raise ValueError(
            f"sequence shorter than subsampling factor ({x.shape[0]} < {cfg.subsampling_factor})"
        )
    if x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected {cfg.input_dim}-dim frames, got {x.shape[1]}")
    h = x
    for j, (_, stride) in enumerate(cfg.conv_layers):
        h = ad.tanh(ad.conv1d(h, store[f"{prefix}/conv{j}/W"], store[f"{prefix}/conv{j}/b"], stride=stride))
    for j in range(cfg.recurrent_layers):
        fw = run_lstm(store, f"{prefix}/lstm{j}/fw", h, cfg.hidden_units)
        bw = ad.flip(run_lstm(store, f"{prefix}/lstm{j}/bw", ad.flip(h, 0), cfg.hidden_units), 0)
        h = ad.concat([fw, bw], axis=1)
    return ad.tanh(ad.add(ad.matmul(h, store[f"{prefix}/proj/W"]), store[f"{prefix}/proj/b"]))


# -- attention ----------------------------------------------------------------


class Attention:
    """Additive (tanh) attention producing simplex weights over key rows.

    kind="location" adds features from convolving the previous step's
    weights; kind="content" scores from keys and query alone.  The same
    machinery serves frame-level attention (keys = encoder frames) and
    stream-level fusion (keys = per-stream context vectors).
    """

    def __init__(self, store, prefix, cfg: AttentionConfig):
        self.store = store
        self.prefix = prefix
        self.cfg = cfg

    @classmethod
    def create(cls, store, prefix, cfg, query_dim, key_dim, rng):
        store.create(f"{prefix}/W_k", uniform_init(rng, (key_dim, cfg.att_dim), key_dim))
        store.create(f"{prefix}/W_q", uniform_init(rng, (query_dim, cfg.att_dim), query_dim))
        store.create(f"{prefix}/b", np.zeros(cfg.att_dim))
        store.create(f"{prefix}/g", uniform_init(rng, (cfg.att_dim, 1), cfg.att_dim))
        if cfg.kind == "location":
            store.create(
                f"{prefix}/conv_f",
                uniform_init(rng, (cfg.conv_width, 1, cfg.conv_filters), cfg.conv_width),
            )
            store.create(f"{prefix}/W_f", uniform_init(rng, (cfg.conv_filters, cfg.att_dim), cfg.conv_filters))
        return cls(store, prefix, cfg)

    def precompute(self, keys: Tensor) -> Tensor:
        return ad.matmul(keys, self.store[f"{self.prefix}/W_k"])

    def initial_weights(self, n_keys) -> Tensor:
        # first step attends from a zero previous-weight vector
        return ad.constant(np.zeros((1, n_keys)))

    def step(self, keys, keys_proj, query, prev_weights):
        """(context (1, key_dim), weights (1, n_keys)) for one output step."""
        n = keys.shape[0]
        if prev_weights.shape[1] != n:
            raise ValueError(f"previous weights length {prev_weights.shape[1]} != key count {n}")
        e_in = ad.add(ad.add(keys_proj, ad.matmul(query, self.store[f"{self.prefix}/W_q"])), self.store[f"{self.prefix}/b"])
        if self.cfg.kind == "location":
            f = ad.conv1d(
                ad.reshape(prev_weights, (n, 1)),
                self.store[f"{self.prefix}/conv_f"],
                stride=1,
                padding=self.cfg.conv_width // 2,
            )
            e_in = ad.add(e_in, ad.matmul(f, self.store[f"{self.prefix}/W_f"]))
        scores = ad.matmul(ad.tanh(e_in), self.store[f"{self.prefix}/g"])  # (n, 1)
        weights = ad.softmax(ad.reshape(scores, (1, n)), axis=1)
        context = ad.matmul(weights, keys)
        return context, weights


# -- decoder ----------------------------------------------------------------


class Decoder:
    """Single recurrent layer consuming [embedded previous token; context].

    Output distribution covers the vocabulary plus end-of-sequence; the
    shared special id V embeds start-of-sequence on the input side.
    """

    def __init__(self, store, cfg: DecoderConfig, vocab_size, context_dim, prefix="decoder"):
        self.store = store
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.context_dim = context_dim
        self.prefix = prefix

    @classmethod
    def create(cls, store, cfg, vocab_size, context_dim, rng, prefix="decoder"):
        store.create(f"{prefix}/emb", uniform_init(rng, (vocab_size + 1, cfg.embed_dim), cfg.embed_dim))
        init_lstm(store, f"{prefix}/lstm", cfg.embed_dim + context_dim, cfg.hidden_units, rng)
        store.create(f"{prefix}/h0", np.zeros((1, cfg.hidden_units)))
        store.create(f"{prefix}/c0", np.zeros((1, cfg.hidden_units)))
        store.create(
            f"{prefix}/out/W",
            uniform_init(rng, (cfg.hidden_units + context_dim, vocab_size + 1), cfg.hidden_units + context_dim),
        )
        store.create(f"{prefix}/out/b", np.zeros(vocab_size + 1))
        return cls(store, cfg, vocab_size, context_dim, prefix)

    def initial_state(self):
        return self.store[f"{self.prefix}/h0"], self.store[f"{self.prefix}/c0"]

    def step(self, token_id, context, state):
        """(log probs (1, V+1), new state); token_id in [0, V] with V = sos."""
        if not 0 <= token_id <= self.vocab_size:
            raise ValueError(f"unknown token id {token_id} for vocabulary of {self.vocab_size}")
        h, c = state
        emb = ad.gather_rows(self.store[f"{self.prefix}/emb"], [token_id])
        x = ad.concat([emb, context], axis=1)
        h, c = lstm_step(self.store, f"{self.prefix}/lstm", x, h, c)
        logits = ad.add(
            ad.matmul(ad.concat([h, context], axis=1), self.store[f"{self.prefix}/out/W"]),
            self.store[f"{self.prefix}/out/b"],
        )
        return ad.log_softmax(logits, axis=1), (h, c)
