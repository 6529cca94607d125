"""Small character-level recurrent language model for shallow fusion.

Shares the token-id convention of the decoder: ids 0..V-1 are tokens,
id V is start-of-sequence on input and end-of-sequence in the output
distribution.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import init_lstm, lstm_step
from .params import ParameterStore


@dataclass
class LmConfig:
    vocab_size: int
    embed_dim: int = 16
    hidden_units: int = 32

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass
class LmState:
    h: Tensor
    c: Tensor
    log_probs: np.ndarray  # distribution over the NEXT token given history


class CharLm:
    def __init__(self, cfg: LmConfig, store: ParameterStore | None = None, seed: int = 0):
        self.cfg = cfg
        if store is None:
            store = ParameterStore()
            rng = np.random.default_rng(seed)
            store.create("lm/emb", ad.uniform_init(rng, (cfg.vocab_size + 1, cfg.embed_dim), cfg.embed_dim))
            init_lstm(store, "lm/lstm", cfg.embed_dim, cfg.hidden_units, rng)
            store.create(
                "lm/out/W",
                ad.uniform_init(rng, (cfg.hidden_units, cfg.vocab_size + 1), cfg.hidden_units),
            )
            store.create("lm/out/b", np.zeros(cfg.vocab_size + 1))
        self.store = store

    def _advance(self, h, c, token_id):
        if not 0 <= token_id <= self.cfg.vocab_size:
            raise ValueError(f"token id {token_id} outside vocabulary of {self.cfg.vocab_size}")
        emb = ad.gather_rows(self.store["lm/emb"], [token_id])
        h, c = lstm_step(self.store, "lm/lstm", emb, h, c)
        logits = ad.add(ad.matmul(h, self.store["lm/out/W"]), self.store["lm/out/b"])
        return h, c, ad.log_softmax(logits, axis=1)

    def initial_state(self) -> LmState:
        h = ad.constant(np.zeros((1, self.cfg.hidden_units)))
        c = ad.constant(np.zeros((1, self.cfg.hidden_units)))
        h, c, row = self._advance(h, c, self.cfg.vocab_size)  # consume sos
        return LmState(h, c, row.values[0].copy())

    def score_step(self, state: LmState, token_id):
        """(log p(token | history), state after consuming the token).

        Scoring eos reads the current distribution and leaves the state
        unchanged (the sequence is complete).
        """
        if not 0 <= token_id <= self.cfg.vocab_size:
            raise ValueError(f"token id {token_id} outside vocabulary of {self.cfg.vocab_size}")
        logp = float(state.log_probs[token_id])
        if token_id == self.cfg.vocab_size:
            return logp, state
        h, c, row = self._advance(state.h, state.c, token_id)
        return logp, LmState(h, c, row.values[0].copy())

    def sequence_logp(self, ids) -> float:
        state = self.initial_state()
        total = 0.0
        for i in ids:
            lp, state = self.score_step(state, i)
            total += lp
        lp, _ = self.score_step(state, self.cfg.vocab_size)  # eos
        return total + lp

    def nll(self, ids) -> Tensor:
        """Teacher-forced negative log likelihood of one id sequence (for training)."""
        V = self.cfg.vocab_size
        h = ad.constant(np.zeros((1, self.cfg.hidden_units)))
        c = ad.constant(np.zeros((1, self.cfg.hidden_units)))
        total = None
        inputs = [V] + list(ids)
        targets = list(ids) + [V]
        for tok_in, tok_out in zip(inputs, targets):
            h, c, row = self._advance(h, c, tok_in)
            term = ad.mul(ad.narrow(row, 1, tok_out, 1), -1.0)
            total = term if total is None else ad.add(total, term)
        return ad.reshape(total, ())
