"""Label-synchronous joint CTC/attention beam search with shallow LM fusion.

Each hypothesis keeps its score decomposition (attention, per-stream
CTC prefix, LM) so the joint score is recomputable from parts:

    joint = (1 - w) * att + w * mean_i(ctc_i) + lm_weight * lm

Ties are broken lexicographically on token ids, making search
deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .ctc import CtcPrefixScorer
from .data import StreamBundle, tokens_to_text


@dataclass
class BeamConfig:
    beam_width: int = 4
    ctc_weight: float = 0.3
    lm_weight: float = 0.0
    max_len_ratio: float = 1.5
    max_len: int | None = None  # absolute override of the ratio cap
    eos_margin: float | None = 5.0  # eos admitted when within this many nats of the best token
    eos_penalty: float = 0.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam width must be >= 1")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError("decode ctc weight must be in [0, 1]")


@dataclass
class DecodeResult:
    utterance_id: str
    tokens: tuple
    score: float
    att_score: float
    ctc_score: float  # mean over streams
    lm_score: float
    beta: list | None = None  # per-step stream weights of this hypothesis

    @property
    def text(self):
        return tokens_to_text(self.tokens)


@dataclass
class DecodeStats:
    """Simplex bookkeeping over every weight vector computed in a decode."""

    weight_vectors: int = 0
    max_simplex_dev: float = 0.0

    def observe(self, vec):
        self.weight_vectors += 1
        self.max_simplex_dev = max(self.max_simplex_dev, abs(float(np.sum(vec)) - 1.0))


class _Hyp:
    __slots__ = (
        "tokens",
        "att",
        "ctc",
        "lm",
        "dec_state",
        "att_states",
        "beta_prev",
        "ctc_states",
        "lm_state",
        "betas",
    )

    def __init__(self, tokens, att, ctc, lm, dec_state, att_states, beta_prev, ctc_states, lm_state, betas):
        self.tokens = tokens
        self.att = att
        self.ctc = ctc  # ndarray (N,) of per-stream cumulative prefix scores
        self.lm = lm
        self.dec_state = dec_state
        self.att_states = att_states
        self.beta_prev = beta_prev
        self.ctc_states = ctc_states
        self.lm_state = lm_state
        self.betas = betas


def joint_score(att, ctc_mean, lm, cfg: BeamConfig):
    return (1.0 - cfg.ctc_weight) * att + cfg.ctc_weight * ctc_mean + cfg.lm_weight * lm


def decode(model, bundle: StreamBundle, cfg: BeamConfig, lm=None, stats: DecodeStats | None = None):
    """Ranked complete hypotheses for one utterance.

    The CTC decode term is the per-stream mean of cumulative prefix
    scores, mirroring the training-side averaged CTC objective.
    """
    if not bundle.streams or any(s.frame_count == 0 for s in bundle.streams):
        raise ValueError("decode needs at least one nonempty stream")
    if cfg.lm_weight != 0.0 and lm is None:
        raise ValueError("lm_weight is nonzero but no language model was given")

    n = model.cfg.n_streams
    V = model.cfg.vocab_size
    eos = V
    reprs = model.stream_reprs(bundle)
    reprs_proj = [att.precompute(h) for att, h in zip(model.frame_atts, reprs)]
    scorers = [CtcPrefixScorer(model.ctc_log_posteriors(i, reprs[i]).values) for i in range(n)]
    frames = min(h.shape[0] for h in reprs)
    max_len = cfg.max_len if cfg.max_len is not None else max(1, math.ceil(cfg.max_len_ratio * frames))

    root = _Hyp(
        tokens=(),
        att=0.0,
        ctc=np.zeros(n),
        lm=0.0,
        dec_state=model.decoder.initial_state(),
        att_states=model.initial_att_states(reprs),
        beta_prev=model.initial_beta(),
        ctc_states=[s.initial_state() for s in scorers],
        lm_state=lm.initial_state() if lm is not None else None,
        betas=[],
    )
    live = [root]
    finished: list[DecodeResult] = []
    token_ids = np.arange(V)

    # hypotheses at loop index `step` hold exactly `step` tokens; each gets
    # its eos closure considered exactly once, and none extend past the cap
    for step in range(max_len + 1):
        candidates = []
        for hyp in live:
            token_in = hyp.tokens[-1] if hyp.tokens else V  # sos
            logp, dec_state, att_states, beta_prev, beta, frame_w = model.decode_step(
                reprs, reprs_proj, token_in, hyp.dec_state, hyp.att_states, hyp.beta_prev
            )
            if stats is not None:
                for w in frame_w:
                    stats.observe(w)
                stats.observe(beta)
            row = logp.values[0]
            lm_row = hyp.lm_state.log_probs if lm is not None else None
            ctc_ext = [s.score_candidates(st, token_ids) for s, st in zip(scorers, hyp.ctc_states)]
            betas = hyp.betas + [beta.tolist()]

            at_cap = step == max_len
            eos_ok = cfg.eos_margin is None or row[eos] >= row.max() - cfg.eos_margin
            if eos_ok or at_cap:
                att_e = hyp.att + float(row[eos])
                ctc_e = np.array([s.final_score(st) for s, st in zip(scorers, hyp.ctc_states)])
                lm_e = hyp.lm + (float(lm_row[eos]) if lm is not None else 0.0)
                score = joint_score(att_e, float(ctc_e.mean()), lm_e, cfg) - cfg.eos_penalty
                finished.append(
                    DecodeResult(bundle.utterance_id, hyp.tokens, score, att_e, float(ctc_e.mean()), lm_e, betas)
                )
            if at_cap:
                continue
            for c in range(V):
                att_c = hyp.att + float(row[c])
                ctc_c = np.array([float(psi[c]) for psi, _ in ctc_ext])
                lm_c = hyp.lm + (float(lm_row[c]) if lm is not None else 0.0)
                score = joint_score(att_c, float(ctc_c.mean()), lm_c, cfg)
                candidates.append((score, hyp.tokens + (c,), hyp, c, att_c, ctc_c, lm_c,
                                   dec_state, att_states, beta_prev, betas, ctc_ext))
        if not candidates:
            break
        candidates.sort(key=lambda t: (-t[0], t[1]))
        live = []
        for score, tokens, hyp, c, att_c, ctc_c, lm_c, dec_state, att_states, beta_prev, betas, ctc_ext in candidates[
            : cfg.beam_width
        ]:
            new_ctc_states = [
                scorers[i].select(hyp.ctc_states[i], ctc_ext[i][0], ctc_ext[i][1], c, c) for i in range(n)
            ]
            lm_state = hyp.lm_state
            if lm is not None:
                _, lm_state = lm.score_step(hyp.lm_state, c)
            live.append(_Hyp(tokens, att_c, ctc_c, lm_c, dec_state, att_states, beta_prev, new_ctc_states, lm_state, betas))

    finished.sort(key=lambda r: (-r.score, r.tokens))
    return finished


# -- decode output records -----------------------------------------------------


def write_decode_file(path, results, diagnostics=True):
    """One JSON record per utterance: id, text, joint score, per-term scores,
    and (when diagnostics are on) the per-step stream weights."""
    with open(path, "w", encoding="utf-8") as f:
        for r in results:
            rec = {
                "utterance_id": r.utterance_id,
                "text": r.text,
                "score": r.score,
                "att_score": r.att_score,
                "ctc_score": r.ctc_score,
                "lm_score": r.lm_score,
                "beta": r.beta if diagnostics else None,
            }
            f.write(json.dumps(rec) + "\n")


def read_decode_file(path) -> list[dict]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["utterance_id"] in seen:
                raise ValueError(f"{path}: duplicate utterance id {rec['utterance_id']!r}")
            seen.add(rec["utterance_id"])
            records.append(rec)
    return records
