"""CTC loss via forward-backward dynamic programming and prefix scoring.

Blank is the last class index.  All recursions run in log space with a
large finite sentinel for log(0), keeping arithmetic total even when no
valid alignment exists.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import LOG_ZERO, Tensor


def _extended_labels(labels, blank):
    """Blank-interleaved state sequence: blank, l1, blank, l2, ..., blank."""
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.intp)
    ext[1::2] = labels
    return ext


def ctc_forward_backward(log_probs: np.ndarray, labels, blank=None):
    """Negative log probability of `labels` plus its gradient w.r.t. log_probs.

    log_probs: (T, K) frame-level log posteriors, blank last unless given.
    Returns (loss, grad) with loss capped at -LOG_ZERO when no alignment exists.
    """
    T, K = log_probs.shape
    if T < 1:
        raise ValueError("empty frame sequence")
    blank = K - 1 if blank is None else blank
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= K - 1):
        raise ValueError(f"label id out of range for {K - 1} symbols")

    ext = _extended_labels(labels, blank)
    S = len(ext)
    # skip transition s-2 -> s allowed for nonblank states with a different preceding label
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = log_probs[:, ext]  # (T, S)

    alpha = np.full((T, S), LOG_ZERO)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[can_skip] = np.logaddexp(a[can_skip], prev[np.flatnonzero(can_skip) - 2])
        alpha[t] = a + emit[t]

    log_p = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    if log_p <= LOG_ZERO / 2:
        # no valid alignment; total-order sentinel with zero gradient
        return -LOG_ZERO, np.zeros_like(log_probs)

    # beta excludes the emission at t, so alpha + beta is the full path mass
    beta = np.full((T, S), LOG_ZERO)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    skip_idx = np.flatnonzero(can_skip)
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        if skip_idx.size:
            b[skip_idx - 2] = np.logaddexp(b[skip_idx - 2], nxt[skip_idx])
        beta[t] = b

    occupancy = np.exp(alpha + beta - log_p)  # (T, S)
    grad = np.zeros_like(log_probs)
    for s in range(S):
        grad[:, ext[s]] -= occupancy[:, s]
    return -log_p, grad


def ctc_loss(log_probs: Tensor, labels, blank=None) -> Tensor:
    """-log p_ctc(labels | frames) as a differentiable scalar."""
    loss_val, grad = ctc_forward_backward(log_probs.values, labels, blank)
    out = Tensor(loss_val)

    def bw(g):
        ad._accum(log_probs, g * grad)

    return ad._record(out, (log_probs,), bw)


def multi_stream_ctc(losses) -> Tensor:
    """Arithmetic mean of per-stream CTC losses."""
    losses = list(losses)
    if not losses:
        raise ValueError("multi_stream_ctc needs at least one stream loss")
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    return ad.mul(total, 1.0 / len(losses))


class PrefixState:
    """DP state of one decoding prefix for one stream.

    r[:, 0] is the log mass of alignments ending in the prefix's last
    nonblank symbol at each frame; r[:, 1] the mass ending in blank.
    `psi` is the cumulative prefix score log p(prefix...).
    """

    __slots__ = ("r", "psi", "last_token", "length")

    def __init__(self, r, psi, last_token, length):
        self.r = r
        self.psi = psi
        self.last_token = last_token
        self.length = length


class CtcPrefixScorer:
    """Label-synchronous prefix scoring over one stream's log posteriors.

    Scores all candidate tokens of a step at once; the caller selects the
    surviving candidate's column as the next state.
    """

    def __init__(self, log_probs: np.ndarray, blank=None, eos=None):
        log_probs = np.asarray(log_probs, dtype=np.float64)
        if log_probs.ndim != 2 or log_probs.shape[0] < 1:
            raise ValueError(f"log_probs must be (T, K) with T >= 1, got {log_probs.shape}")
        self.x = log_probs
        self.T, self.K = log_probs.shape
        self.blank = self.K - 1 if blank is None else blank
        self.eos = (self.K - 1) if eos is None else eos  # decoder-side eos id

    def initial_state(self) -> PrefixState:
        r = np.full((self.T, 2), LOG_ZERO)
        r[:, 1] = np.cumsum(self.x[:, self.blank])
        return PrefixState(r, 0.0, None, 0)

    def score_candidates(self, state: PrefixState, candidates):
        """Cumulative prefix scores for extending `state` by each candidate.

        Returns (psi, r_new) with psi shape (n,) and r_new shape (T, 2, n).
        A candidate equal to `self.eos` scores the prefix as a complete
        sequence instead of extending it.
        """
        candidates = np.asarray(candidates, dtype=np.intp)
        if candidates.size and (candidates.min() < 0 or candidates.max() >= self.K):
            raise ValueError(f"candidate token out of range for {self.K} classes")
        n = len(candidates)
        xs = self.x[:, candidates]  # (T, n)
        r = np.full((self.T, 2, n), LOG_ZERO)
        if state.length == 0:
            r[0, 0] = xs[0]

        r_prev_sum = np.logaddexp(state.r[:, 0], state.r[:, 1])  # (T,)
        log_phi = np.tile(r_prev_sum[:, None], (1, n))
        if state.last_token is not None:
            same = candidates == state.last_token
            log_phi[:, same] = state.r[:, 1][:, None]

        start = max(state.length, 1)
        if start > self.T:
            # prefix already longer than the frame count: no alignment left
            log_psi = np.full(n, LOG_ZERO)
        else:
            log_psi = r[start - 1, 0].copy()
            for t in range(start, self.T):
                r[t, 0] = np.logaddexp(r[t - 1, 0], log_phi[t - 1]) + xs[t]
                r[t, 1] = np.logaddexp(r[t - 1, 0], r[t - 1, 1]) + self.x[t, self.blank]
                log_psi = np.logaddexp(log_psi, log_phi[t - 1] + xs[t])

        is_eos = candidates == self.eos
        if is_eos.any():
            log_psi[is_eos] = r_prev_sum[-1]
        return log_psi, r

    def select(self, parent: PrefixState, psi, r, index, token) -> PrefixState:
        """State for the candidate at `index` after pruning."""
        return PrefixState(r[:, :, index].copy(), float(psi[index]), int(token), parent.length + 1)

    def score_token(self, state: PrefixState, token):
        """(log score delta, new state) for a single-token extension."""
        psi, r = self.score_candidates(state, [token])
        new = self.select(state, psi, r, 0, token)
        return new.psi - state.psi, new

    def final_score(self, state: PrefixState) -> float:
        """log p of the prefix as a complete sequence (all frames consumed)."""
        return float(np.logaddexp(state.r[-1, 0], state.r[-1, 1]))
