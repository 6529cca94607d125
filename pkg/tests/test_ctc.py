"""CTC loss and prefix scoring against brute-force path enumeration."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamfuse import autodiff as ad
from streamfuse.autodiff import LOG_ZERO, Tape, Tensor
from streamfuse.ctc import CtcPrefixScorer, ctc_forward_backward, ctc_loss, multi_stream_ctc


def collapse(path, blank):
    """Remove repeats, then blanks."""
    out = []
    prev = None
    for s in path:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return tuple(out)


def brute_force_logp(log_probs, labels, blank):
    """Total probability over all (K)^T paths collapsing to `labels`."""
    T, K = log_probs.shape
    target = tuple(labels)
    total = -math.inf
    for path in itertools.product(range(K), repeat=T):
        if collapse(path, blank) == target:
            lp = sum(log_probs[t, s] for t, s in enumerate(path))
            total = np.logaddexp(total, lp)
    return total


def rand_instance(rng, T=None, V=None, L=None):
    T = T if T is not None else int(rng.integers(2, 9))
    V = V if V is not None else int(rng.integers(1, 5))
    L = L if L is not None else int(rng.integers(0, min(4, T) + 1))
    logits = rng.normal(0, 2.0, size=(T, V + 1))
    log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    labels = rng.integers(0, V, size=L).tolist()
    return log_probs, labels, V


class TestCtcLoss:
    def test_single_frame_single_label_uniform(self):
        # one frame, uniform over {a, b, blank}: only path is "a"
        lp = np.log(np.full((1, 3), 1 / 3))
        loss = ctc_loss(Tensor(lp), [0])
        assert loss.item() == pytest.approx(math.log(3), abs=1e-12)

    def test_two_frames_single_label_uniform(self):
        # paths {aa, a-, -a} out of 9: p = 3/9
        lp = np.log(np.full((2, 3), 1 / 3))
        loss = ctc_loss(Tensor(lp), [0])
        assert loss.item() == pytest.approx(math.log(3), abs=1e-12)

    def test_two_frames_empty_label(self):
        rng = np.random.default_rng(0)
        lp, _, _ = rand_instance(rng, T=2, V=2, L=0)
        loss = ctc_loss(Tensor(lp), [])
        assert loss.item() == pytest.approx(-(lp[0, 2] + lp[1, 2]), abs=1e-12)

    def test_impossible_alignment_is_sentinel(self):
        # two distinct labels cannot fit in one frame
        lp = np.log(np.full((1, 3), 1 / 3))
        loss = ctc_loss(Tensor(lp), [0, 1])
        assert loss.item() >= -LOG_ZERO / 2

    def test_empty_frames_error(self):
        with pytest.raises(ValueError, match="empty frame sequence"):
            ctc_forward_backward(np.zeros((0, 3)), [0])

    def test_label_out_of_range_error(self):
        with pytest.raises(ValueError, match="out of range"):
            ctc_forward_backward(np.log(np.full((2, 3), 1 / 3)), [2])

    def test_matches_enumeration_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            log_probs, labels, V = rand_instance(rng, T=int(rng.integers(2, 6)))
            expected = brute_force_logp(log_probs, labels, blank=V)
            got = ctc_loss(Tensor(log_probs), labels).item()
            if expected == -math.inf:
                assert got >= -LOG_ZERO / 2
            else:
                assert got == pytest.approx(-expected, abs=1e-6)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        logits = Tensor(rng.normal(0, 1.5, size=(5, 4)), requires_grad=True)
        labels = [0, 2]

        def loss_value():
            return ctc_loss(ad.log_softmax(logits, axis=1), labels).item()

        with Tape() as tape:
            loss = ctc_loss(ad.log_softmax(logits, axis=1), labels)
            tape.backward(loss)
        h = 1e-5
        for idx in np.ndindex(*logits.values.shape):
            orig = logits.values[idx]
            logits.values[idx] = orig + h
            fp = loss_value()
            logits.values[idx] = orig - h
            fm = loss_value()
            logits.values[idx] = orig
            fd = (fp - fm) / (2 * h)
            an = logits.grad[idx]
            assert abs(an - fd) <= 1e-8 + 1e-4 * max(abs(an), abs(fd))

    def test_total_mass_over_label_space_at_most_one(self):
        # T'=3, |U|=2: sum of p_ctc over all label sequences L<=3 is <= 1
        rng = np.random.default_rng(11)
        lp, _, V = rand_instance(rng, T=3, V=2, L=0)
        total = 0.0
        for L in range(0, 4):
            for labels in itertools.product(range(V), repeat=L):
                loss = ctc_forward_backward(lp, list(labels))[0]
                if loss < -LOG_ZERO / 2:
                    total += math.exp(-loss)
        assert total <= 1.0 + 1e-9


class TestMultiStream:
    def test_identity_and_mean(self):
        assert multi_stream_ctc([Tensor(2.0)]).item() == pytest.approx(2.0)
        assert multi_stream_ctc([Tensor(2.0), Tensor(4.0)]).item() == pytest.approx(3.0)

    def test_empty_error(self):
        with pytest.raises(ValueError):
            multi_stream_ctc([])

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=5), st.randoms())
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariant(self, values, rnd):
        shuffled = list(values)
        rnd.shuffle(shuffled)
        a = multi_stream_ctc([Tensor(v) for v in values]).item()
        b = multi_stream_ctc([Tensor(v) for v in shuffled]).item()
        assert a == pytest.approx(b, abs=1e-12)

    def test_mean_matches_direct(self):
        rng = np.random.default_rng(5)
        vals = rng.uniform(0, 10, size=3)
        got = multi_stream_ctc([Tensor(v) for v in vals]).item()
        assert got == pytest.approx(vals.mean(), abs=1e-12)


class TestPrefixScorer:
    def test_complete_hypothesis_matches_ctc_loss(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            lp, labels, V = rand_instance(rng, T=int(rng.integers(2, 7)))
            if not labels:
                continue
            scorer = CtcPrefixScorer(lp)
            state = scorer.initial_state()
            for tok in labels:
                _, state = scorer.score_token(state, tok)
            final = scorer.final_score(state)
            loss = ctc_forward_backward(lp, labels)[0]
            if loss < -LOG_ZERO / 2:
                assert final == pytest.approx(-loss, abs=1e-9)
            else:
                assert final <= LOG_ZERO / 2

    def test_prefix_mass_matches_enumeration(self):
        # every prefix's cumulative score equals the mass of paths whose
        # collapsed output extends that prefix
        rng = np.random.default_rng(31)
        lp, _, V = rand_instance(rng, T=3, V=2, L=0)
        scorer = CtcPrefixScorer(lp)
        paths = list(itertools.product(range(V + 1), repeat=3))
        path_lp = [sum(lp[t, s] for t, s in enumerate(p)) for p in paths]
        for prefix in [(0,), (1,), (0, 1), (1, 1), (0, 0, 1)]:
            state = scorer.initial_state()
            for tok in prefix:
                _, state = scorer.score_token(state, tok)
            mass = -math.inf
            for p, p_lp in zip(paths, path_lp):
                c = collapse(p, blank=V)
                if c[: len(prefix)] == prefix:
                    mass = np.logaddexp(mass, p_lp)
            if mass == -math.inf:
                assert state.psi <= LOG_ZERO / 2
            else:
                assert state.psi == pytest.approx(mass, abs=1e-9)

    def test_blank_only_posteriors_kill_nonempty_prefixes(self):
        lp = np.full((4, 3), LOG_ZERO)
        lp[:, 2] = 0.0  # blank has all the mass
        scorer = CtcPrefixScorer(lp)
        state = scorer.initial_state()
        delta, state = scorer.score_token(state, 0)
        assert state.psi <= LOG_ZERO / 2
        assert delta <= LOG_ZERO / 2

    def test_score_token_delta_decomposition(self):
        rng = np.random.default_rng(8)
        lp, _, V = rand_instance(rng, T=5, V=3, L=0)
        scorer = CtcPrefixScorer(lp)
        state = scorer.initial_state()
        cumulative = 0.0
        for tok in [1, 0, 2]:
            delta, state = scorer.score_token(state, tok)
            cumulative += delta
        assert cumulative == pytest.approx(state.psi, abs=1e-9)
