import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gatedhtr.ctc import (
    collapse, ctc_bruteforce, ctc_loss, ctc_loss_batch, ctc_loss_from_probs, decode_beam, decode_greedy,
    label_distribution, min_frames,
)
from gatedhtr.errors import InfeasibleLabelError, SizeError, UsageError

from conftest import grad_check

A, B = 0, 1      # symbol indices used in the hand examples


def random_probs(r, t_len, k, peaked=1.0):
    logits = r.standard_normal((t_len, k)) * peaked
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def one_hot(path, k):
    out = np.zeros((len(path), k))
    out[np.arange(len(path)), path] = 1.0
    return out


# --- collapse ---------------------------------------------------------------------

def test_collapse_examples():
    blank = 2
    assert collapse([A, A, blank, B], blank) == (A, B)
    assert collapse([blank, blank, blank], blank) == ()
    assert collapse([A, blank, A], blank) == (A, A)
    assert collapse([A, A, A], blank) == (A,)


def test_collapse_rejects_bad_index():
    with pytest.raises(UsageError):
        collapse([0, 3], 2)


# --- loss -------------------------------------------------------------------------

def test_single_path_loss():
    res = ctc_loss_from_probs([[0.6, 0.4]], [A])
    assert res.loss == pytest.approx(-math.log(0.6), rel=1e-14)
    assert res.loss == pytest.approx(0.5108, abs=5e-5)


def test_two_step_uniform_loss():
    res = ctc_loss_from_probs([[0.5, 0.5], [0.5, 0.5]], [A])
    assert res.loss == pytest.approx(-math.log(0.75), rel=1e-14)
    assert ctc_bruteforce(np.full((2, 2), 0.5), [A]) == pytest.approx(0.75, rel=1e-15)


def test_empty_label():
    p = np.array([[0.3, 0.7], [0.1, 0.9]])
    assert ctc_loss_from_probs(p, []).loss == pytest.approx(-math.log(0.7 * 0.9), rel=1e-14)


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 3), st.integers(0, 2**31))
@settings(max_examples=150, deadline=None)
def test_loss_equals_bruteforce(t_len, n_sym, l_len, seed):
    r = np.random.default_rng(seed)
    label = list(r.integers(0, n_sym, size=l_len))
    if min_frames(label) > t_len:
        with pytest.raises(InfeasibleLabelError):
            ctc_loss(r.standard_normal((t_len, n_sym + 1)), label)
        return
    probs = random_probs(r, t_len, n_sym + 1)
    brute = ctc_bruteforce(probs, label)
    got = math.exp(-ctc_loss_from_probs(probs, label).loss)
    assert abs(got - brute) <= 1e-10 * brute


def test_infeasible_label_is_an_error():
    with pytest.raises(InfeasibleLabelError):
        ctc_loss(np.zeros((2, 3)), [A, A])        # needs a blank between the repeats
    with pytest.raises(InfeasibleLabelError):
        ctc_loss_from_probs([[1.0, 0.0, 0.0]], [B])   # p(label) = 0 exactly
    assert ctc_loss(np.zeros((3, 3)), [A, A]).loss > 0


def test_label_index_checked():
    with pytest.raises(UsageError):
        ctc_loss(np.zeros((3, 3)), [2])          # index 2 is the blank


def test_gradient_matches_finite_differences(rng):
    for t_len, k, label in [(1, 2, [0]), (4, 3, [0, 1]), (6, 5, [2, 2, 1]), (5, 4, [])]:
        logits = rng.uniform(-1, 1, (t_len, k))
        res = ctc_loss(logits, label)
        assert grad_check(lambda v: ctc_loss(v, label).loss, logits, res.grad) < 1e-6
        np.testing.assert_allclose(res.grad.sum(axis=1), 0.0, atol=1e-12)


def test_batch_equals_individual_losses(rng):
    labels = [[0, 1, 1], [], [2], [0, 0]]
    logits = rng.standard_normal((4, 7, 4))
    losses, grads = ctc_loss_batch(logits, labels)
    for i, lab in enumerate(labels):
        res = ctc_loss(logits[i], lab)
        assert losses[i] == pytest.approx(res.loss, rel=1e-13)
        np.testing.assert_allclose(grads[i], res.grad, rtol=1e-11, atol=1e-14)


def test_raising_label_symbol_never_increases_loss(rng):
    # the mass moves from symbols outside the label, which no contributing path uses
    k, label = 5, [0, 1]
    for _ in range(200):
        t_len = int(rng.integers(2, 6))
        probs = random_probs(rng, t_len, k)
        t, sym = rng.integers(t_len), label[rng.integers(2)]
        bumped = probs.copy()
        taken = bumped[t, 2:4] * rng.uniform(0, 1)
        bumped[t, 2:4] -= taken
        bumped[t, sym] += taken.sum()
        assert ctc_bruteforce(bumped, label) >= ctc_bruteforce(probs, label) * (1 - 1e-12)
        assert ctc_loss_from_probs(bumped, label).loss <= ctc_loss_from_probs(probs, label).loss + 1e-12


def test_tiny_probabilities_stay_finite():
    p = np.full((6, 3), 1e-300)
    p[:, 2] = 1.0 - 2e-300
    res = ctc_loss_from_probs(p, [0, 1])
    assert np.isfinite(res.loss) and np.all(np.isfinite(res.grad))
    # 15 paths with exactly two non-blank frames dominate: p ~ 15e-600
    assert res.loss == pytest.approx(600 * math.log(10) - math.log(15), rel=1e-12)


# --- brute force ------------------------------------------------------------------

def test_label_probabilities_partition_path_space(rng):
    for t_len, k in [(1, 2), (3, 3), (5, 4), (6, 3)]:
        dist = label_distribution(random_probs(rng, t_len, k))
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
        assert all(len(lab) <= t_len for lab in dist)


def test_one_hot_spelling():
    assert ctc_bruteforce(one_hot([A, 2, B], 3), [A, B]) == 1.0


def test_bruteforce_size_guard():
    with pytest.raises(SizeError):
        ctc_bruteforce(np.full((11, 4), 0.25), [0])


# --- decoding ---------------------------------------------------------------------

def test_greedy_examples():
    h, i, blank = 0, 1, 2
    assert decode_greedy(one_hot([h, blank, i, i], 3)) == (h, i)
    assert decode_greedy(one_hot([blank] * 4, 3)) == ()


def test_greedy_ties_go_to_lowest_index():
    assert decode_greedy(np.full((1, 3), 1 / 3)) == (0,)


def test_greedy_is_collapsed_argmax(rng):
    for _ in range(50):
        p = random_probs(rng, 7, 4)
        path = [max(range(4), key=lambda c, row=row: (row[c], -c)) for row in p]
        assert decode_greedy(p) == collapse(path, 3)


def test_beam_width_one_on_peaked_distribution(rng):
    for _ in range(30):
        p = random_probs(rng, 6, 4, peaked=6.0)
        assert decode_beam(p, 1) == decode_greedy(p)


def test_beam_width_validated():
    with pytest.raises(UsageError):
        decode_beam(np.full((2, 2), 0.5), 0)


def test_exhaustive_beam_is_label_argmax(rng):
    for _ in range(200):
        t_len, k = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        p = random_probs(rng, t_len, k, peaked=2.0)
        dist = label_distribution(p)
        best = decode_beam(p, None)
        assert dist[best] == pytest.approx(max(dist.values()), rel=1e-12)


def test_beam_beats_greedy_when_mass_splits():
    # best path is all blanks (0.4^2 = 0.16) but "a" collects 0.6^2 + 2*0.6*0.4*... paths
    p = np.array([[0.3, 0.3, 0.4], [0.3, 0.3, 0.4]])
    assert decode_greedy(p) == ()
    dist = label_distribution(p)
    assert decode_beam(p, 16) == max(dist, key=dist.get)
    assert dist[decode_beam(p, 16)] > dist[()]
