"""Connectionist temporal classification.

The last class of every distribution is the blank.  Losses are computed
from logits through an internal log-softmax, so passing log-probabilities
as "logits" gives the loss of that probability matrix.
"""

import itertools
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InfeasibleLabelError, SizeError, UsageError

BRUTEFORCE_LIMIT = 10 ** 6


@dataclass
class CtcLossResult:
    loss: float
    grad: np.ndarray    # d loss / d logits, T x K


def collapse(path, blank):
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k < 0 or k > blank:
            raise UsageError(f"path symbol {k} outside 0..{blank}")
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return tuple(out)


def log_softmax(logits, axis=-1):
    m = logits.max(axis=axis, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def min_frames(label):
    """Smallest T that can emit ``label``: one frame per symbol plus a blank per repeat."""
    label = list(label)
    return len(label) + sum(1 for a, b in zip(label, label[1:]) if a == b)


def _shift(a, k, right=True):
    """Shift columns by ``k`` filling with -inf (right: a[:, s-k] -> s)."""
    out = np.full_like(a, -np.inf)
    if k < a.shape[1]:
        if right:
            out[:, k:] = a[:, :-k]
        else:
            out[:, :-k] = a[:, k:]
    return out


def _logsumexp3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(a - m_safe) + np.exp(b - m_safe) + np.exp(c - m_safe)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(m), m_safe + np.log(s), -np.inf)


def ctc_loss_batch(logits, labels):
    """Negative log-likelihoods and logit gradients for a batch.

    ``logits`` is N x T x K (class K-1 is blank); ``labels`` holds N index
    sequences without blanks.  Runs the forward-backward recursion over the
    blank-augmented labels in log space.  Returns ``(losses, grads)`` with
    shapes N and N x T x K.
    """
    logits = np.asarray(logits)
    n, t_len, k = logits.shape
    blank = k - 1
    if len(labels) != n:
        raise UsageError(f"{len(labels)} labels for a batch of {n}")
    for lab in labels:
        if any(int(c) < 0 or int(c) >= blank for c in lab):
            raise UsageError(f"label {tuple(lab)} has indices outside 0..{blank - 1}")
        if min_frames(lab) > t_len:
            raise InfeasibleLabelError(
                f"label of length {len(lab)} needs {min_frames(lab)} frames, only {t_len} available")

    s_max = 2 * max((len(lab) for lab in labels), default=0) + 1
    ext = np.full((n, s_max), blank, dtype=np.int64)
    s_len = np.empty(n, dtype=np.int64)
    for i, lab in enumerate(labels):
        ext[i, 1:2 * len(lab):2] = lab
        s_len[i] = 2 * len(lab) + 1
    valid = np.arange(s_max)[None, :] < s_len[:, None]
    skip = np.zeros((n, s_max), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])

    logp = log_softmax(logits.astype(np.float64))
    lp = np.take_along_axis(logp, np.broadcast_to(ext[:, None, :], (n, t_len, s_max)), axis=2)
    lp = np.where(valid[:, None, :], lp, -np.inf)

    alpha = np.full((n, t_len, s_max), -np.inf)
    alpha[:, 0, 0] = lp[:, 0, 0]
    if s_max > 1:
        alpha[:, 0, 1] = lp[:, 0, 1]
    for t in range(1, t_len):
        a = alpha[:, t - 1]
        a1 = _shift(a, 1)
        a2 = np.where(skip, _shift(a, 2), -np.inf)
        alpha[:, t] = _logsumexp3(a, a1, a2) + lp[:, t]

    # beta[t, s] includes the emission at t
    beta = np.full((n, t_len, s_max), -np.inf)
    rows = np.arange(n)
    beta[rows, t_len - 1, s_len - 1] = lp[rows, t_len - 1, s_len - 1]
    has_two = s_len > 1
    beta[rows[has_two], t_len - 1, s_len[has_two] - 2] = lp[rows[has_two], t_len - 1, s_len[has_two] - 2]
    skip_next = np.zeros((n, s_max), dtype=bool)
    skip_next[:, :-2] = skip[:, 2:]
    for t in range(t_len - 2, -1, -1):
        b = beta[:, t + 1]
        b1 = _shift(b, 1, right=False)
        b2 = np.where(skip_next, _shift(b, 2, right=False), -np.inf)
        beta[:, t] = _logsumexp3(b, b1, b2) + lp[:, t]

    last = alpha[rows, t_len - 1, s_len - 1]
    prev = np.where(has_two, alpha[rows, t_len - 1, np.maximum(s_len - 2, 0)], -np.inf)
    log_like = np.logaddexp(last, prev)
    if not np.all(np.isfinite(log_like)):
        raise InfeasibleLabelError("label has zero probability under the given distribution")

    with np.errstate(invalid="ignore"):
        occ = alpha + beta - lp - log_like[:, None, None]
    post = np.exp(np.where(np.isfinite(occ), occ, -np.inf))      # N x T x S
    onehot = np.zeros((n, s_max, k))
    np.put_along_axis(onehot, ext[:, :, None], 1.0, axis=2)
    onehot *= valid[:, :, None]
    grads = np.exp(logp) - post @ onehot
    return -log_like, grads


def ctc_loss(logits, label):
    """CTC loss of one T x K logit matrix against one label."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise UsageError(f"ctc_loss expects T x K logits, got {logits.shape}")
    losses, grads = ctc_loss_batch(logits[None], [list(label)])
    return CtcLossResult(float(losses[0]), grads[0])


def ctc_loss_from_probs(probs, label):
    with np.errstate(divide="ignore"):
        return ctc_loss(np.log(np.asarray(probs, dtype=np.float64)), label)


# --- brute force --------------------------------------------------------------

@lru_cache(maxsize=64)
def _path_table(t_len, k):
    paths = np.array(list(itertools.product(range(k), repeat=t_len)), dtype=np.int64)
    index = {}
    ids = np.array([index.setdefault(collapse(p, k - 1), len(index)) for p in paths])
    return paths, ids, list(index)


def _path_probs(probs):
    probs = np.asarray(probs, dtype=np.float64)
    t_len, k = probs.shape
    if k ** t_len > BRUTEFORCE_LIMIT:
        raise SizeError(f"{k}^{t_len} paths exceeds the brute-force limit {BRUTEFORCE_LIMIT}")
    paths, ids, labels = _path_table(t_len, k)
    pp = np.prod(probs[np.arange(t_len)[None, :], paths], axis=1)
    return pp, ids, labels


def ctc_bruteforce(probs, label):
    """p(label | x) by summing over every path that collapses to ``label``."""
    pp, ids, labels = _path_probs(probs)
    target = tuple(int(c) for c in label)
    if target not in labels:
        return 0.0
    return float(pp[ids == labels.index(target)].sum())


def label_distribution(probs):
    """Exhaustive map label -> p(label | x) over every reachable label."""
    pp, ids, labels = _path_probs(probs)
    sums = np.bincount(ids, weights=pp, minlength=len(labels))
    return dict(zip(labels, sums.tolist()))


# --- decoding ---------------------------------------------------------------------

def decode_greedy(probs):
    """Best path: per-step argmax (lowest index wins ties), then collapse."""
    probs = np.asarray(probs)
    return collapse(np.argmax(probs, axis=-1), probs.shape[-1] - 1)


def decode_beam(probs, beam_width=16):
    """Prefix beam search over a T x K probability matrix.

    Each prefix keeps separate log-probabilities of ending in a blank and in
    its last symbol.  ``beam_width=None`` disables pruning (guarded by
    ``BRUTEFORCE_LIMIT`` live prefixes), which yields the exact most
    probable label.
    """
    if beam_width is not None and beam_width < 1:
        raise UsageError(f"beam_width must be >= 1, got {beam_width}")
    probs = np.asarray(probs, dtype=np.float64)
    t_len, k = probs.shape
    blank = k - 1
    with np.errstate(divide="ignore"):
        lp = np.log(probs)
    ninf = -np.inf
    beams = {(): (0.0, ninf)}        # prefix -> (log p ending blank, log p ending symbol)
    for t in range(t_len):
        nxt = defaultdict(lambda: [ninf, ninf])
        row = lp[t]
        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            entry = nxt[prefix]
            entry[0] = np.logaddexp(entry[0], total + row[blank])
            if prefix:
                entry[1] = np.logaddexp(entry[1], pnb + row[prefix[-1]])
            for c in range(blank):
                if row[c] == ninf:
                    continue
                ext = prefix + (c,)
                e = nxt[ext]
                src = pb if prefix and prefix[-1] == c else total
                e[1] = np.logaddexp(e[1], src + row[c])
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(*kv[1]), len(kv[0]), kv[0]))
        if beam_width is None:
            if len(ranked) > BRUTEFORCE_LIMIT:
                raise SizeError("exhaustive beam exceeded the prefix limit")
        else:
            ranked = ranked[:beam_width]
        beams = {p: tuple(v) for p, v in ranked}
    best = min(beams.items(), key=lambda kv: (-np.logaddexp(*kv[1]), len(kv[0]), kv[0]))
    return best[0]
