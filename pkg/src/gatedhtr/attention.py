"""Additive (Bahdanau) attention.

The scoring function is ``v . tanh(W1 h_t + W2 h_s)``; the weights are the
softmax of the scores over source positions, the context is the weighted
sum of source states and the attention vector is ``tanh(Wc [c_t; h_t])``.

In the encoder-decoder model every encoder step acts as a query over the
whole encoder sequence, so a T x D sequence maps to a T x D' sequence
(:func:`attention_layer_forward`).  :func:`attend` is the single-query form.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, UsageError


@dataclass
class AttentionParams:
    W1: np.ndarray        # A x D_query
    W2: np.ndarray        # A x D_source (ignored when tied)
    v: np.ndarray         # A
    Wc: np.ndarray        # D_out x (D_source + D_query)
    tied: bool = False

    @property
    def key_matrix(self):
        return self.W1 if self.tied else self.W2

    def check(self, d_query, d_source):
        a = self.v.shape[0]
        if self.W1.shape != (a, d_query):
            raise DimensionError(f"W1 is {self.W1.shape}, expected {(a, d_query)}")
        if self.key_matrix.shape != (a, d_source):
            raise DimensionError(f"W2 is {self.key_matrix.shape}, expected {(a, d_source)}")
        if self.Wc.shape[1] != d_source + d_query:
            raise DimensionError(
                f"Wc has {self.Wc.shape[1]} columns, expected {d_source + d_query}")


@dataclass
class AttentionOutput:
    weights: np.ndarray
    context: np.ndarray
    vector: np.ndarray
    cache: dict = field(default=None, repr=False)


def softmax(scores, axis=-1):
    z = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def score(h_t, h_s, p):
    h_t = np.asarray(h_t, dtype=np.float64)
    h_s = np.asarray(h_s, dtype=np.float64)
    p.check(h_t.shape[0], h_s.shape[0])
    return float(p.v @ np.tanh(p.W1 @ h_t + p.key_matrix @ h_s))


def attend(h_t, encoder_states, p):
    """Attend from one query ``h_t`` over a S x D sequence of source states."""
    h_t = np.asarray(h_t, dtype=np.float64)
    hs = np.asarray(encoder_states, dtype=np.float64)
    if hs.ndim != 2 or hs.shape[0] == 0:
        raise UsageError(f"attend needs a non-empty S x D source sequence, got {hs.shape}")
    p.check(h_t.shape[0], hs.shape[1])
    q = p.W1 @ h_t
    e = np.tanh(q[None, :] + hs @ p.key_matrix.T)     # S x A
    scores = e @ p.v
    alpha = softmax(scores)
    ctx = alpha @ hs
    cat = np.concatenate([ctx, h_t])
    vec = np.tanh(p.Wc @ cat)
    cache = {"h_t": h_t, "hs": hs, "e": e, "alpha": alpha, "cat": cat, "vec": vec, "p": p}
    return AttentionOutput(alpha, ctx, vec, cache)


def attention_backward(out, grad_vector, grad_context=None):
    """Backward pass of :func:`attend`.

    ``grad_context`` is the gradient arriving directly at ``c_t`` (besides
    the path through the attention vector).  Returns
    ``(grad_h_t, grad_encoder_states, grads)``.
    """
    cache = out.cache if isinstance(out, AttentionOutput) else out
    if cache is None:
        raise UsageError("attention_backward needs the cache produced by attend")
    p = cache["p"]
    hs, h_t, e, alpha = cache["hs"], cache["h_t"], cache["e"], cache["alpha"]
    ds = hs.shape[1]
    dz = np.asarray(grad_vector) * (1.0 - cache["vec"] ** 2)
    dWc = np.outer(dz, cache["cat"])
    dcat = p.Wc.T @ dz
    dctx = dcat[:ds]
    if grad_context is not None:
        dctx = dctx + grad_context
    dh_t = dcat[ds:].copy()
    dhs = np.outer(alpha, dctx)
    dalpha = hs @ dctx
    dscores = alpha * (dalpha - alpha @ dalpha)
    dv = e.T @ dscores
    dpre = np.outer(dscores, p.v) * (1.0 - e * e)        # S x A
    dq = dpre.sum(axis=0)
    dW1 = np.outer(dq, h_t)
    dW2 = dpre.T @ hs
    dh_t += p.W1.T @ dq
    dhs += dpre @ p.key_matrix
    grads = {"v": dv, "Wc": dWc}
    if p.tied:
        grads["W1"] = dW1 + dW2
    else:
        grads["W1"], grads["W2"] = dW1, dW2
    return dh_t, dhs, grads


def attention_layer_forward(x, p):
    """Self-attentive re-encoding of N x T x D sequences (queries = steps).

    Returns the N x T x D_out attention vectors and a cache.
    """
    if x.ndim != 3 or x.shape[1] == 0:
        raise UsageError(f"attention layer expects N x T x D input, got {x.shape}")
    p.check(x.shape[2], x.shape[2])
    q = x @ p.W1.T                                      # N x T x A
    k = x @ p.key_matrix.T
    e = np.tanh(q[:, :, None, :] + k[:, None, :, :])    # N x Tq x Ts x A
    scores = e @ p.v
    alpha = softmax(scores, axis=-1)
    ctx = alpha @ x
    cat = np.concatenate([ctx, x], axis=-1)
    out = np.tanh(cat @ p.Wc.T)
    return out, (x, e, alpha, cat, out, p)


def attention_layer_backward(cache, dout):
    if cache is None:
        raise UsageError("attention_layer_backward needs the cache from attention_layer_forward")
    x, e, alpha, cat, out, p = cache
    d = x.shape[2]
    dz = dout * (1.0 - out * out)
    dWc = np.einsum("nto,ntc->oc", dz, cat)
    dcat = dz @ p.Wc
    dctx = dcat[..., :d]
    dx = dcat[..., d:] + np.swapaxes(alpha, 1, 2) @ dctx
    dalpha = dctx @ np.swapaxes(x, 1, 2)
    dscores = alpha * (dalpha - (dalpha * alpha).sum(axis=-1, keepdims=True))
    dv = np.einsum("nts,ntsa->a", dscores, e)
    dpre = dscores[..., None] * p.v * (1.0 - e * e)
    dq = dpre.sum(axis=2)
    dk = dpre.sum(axis=1)
    dW1 = np.einsum("nta,ntd->ad", dq, x)
    dW2 = np.einsum("nta,ntd->ad", dk, x)
    dx += dq @ p.W1 + dk @ p.key_matrix
    grads = {"v": dv, "Wc": dWc}
    if p.tied:
        grads["W1"] = dW1 + dW2
    else:
        grads["W1"], grads["W2"] = dW1, dW2
    return dx, grads
