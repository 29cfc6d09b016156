"""GRU cell and the bidirectional GRU decoder.

Cell equations (Cho et al. 2014, with the ``(1 - z) h + z h~`` convention)::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~

Sequences are batched N x T x D.  Initial states are zero.
"""

from dataclasses import dataclass, fields

import numpy as np

from .errors import DimensionError, UsageError
from .tensor import sigmoid

GRU_FIELDS = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


@dataclass
class GruParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    @property
    def hidden_size(self):
        return self.U_z.shape[0]

    @property
    def input_size(self):
        return self.W_z.shape[1]

    def check(self, d_in=None):
        h = self.hidden_size
        for f in fields(self):
            a = getattr(self, f.name)
            want = {"W": (h, self.input_size), "U": (h, h), "b": (h,)}[f.name[0]]
            if a.shape != want:
                raise DimensionError(f"GRU {f.name} has shape {a.shape}, expected {want}")
        if d_in is not None and d_in != self.input_size:
            raise DimensionError(f"GRU expects inputs of size {self.input_size}, got {d_in}")


def gru_step(x_t, h_prev, p):
    """One GRU update.  Works on single vectors or N-row batches."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    p.check(x_t.shape[-1])
    if h_prev.shape[-1] != p.hidden_size:
        raise DimensionError(f"h_prev has size {h_prev.shape[-1]}, expected {p.hidden_size}")
    z = sigmoid(x_t @ p.W_z.T + h_prev @ p.U_z.T + p.b_z)
    r = sigmoid(x_t @ p.W_r.T + h_prev @ p.U_r.T + p.b_r)
    hh = np.tanh(x_t @ p.W_h.T + (r * h_prev) @ p.U_h.T + p.b_h)
    return (1.0 - z) * h_prev + z * hh


def gru_forward(x, p, reverse=False):
    """Run the cell over N x T x D inputs; returns N x T x H states and a cache.

    With ``reverse=True`` the sequence is consumed right to left and the
    states are returned aligned with the input positions.
    """
    n, t_len, _ = x.shape
    p.check(x.shape[2])
    hsz = p.hidden_size
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    # input projections for all steps at once
    xz = x @ p.W_z.T + p.b_z
    xr = x @ p.W_r.T + p.b_r
    xh = x @ p.W_h.T + p.b_h
    u_zr = np.concatenate([p.U_z, p.U_r]).T
    u_h = p.U_h.T
    h = np.zeros((n, hsz), dtype=x.dtype)
    states = np.empty((n, t_len, hsz), dtype=x.dtype)
    steps = []
    for t in order:
        zr = h @ u_zr
        z = sigmoid(xz[:, t] + zr[:, :hsz])
        r = sigmoid(xr[:, t] + zr[:, hsz:])
        rh = r * h
        hh = np.tanh(xh[:, t] + rh @ u_h)
        h_new = h + z * (hh - h)
        steps.append((t, h, z, r, rh, hh))
        states[:, t] = h_new
        h = h_new
    return states, {"x": x, "p": p, "steps": steps}


def gru_backward(cache, dstates):
    """BPTT for :func:`gru_forward`.  Returns ``(dx, grads)``."""
    if cache is None:
        raise UsageError("gru_backward needs the cache from gru_forward")
    x, p, steps = cache["x"], cache["p"], cache["steps"]
    n, t_len, _ = x.shape
    hsz = p.hidden_size
    daz = np.zeros((n, t_len, hsz), dtype=x.dtype)
    dar = np.zeros_like(daz)
    dah = np.zeros_like(daz)
    dU_zr = np.zeros((2 * hsz, hsz), dtype=x.dtype)
    dU_h = np.zeros((hsz, hsz), dtype=x.dtype)
    u_zr = np.concatenate([p.U_z, p.U_r])
    dh_next = np.zeros((n, hsz), dtype=x.dtype)
    for t, h_prev, z, r, rh, hh in reversed(steps):
        dh = dstates[:, t] + dh_next
        a_h = dh * z * (1.0 - hh * hh)
        a_z = dh * (hh - h_prev) * z * (1.0 - z)
        drh = a_h @ p.U_h
        a_r = drh * h_prev * r * (1.0 - r)
        a_zr = np.concatenate([a_z, a_r], axis=1)
        dU_h += a_h.T @ rh
        dU_zr += a_zr.T @ h_prev
        dh_next = dh * (1.0 - z) + drh * r + a_zr @ u_zr
        daz[:, t], dar[:, t], dah[:, t] = a_z, a_r, a_h
    x2 = x.reshape(n * t_len, -1)
    flat = lambda a: a.reshape(n * t_len, hsz)  # noqa: E731
    grads = {
        "W_z": flat(daz).T @ x2, "W_r": flat(dar).T @ x2, "W_h": flat(dah).T @ x2,
        "U_z": dU_zr[:hsz], "U_r": dU_zr[hsz:], "U_h": dU_h,
        "b_z": daz.sum(axis=(0, 1)), "b_r": dar.sum(axis=(0, 1)), "b_h": dah.sum(axis=(0, 1)),
    }
    dx = daz @ p.W_z + dar @ p.W_r + dah @ p.W_h
    return dx, grads


def bigru_layer_forward(x, fwd, bwd):
    """One bidirectional layer: N x T x D -> N x T x (H_fwd + H_bwd)."""
    hf, cf = gru_forward(x, fwd)
    hb, cb = gru_forward(x, bwd, reverse=True)
    return np.concatenate([hf, hb], axis=-1), (cf, cb, hf.shape[-1])


def bigru_layer_backward(cache, dout):
    cf, cb, hf = cache
    dxf, gf = gru_backward(cf, dout[..., :hf])
    dxb, gb = gru_backward(cb, dout[..., hf:])
    return dxf + dxb, gf, gb


def bigru_forward(seq, layers, proj_W, proj_b):
    """Stacked bidirectional GRU followed by a per-step affine projection.

    ``seq`` is T x D or N x T x D; ``layers`` is a list of ``(fwd, bwd)``
    :class:`GruParams` pairs.  Returns logits of shape (N x) T x K and a
    cache for :func:`bigru_backward`.
    """
    seq = np.asarray(seq)
    single = seq.ndim == 2
    x = seq[None] if single else seq
    if x.ndim != 3 or x.shape[1] == 0:
        raise UsageError(f"bigru_forward needs a non-empty sequence, got shape {seq.shape}")
    if not layers:
        raise UsageError("bigru_forward needs at least one layer")
    caches = []
    h = x
    for fwd, bwd in layers:
        h, c = bigru_layer_forward(h, fwd, bwd)
        caches.append(c)
    if proj_W.shape[1] != h.shape[-1]:
        raise DimensionError(f"projection expects {proj_W.shape[1]} inputs, states have {h.shape[-1]}")
    logits = h @ proj_W.T + proj_b
    cache = {"caches": caches, "top": h, "proj_W": proj_W, "single": single}
    return (logits[0] if single else logits), cache


def bigru_backward(cache, grad_logits):
    """Returns ``(grad_seq, grads)``; grads keys look like ``l0.fwd.W_z``, ``proj.W``."""
    if cache is None:
        raise UsageError("bigru_backward needs the cache from bigru_forward")
    d = grad_logits[None] if cache["single"] else grad_logits
    top = cache["top"]
    k = d.shape[-1]
    grads = {
        "proj.W": d.reshape(-1, k).T @ top.reshape(-1, top.shape[-1]),
        "proj.b": d.sum(axis=(0, 1)),
    }
    dh = d @ cache["proj_W"]
    for i in range(len(cache["caches"]) - 1, -1, -1):
        dh, gf, gb = bigru_layer_backward(cache["caches"][i], dh)
        for name, g in gf.items():
            grads[f"l{i}.fwd.{name}"] = g
        for name, g in gb.items():
            grads[f"l{i}.bwd.{name}"] = g
    return (dh[0] if cache["single"] else dh), grads
