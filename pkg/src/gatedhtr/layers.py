"""Encoder building blocks.

Every layer comes as a ``*_forward`` returning ``(out, cache)`` and a
``*_backward`` taking that cache and the upstream gradient.  Feature maps are
N x C x H x W; a single C x H x W map is accepted and returned unbatched.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, UsageError
from .tensor import conv2d_backward, conv2d_forward

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class ConvBlockParams:
    kernels: np.ndarray          # C_out x C_in x kh x kw
    prelu_alpha: np.ndarray      # C_out
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    dropout_p: float = 0.0
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if np.any(self.bn_running_var < 0):
            raise ConfigError("bn_running_var must be non-negative")


@dataclass
class GateParams:
    gate_kernels: np.ndarray     # C x C x kh x kw, odd kh/kw for same padding

    @property
    def padding(self):
        kh, kw = self.gate_kernels.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"gate kernel {kh}x{kw} cannot be same-padded")
        return kh // 2, kw // 2


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise DimensionError(f"expected a C x H x W or N x C x H x W map, got {x.shape}")
    return x, False


# --- gated convolution --------------------------------------------------------

def gated_forward(x, p):
    """y = tanh(conv(x; W)) * x with a same-padded gate convolution."""
    xb, single = _batched(x)
    pre, conv_cache = conv2d_forward(xb, p.gate_kernels, (1, 1), p.padding)
    if pre.shape != xb.shape:
        raise DimensionError(f"gate output {pre.shape} differs from gated input {xb.shape}")
    g = np.tanh(pre)
    y = g * xb
    cache = (xb, g, conv_cache, single)
    return (y[0] if single else y), cache


def gated_backward(cache, grad_out):
    """Returns ``(grad_x, {"gate_kernels": grad_W})``."""
    if cache is None:
        raise UsageError("gated_backward needs the cache from gated_forward")
    xb, g, conv_cache, single = cache
    dy = grad_out[None] if single else grad_out
    dx = dy * g
    dpre = dy * xb * (1.0 - g * g)
    dx_conv, dk = conv2d_backward(conv_cache, dpre)
    dx = dx + dx_conv
    return (dx[0] if single else dx), {"gate_kernels": dk}


# --- conv -> PReLU -> batch norm -> dropout -------------------------------------

def _dropout_mask(rng, shape, p, dtype):
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / (1.0 - p)


def conv_block_forward(x, p, mode="infer", rng=None, eps=BN_EPS):
    """One encoder block.

    In ``train`` mode batch statistics normalise the activations and an
    inverted-dropout mask is drawn from ``rng`` (a seed or a
    ``numpy.random.Generator``).  The batch mean/variance are returned in the
    cache; apply them with :func:`update_running_stats`.  ``infer`` mode uses
    the running statistics and no mask.
    """
    if mode not in ("train", "infer"):
        raise UsageError(f"mode must be 'train' or 'infer', got {mode!r}")
    xb, single = _batched(x)
    conv, conv_cache = conv2d_forward(xb, p.kernels, p.stride, p.padding)
    alpha = p.prelu_alpha.reshape(1, -1, 1, 1)
    act = np.where(conv >= 0, conv, alpha * conv)

    if mode == "train":
        mean = act.mean(axis=(0, 2, 3))
        var = act.var(axis=(0, 2, 3))
    else:
        mean, var = p.bn_running_mean, p.bn_running_var
    std = np.sqrt(var + eps)
    if not np.all(std > 0):
        raise NumericError("batch-norm variance + epsilon is not positive")
    xhat = (act - mean.reshape(1, -1, 1, 1)) / std.reshape(1, -1, 1, 1)
    out = p.bn_gamma.reshape(1, -1, 1, 1) * xhat + p.bn_beta.reshape(1, -1, 1, 1)

    mask = None
    if mode == "train" and p.dropout_p > 0:
        if rng is None:
            raise UsageError("train mode with dropout needs an rng seed")
        mask = _dropout_mask(rng, out.shape, p.dropout_p, out.dtype)
        out = out * mask

    cache = {
        "mode": mode, "conv_cache": conv_cache, "conv": conv, "alpha": alpha,
        "xhat": xhat, "std": std, "gamma": p.bn_gamma, "mask": mask,
        "batch_mean": mean, "batch_var": var, "single": single,
    }
    return (out[0] if single else out), cache


def conv_block_backward(cache, grad_out):
    """Returns ``(grad_x, grads)`` with grads for kernels, PReLU slope, gamma and beta."""
    if cache is None:
        raise UsageError("conv_block_backward needs the cache from conv_block_forward")
    d = grad_out[None] if cache["single"] else grad_out
    if cache["mask"] is not None:
        d = d * cache["mask"]
    xhat = cache["xhat"]
    dgamma = (d * xhat).sum(axis=(0, 2, 3))
    dbeta = d.sum(axis=(0, 2, 3))
    dxhat = d * cache["gamma"].reshape(1, -1, 1, 1)
    std = cache["std"].reshape(1, -1, 1, 1)
    if cache["mode"] == "train":
        m = d.shape[0] * d.shape[2] * d.shape[3]
        dact = (dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True) / m
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True) / m) / std
    else:
        dact = dxhat / std
    conv = cache["conv"]
    neg = conv < 0
    dalpha = (dact * conv * neg).sum(axis=(0, 2, 3))
    dconv = np.where(neg, cache["alpha"] * dact, dact)
    dx, dk = conv2d_backward(cache["conv_cache"], dconv)
    grads = {"kernels": dk, "prelu_alpha": dalpha, "bn_gamma": dgamma, "bn_beta": dbeta}
    return (dx[0] if cache["single"] else dx), grads


def update_running_stats(p, cache, momentum=BN_MOMENTUM):
    """Fold a train-mode cache's batch statistics into ``p`` in place."""
    n = cache["conv"].shape[0] * cache["conv"].shape[2] * cache["conv"].shape[3]
    unbiased = cache["batch_var"] * n / max(n - 1, 1)
    p.bn_running_mean *= momentum
    p.bn_running_mean += (1 - momentum) * cache["batch_mean"]
    p.bn_running_var *= momentum
    p.bn_running_var += (1 - momentum) * unbiased


# --- map to sequence ---------------------------------------------------------------

def map_to_sequence(feature_map, feature_dim=None):
    """Turn a C x H' x W' map into a W' x (C*H') sequence, left to right.

    Column k of the map, flattened channel-major, becomes step k.  Batched
    input N x C x H' x W' yields N x W' x (C*H').
    """
    fm, single = _batched(feature_map)
    n, c, h, w = fm.shape
    if feature_dim is not None and c * h != feature_dim:
        raise ConfigError(
            f"feature map {c}x{h}x{w} flattens to {c * h} features per step, expected {feature_dim}")
    seq = np.ascontiguousarray(fm.transpose(0, 3, 1, 2).reshape(n, w, c * h))
    return seq[0] if single else seq


def sequence_to_map(grad_seq, map_shape):
    """Inverse reshape of :func:`map_to_sequence`, used for its backward pass."""
    if len(map_shape) == 3:
        return sequence_to_map(grad_seq[None], (1,) + tuple(map_shape))[0]
    n, c, h, w = map_shape
    return np.ascontiguousarray(grad_seq.reshape(n, w, c, h).transpose(0, 2, 3, 1))
