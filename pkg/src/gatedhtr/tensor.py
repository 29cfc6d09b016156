"""Dense tensor operations, a finite-difference gradient checker and the
checkpoint file format.

Tensors are plain row-major ``numpy.ndarray`` objects.  The public
operations here validate shapes and finiteness; the layer modules call the
``*_forward`` / ``*_backward`` pairs directly on pre-validated data.
"""

import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, UsageError

CHECKPOINT_MAGIC = b"HTRF"
CHECKPOINT_VERSION = 1


def as_tensor(x, dtype=np.float64):
    """Return ``x`` as a C-contiguous array with every extent >= 1."""
    a = np.ascontiguousarray(x, dtype=dtype)
    if a.ndim == 0:
        a = a.reshape(1)
    if any(d < 1 for d in a.shape):
        raise DimensionError(f"tensor shape {a.shape} has an empty extent")
    return a


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NumericError(f"{what}: {bad} non-finite value(s)")
    return x


def matmul(a, b):
    """Matrix product of an m x k and a k x n tensor."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):   # reported below as NumericError
        out = a @ b
    return check_finite(out, "matmul")


def _pair(v):
    if np.isscalar(v):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def conv_output_shape(h, w, kh, kw, stride=(1, 1), padding=(0, 0)):
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")
    return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


def conv2d_forward(x, kernels, stride=(1, 1), padding=(0, 0)):
    """Batched cross-correlation via im2col.

    ``x`` is N x C x H x W, ``kernels`` is O x C x kh x kw.  Returns the
    N x O x H' x W' output and a cache for :func:`conv2d_backward`.
    """
    n, c, h, w = x.shape
    o, c2, kh, kw = kernels.shape
    if c != c2:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    ho, wo = conv_output_shape(h, w, kh, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    # rows: (n, ho, wo); columns: (c, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ kernels.reshape(o, -1).T
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    cache = (x.shape, xp.shape, cols, kernels, (sh, sw), (ph, pw), (ho, wo))
    return np.ascontiguousarray(out), cache


def conv2d_backward(cache, dout):
    """Gradients of :func:`conv2d_forward` wrt input and kernels."""
    if cache is None:
        raise UsageError("conv2d_backward called without a forward cache")
    xshape, xpshape, cols, kernels, (sh, sw), (ph, pw), (ho, wo) = cache
    n, c, h, w = xshape
    o, _, kh, kw = kernels.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    dk = (d2.T @ cols).reshape(kernels.shape)
    dcols = (d2 @ kernels.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros(xpshape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, ph:ph + h, pw:pw + w]
    return np.ascontiguousarray(dx), dk


def conv2d(x, kernels, stride=(1, 1), padding=(0, 0)):
    """2-d cross-correlation (no kernel flip).

    ``x`` is C x H x W (or batched N x C x H x W); ``kernels`` is
    C_out x C_in x kh x kw.  The output has
    ``H' = (H + 2*pad_h - kh) // stride_h + 1`` rows and likewise for width.
    """
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim != 4:
        raise DimensionError(f"kernels must be 4-d, got shape {kernels.shape}")
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be 3-d or 4-d, got shape {x.shape}")
    out, _ = conv2d_forward(x, kernels, stride, padding)
    check_finite(out, "conv2d")
    return out[0] if single else out


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def prelu(x, alpha):
    return np.where(x >= 0, x, alpha * x)


_UNARY = {"tanh": np.tanh, "sigmoid": sigmoid}
_BINARY = {"add": np.add, "mul": np.multiply}


def elementwise(op, *operands, alpha=None):
    """Apply ``add``, ``mul``, ``tanh``, ``sigmoid`` or ``prelu`` positionwise.

    Binary operands must have equal shapes or one of them must be a scalar.
    ``prelu`` takes one operand and the slope ``alpha`` for negative inputs.
    """
    arrs = [np.asarray(a, dtype=np.float64) for a in operands]
    if op in _UNARY:
        if len(arrs) != 1:
            raise UsageError(f"{op} takes one operand, got {len(arrs)}")
        out = _UNARY[op](arrs[0])
    elif op == "prelu":
        if len(arrs) != 1 or alpha is None:
            raise UsageError("prelu takes one operand and an alpha")
        out = prelu(arrs[0], alpha)
    elif op in _BINARY:
        if len(arrs) != 2:
            raise UsageError(f"{op} takes two operands, got {len(arrs)}")
        a, b = arrs
        if a.shape != b.shape and a.size != 1 and b.size != 1:
            raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
        out = _BINARY[op](a, b)
    else:
        raise UsageError(f"unknown elementwise op {op!r}")
    return check_finite(out, op)


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of the scalar function ``f`` at ``x``."""
    if eps <= 0:
        raise UsageError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"f is not finite near coordinate {i}")
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(a, b, floor=1e-12):
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``.

    Returns 0 when both are (numerically) zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


# --- checkpoint format -------------------------------------------------------
#
# little-endian: magic "HTRF", version u32, tensor count u32, then per tensor
#   name length u32, UTF-8 name, rank u32, dims u32[rank], payload f64[]

def checkpoint_bytes(tensors):
    parts = [struct.pack("<4sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f8")
        if a.ndim == 0:
            a = a.reshape(1)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


def parse_checkpoint(buf):
    try:
        magic, version, count = struct.unpack_from("<4sII", buf, 0)
        if magic != CHECKPOINT_MAGIC:
            raise UsageError(f"not a checkpoint (magic {magic!r})")
        if version != CHECKPOINT_VERSION:
            raise UsageError(f"unsupported checkpoint version {version}")
        off = 12
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = bytes(buf[off:off + nlen]).decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims))
            data = np.frombuffer(buf, dtype="<f8", count=size, offset=off)
            out[name] = data.reshape(dims).astype(np.float64)
            off += 8 * size
    except (struct.error, ValueError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"truncated or corrupt checkpoint ({exc})") from None
    if off != len(buf):
        raise UsageError(f"checkpoint has {len(buf) - off} trailing bytes")
    return out


def save_checkpoint(path, tensors):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(tensors))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
