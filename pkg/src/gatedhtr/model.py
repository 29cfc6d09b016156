"""The gated-CNN -> attention -> BiGRU -> CTC recogniser.

Parameters live in one flat ``{name: array}`` dict whose names double as
checkpoint tensor names::

    enc.block{i}.{kernels,prelu_alpha,bn_gamma,bn_beta,bn_running_mean,bn_running_var}
    enc.gate{i}.gate_kernels          (i = block the gate follows)
    attn.{W1,W2,v,Wc}
    dec.l{i}.{fwd,bwd}.{W_z,...,b_h}  dec.proj.W  dec.proj.b
"""

import numpy as np

from . import attention as att
from . import layers
from . import recurrent as rnn
from .config import RunConfig
from .ctc import decode_beam, decode_greedy, log_softmax
from .errors import CharsetMismatchError, ConfigError, DimensionError
from .pipeline.charset import Charset
from .tensor import conv_output_shape, checkpoint_bytes, parse_checkpoint

BUFFERS = ("bn_running_mean", "bn_running_var")


def glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def encoder_shapes(cfg):
    """(C, H, W) after every encoder block, starting from the input."""
    shapes = [(1, cfg.input_height, cfg.input_width)]
    for c, k, s, p in zip(cfg.channels, cfg.kernels, cfg.strides, cfg.paddings):
        _, h, w = shapes[-1]
        ho, wo = conv_output_shape(h, w, k[0], k[1], s, p)
        shapes.append((c, ho, wo))
    return shapes


def sequence_length(cfg):
    return encoder_shapes(cfg)[-1][2]


def check_architecture(cfg):
    c, h, w = encoder_shapes(cfg)[-1]
    if c * h != cfg.feature_dim:
        raise ConfigError(
            f"encoder output {c}x{h}x{w} gives {c * h} features per step, feature_dim is {cfg.feature_dim}")
    return w


def init_params(cfg, num_classes, rng):
    """Fresh parameters: Glorot-uniform projections and kernels, orthogonal
    recurrent matrices, zero biases, unit BN scale, PReLU slope 0.25."""
    check_architecture(cfg)
    p = {}
    c_in = 1
    for i, (c, (kh, kw)) in enumerate(zip(cfg.channels, cfg.kernels), 1):
        pre = f"enc.block{i}."
        p[pre + "kernels"] = glorot(rng, (c, c_in, kh, kw), c_in * kh * kw, c * kh * kw)
        p[pre + "prelu_alpha"] = np.full(c, 0.25)
        p[pre + "bn_gamma"] = np.ones(c)
        p[pre + "bn_beta"] = np.zeros(c)
        p[pre + "bn_running_mean"] = np.zeros(c)
        p[pre + "bn_running_var"] = np.ones(c)
        if i in cfg.gate_after:
            gh, gw = cfg.gate_kernel[0]
            p[f"enc.gate{i}.gate_kernels"] = glorot(rng, (c, c, gh, gw), c * gh * gw, c * gh * gw)
        c_in = c
    d, a = cfg.feature_dim, cfg.attn_dim
    p["attn.W1"] = glorot(rng, (a, d), d, a)
    if not cfg.tied_projections:
        p["attn.W2"] = glorot(rng, (a, d), d, a)
    p["attn.v"] = glorot(rng, (a,), a, 1)
    p["attn.Wc"] = glorot(rng, (d, 2 * d), 2 * d, d)
    h = cfg.gru_hidden
    d_in = d
    for layer in range(cfg.gru_layers):
        for side in ("fwd", "bwd"):
            pre = f"dec.l{layer}.{side}."
            for g in "zrh":
                p[pre + f"W_{g}"] = glorot(rng, (h, d_in), d_in, h)
                p[pre + f"U_{g}"] = orthogonal(rng, h)
                p[pre + f"b_{g}"] = np.zeros(h)
        d_in = 2 * h
    p["dec.proj.W"] = glorot(rng, (num_classes, 2 * h), 2 * h, num_classes)
    p["dec.proj.b"] = np.zeros(num_classes)
    return p


def trainable(name):
    return not name.endswith(BUFFERS)


def _block(params, cfg, i):
    pre = f"enc.block{i}."
    return layers.ConvBlockParams(
        kernels=params[pre + "kernels"], prelu_alpha=params[pre + "prelu_alpha"],
        bn_gamma=params[pre + "bn_gamma"], bn_beta=params[pre + "bn_beta"],
        bn_running_mean=params[pre + "bn_running_mean"], bn_running_var=params[pre + "bn_running_var"],
        dropout_p=cfg.dropout[i - 1], stride=cfg.strides[i - 1], padding=cfg.paddings[i - 1])


def _attention(params, cfg):
    return att.AttentionParams(
        W1=params["attn.W1"], W2=params.get("attn.W2"), v=params["attn.v"], Wc=params["attn.Wc"],
        tied=cfg.tied_projections)


def _gru_layers(params, cfg):
    out = []
    for layer in range(cfg.gru_layers):
        pair = []
        for side in ("fwd", "bwd"):
            pre = f"dec.l{layer}.{side}."
            pair.append(rnn.GruParams(**{f: params[pre + f] for f in rnn.GRU_FIELDS}))
        out.append(tuple(pair))
    return out


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (DimensionError, ConfigError) as exc:
        raise DimensionError(f"{name}: {exc}") from exc


def forward(images, params, cfg, mode="infer", rng=None):
    """Logits (N x T x K) for a batch of N x 1 x H x W images, plus a cache."""
    x = images
    if x.ndim != 4 or x.shape[1:] != (1, cfg.input_height, cfg.input_width):
        raise DimensionError(
            f"input: expected N x 1 x {cfg.input_height} x {cfg.input_width}, got {x.shape}")
    caches = []
    for i in range(1, cfg.num_blocks + 1):
        x, c = _stage(f"block {i}", layers.conv_block_forward, x, _block(params, cfg, i), mode, rng)
        caches.append(("block", i, c))
        if i in cfg.gate_after:
            gp = layers.GateParams(params[f"enc.gate{i}.gate_kernels"])
            x, c = _stage(f"gate {i}", layers.gated_forward, x, gp)
            caches.append(("gate", i, c))
    map_shape = x.shape
    seq = _stage("map-to-sequence", layers.map_to_sequence, x, cfg.feature_dim)
    att_out, att_cache = _stage("attention", att.attention_layer_forward, seq, _attention(params, cfg))
    logits, dec_cache = _stage("decoder", rnn.bigru_forward, att_out, _gru_layers(params, cfg),
                               params["dec.proj.W"], params["dec.proj.b"])
    cache = {"enc": caches, "map_shape": map_shape, "att": att_cache, "dec": dec_cache}
    return logits, cache


def backward(cache, dlogits):
    """Gradients of every trainable parameter given d loss / d logits."""
    grads = {}
    dseq, g = rnn.bigru_backward(cache["dec"], dlogits)
    grads.update({f"dec.{k}": v for k, v in g.items()})
    dseq, g = att.attention_layer_backward(cache["att"], dseq)
    grads.update({f"attn.{k}": v for k, v in g.items()})
    dx = layers.sequence_to_map(dseq, cache["map_shape"])
    for kind, i, c in reversed(cache["enc"]):
        if kind == "gate":
            dx, g = layers.gated_backward(c, dx)
            grads[f"enc.gate{i}.gate_kernels"] = g["gate_kernels"]
        else:
            dx, g = layers.conv_block_backward(c, dx)
            grads.update({f"enc.block{i}.{k}": v for k, v in g.items()})
    return grads


def update_running_stats(params, cfg, cache):
    for kind, i, c in cache["enc"]:
        if kind == "block":
            layers.update_running_stats(_block(params, cfg, i), c)


class HTRModel:
    """Parameters, configuration and charset of one recogniser."""

    def __init__(self, cfg, charset, params=None, rng=None):
        self.cfg = cfg
        self.charset = charset
        self.seq_len = check_architecture(cfg)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(cfg.seed)
            params = init_params(cfg, charset.num_classes, rng)
        self.dtype = np.dtype(cfg.dtype)
        self.params = {k: np.ascontiguousarray(v, dtype=self.dtype) for k, v in params.items()}
        if self.params["dec.proj.b"].shape[0] != charset.num_classes:
            raise CharsetMismatchError(
                f"model emits {self.params['dec.proj.b'].shape[0]} classes, charset has {charset.num_classes}")

    def forward(self, images, mode="infer", rng=None):
        return forward(np.asarray(images, dtype=self.dtype), self.params, self.cfg, mode, rng)

    def backward(self, cache, dlogits):
        return backward(cache, dlogits.astype(self.dtype, copy=False))

    def log_probs(self, images, batch_size=64):
        out = []
        for s in range(0, len(images), batch_size):
            logits, _ = self.forward(images[s:s + batch_size])
            out.append(log_softmax(logits.astype(np.float64)))
        return np.concatenate(out) if out else np.zeros((0, self.seq_len, self.charset.num_classes))

    def decode(self, log_probs, beam_width=None):
        probs = np.exp(log_probs)
        if beam_width is None:
            return self.charset.decode(decode_greedy(probs))
        return self.charset.decode(decode_beam(probs, beam_width))

    def transcribe(self, images, beam_width=None):
        return [self.decode(lp, beam_width) for lp in self.log_probs(images)]

    # --- checkpoints -----------------------------------------------------------------

    def state(self, extra=None):
        tensors = dict(self.params)
        tensors["meta.charset"] = np.array([ord(c) for c in self.charset.symbols] or [0], dtype=np.float64)
        tensors["meta.config"] = np.frombuffer(self.cfg.dumps().encode("utf-8"), dtype=np.uint8).astype(np.float64)
        if extra:
            tensors.update(extra)
        return tensors

    def to_bytes(self, extra=None):
        return checkpoint_bytes(self.state(extra))

    def save(self, path, extra=None):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(extra))

    @classmethod
    def from_tensors(cls, tensors):
        cfg = RunConfig.loads(bytes(tensors["meta.config"].astype(np.uint8)).decode("utf-8"))
        codes = tensors["meta.charset"].astype(np.int64)
        charset = Charset("".join(chr(c) for c in codes if c))
        params = {k: v for k, v in tensors.items() if k.startswith(("enc.", "attn.", "dec."))}
        return cls(cfg, charset, params)

    @classmethod
    def load(cls, path):
        """Returns ``(model, extra_tensors)``; extras hold optimizer and training state."""
        with open(path, "rb") as fh:
            tensors = parse_checkpoint(fh.read())
        model = cls.from_tensors(tensors)
        extra = {k: v for k, v in tensors.items() if k.startswith(("opt.", "train."))}
        return model, extra
