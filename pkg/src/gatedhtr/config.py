"""Run configuration: a flat ``key = value`` text file.

One setting per line, ``#`` starts a comment.  Every key is listed in
``KEYS`` with its type, default and help text; unknown keys are rejected.
"""

from dataclasses import dataclass, fields, replace

from .errors import ConfigError


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _pairs(text):
    out = []
    for item in text.split(","):
        a, b = item.strip().lower().split("x")
        out.append((int(a), int(b)))
    return tuple(out)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fractions(text):
    out = {}
    for item in text.split(","):
        name, val = item.split("=")
        out[name.strip()] = float(val)
    return out


def fmt_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, dict):
        return ",".join(f"{k}={v!r}" for k, v in value.items())
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{a}x{b}" for a, b in value)
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (parser, help)
KEYS = {
    "input_width": (int, "model input width in pixels (images are resized with padding)"),
    "input_height": (int, "model input height in pixels"),
    "invert": (_bool, "input images are light ink on a dark background"),
    "illumination": (_bool, "apply illumination compensation during preprocessing"),
    "deslant": (_bool, "apply deslanting during preprocessing"),
    "channels": (_ints, "output channels of each encoder block"),
    "kernels": (_pairs, "kernel size (h x w) of each encoder block"),
    "strides": (_pairs, "stride (h x w) of each encoder block"),
    "paddings": (_pairs, "zero padding (h x w) of each encoder block"),
    "dropout": (_floats, "dropout probability of each encoder block"),
    "gate_after": (_ints, "1-based block numbers followed by a gated convolution"),
    "gate_kernel": (_pairs, "kernel size of the gate convolutions (odd, same padding)"),
    "feature_dim": (int, "features per time step after map-to-sequence (channels x height)"),
    "attn_dim": (int, "width of the additive-attention scoring space"),
    "tied_projections": (_bool, "use one matrix for both attention projections"),
    "gru_hidden": (int, "hidden units per direction in each bidirectional GRU layer"),
    "gru_layers": (int, "number of stacked bidirectional GRU layers"),
    "max_label_len": (int, "longest accepted transcript, in symbols"),
    "learning_rate": (float, "RMSProp learning rate"),
    "rho": (float, "RMSProp decay of the squared-gradient average"),
    "epsilon": (float, "RMSProp denominator offset"),
    "clip_norm": (float, "global gradient-norm clip; 0 disables clipping"),
    "batch_size": (int, "mini-batch size"),
    "patience": (int, "epochs without validation improvement before stopping"),
    "max_epochs": (int, "hard cap on training epochs"),
    "seed": (int, "seed for every random choice (init, shuffling, dropout, splits)"),
    "dtype": (str, "training precision: float64 or float32"),
    "charset": (str, "'default', 'data' (symbols of the corpus) or a path to a charset file"),
    "decode": (str, "'greedy' or 'beam:K'"),
    "splits": (_fractions, "split fractions, e.g. train=0.7,valid=0.15,test=0.15"),
    "word_disjoint": (str, "split whose transcripts must not occur in any other split ('' = none)"),
    "threads": (int, "worker thread cap for numerical libraries"),
}


@dataclass(frozen=True)
class RunConfig:
    input_width: int = 1024
    input_height: int = 128
    invert: bool = False
    illumination: bool = True
    deslant: bool = True
    channels: tuple = (16, 32, 40, 48, 64)
    kernels: tuple = ((3, 3), (3, 3), (2, 4), (3, 3), (2, 4))
    strides: tuple = ((2, 2), (2, 1), (2, 2), (2, 1), (2, 2))
    paddings: tuple = ((1, 1), (1, 1), (0, 1), (1, 1), (0, 1))
    dropout: tuple = (0.0, 0.0, 0.2, 0.2, 0.2)
    gate_after: tuple = (2, 4)
    gate_kernel: tuple = ((3, 3),)
    feature_dim: int = 256
    attn_dim: int = 64
    tied_projections: bool = False
    gru_hidden: int = 128
    gru_layers: int = 2
    max_label_len: int = 96
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-8
    clip_norm: float = 0.0
    batch_size: int = 32
    patience: int = 20
    max_epochs: int = 400
    seed: int = 1234
    dtype: str = "float64"
    charset: str = "default"
    decode: str = "greedy"
    splits: dict = None
    word_disjoint: str = ""
    threads: int = 1

    def __post_init__(self):
        if self.splits is None:
            object.__setattr__(self, "splits", {"train": 0.7, "valid": 0.15, "test": 0.15})
        self.validate()

    @property
    def num_blocks(self):
        return len(self.channels)

    @property
    def beam_width(self):
        """``None`` for greedy decoding, else the beam width."""
        if self.decode == "greedy":
            return None
        return int(self.decode.split(":", 1)[1])

    def validate(self):
        n = len(self.channels)
        if n < 1:
            raise ConfigError("at least one encoder block is required")
        for key in ("kernels", "strides", "paddings", "dropout"):
            if len(getattr(self, key)) != n:
                raise ConfigError(f"{key} lists {len(getattr(self, key))} entries for {n} blocks")
        if any(c < 1 for c in self.channels):
            raise ConfigError("channels must be positive")
        if any(not 0 <= p < 1 for p in self.dropout):
            raise ConfigError("dropout probabilities must lie in [0, 1)")
        if any(not 1 <= g <= n for g in self.gate_after):
            raise ConfigError(f"gate_after entries must be block numbers 1..{n}")
        if len(self.gate_kernel) != 1 or any(k % 2 == 0 for k in self.gate_kernel[0]):
            raise ConfigError("gate_kernel must be a single odd-sized kernel, e.g. 3x3")
        for key in ("input_width", "input_height", "feature_dim", "attn_dim", "gru_hidden",
                    "gru_layers", "max_label_len", "batch_size", "max_epochs", "threads"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        if self.epsilon < 0 or self.clip_norm < 0:
            raise ConfigError("epsilon and clip_norm must be non-negative")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        if self.decode != "greedy":
            if not self.decode.startswith("beam:"):
                raise ConfigError("decode must be 'greedy' or 'beam:K'")
            try:
                k = int(self.decode.split(":", 1)[1])
            except ValueError:
                raise ConfigError("decode must be 'greedy' or 'beam:K'") from None
            if k < 1:
                raise ConfigError("beam width must be >= 1")
        total = sum(self.splits.values())
        if abs(total - 1.0) > 1e-9 or any(v < 0 for v in self.splits.values()):
            raise ConfigError(f"split fractions must be non-negative and sum to 1, got {total}")
        if self.word_disjoint and self.word_disjoint not in self.splits:
            raise ConfigError(f"word_disjoint names unknown split {self.word_disjoint!r}")

    def replace(self, **changes):
        return replace(self, **changes)

    def dumps(self):
        lines = []
        for f in fields(self):
            lines.append(f"# {KEYS[f.name][1]}")
            lines.append(f"{f.name} = {fmt_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text, base=None):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in KEYS:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            try:
                values[key] = KEYS[key][0](value)
            except ValueError as exc:
                raise ConfigError(f"config line {lineno}: bad value for {key}: {exc}") from None
        return replace(base or cls(), **values)

    @classmethod
    def load(cls, path, base=None):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read(), base)


def toy_config(**overrides):
    """Reduced model for 256 x 32 inputs (32 time steps)."""
    cfg = RunConfig(
        input_width=256, input_height=32, illumination=False, deslant=True,
        channels=(8, 16, 24, 32, 48), dropout=(0.0, 0.0, 0.2, 0.2, 0.2),
        feature_dim=48, attn_dim=32, gru_hidden=48, gru_layers=2,
        max_label_len=8, max_epochs=60, dtype="float32",
        splits={"train": 2000 / 2400, "valid": 200 / 2400, "test": 200 / 2400},
    )
    return cfg.replace(**overrides) if overrides else cfg
