"""gatedhtr: offline handwritten text recognition in plain numpy.

Gated convolutional encoder, additive self-attention over the encoder
steps, stacked bidirectional GRU decoder and a CTC objective, together
with preprocessing, dataset bundles, training and evaluation tools.
"""

from .config import RunConfig, toy_config
from .errors import (
    CharsetError, CharsetMismatchError, ConfigError, CorpusError, DimensionError, HTRError,
    InfeasibleLabelError, NumericError, SizeError, UsageError,
)
from .model import HTRModel
from .training import evaluate, train

__version__ = "0.1.0"

__all__ = [
    "CharsetError", "CharsetMismatchError", "ConfigError", "CorpusError", "DimensionError",
    "HTRError", "HTRModel", "InfeasibleLabelError", "NumericError", "RunConfig", "SizeError",
    "UsageError", "evaluate", "toy_config", "train",
]
