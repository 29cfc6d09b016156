"""Exception types raised across the package."""


class HTRError(Exception):
    """Base class for every error raised by gatedhtr."""


class DimensionError(HTRError, ValueError):
    """Tensor shapes do not agree."""


class UsageError(HTRError, ValueError):
    """An operation was called out of contract (missing cache, bad argument)."""


class NumericError(HTRError, FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


class InfeasibleLabelError(HTRError, ValueError):
    """The label cannot be aligned to the given number of time steps."""


class SizeError(HTRError, ValueError):
    """An exhaustive computation would exceed its size guard."""


class ConfigError(HTRError, ValueError):
    """Invalid run configuration or mismatched artifact."""


class CharsetError(HTRError, ValueError):
    """Text contains a symbol that is not in the charset."""

    def __init__(self, char, position, text=None):
        self.char = char
        self.position = position
        self.text = text
        msg = f"character {char!r} (U+{ord(char):04X}) at position {position} is not in the charset"
        if text is not None:
            msg += f" (text {text!r})"
        super().__init__(msg)


class CharsetMismatchError(ConfigError):
    """Two artifacts (checkpoint, bundle) were built with different charsets."""


class CorpusError(HTRError, ValueError):
    """A corpus directory or bundle file is malformed."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
