"""Symbol table mapping characters to class indices.

The blank is not part of the charset; the CTC layer appends it as class
``len(charset)``.
"""

import hashlib
import unicodedata

from ..errors import CharsetError, ConfigError

RUSSIAN = "абвгдеёжзийклмнопрстуфхцчшщъыьэюя"
KAZAKH = "әғқңөұүһі"
DIGITS = "0123456789"
PUNCTUATION = ".,!?-"


class Charset:
    def __init__(self, symbols):
        symbols = [unicodedata.normalize("NFC", s) for s in symbols]
        if len(set(symbols)) != len(symbols):
            dupes = sorted({s for s in symbols if symbols.count(s) > 1})
            raise ConfigError(f"charset has duplicate symbols: {dupes}")
        if any(len(s) != 1 for s in symbols):
            raise ConfigError("charset symbols must be single characters")
        self.symbols = tuple(symbols)
        self._index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self):
        return len(self.symbols)

    def __eq__(self, other):
        return isinstance(other, Charset) and self.symbols == other.symbols

    def __repr__(self):
        return f"Charset({''.join(self.symbols)!r})"

    @property
    def blank(self):
        return len(self.symbols)

    @property
    def num_classes(self):
        return len(self.symbols) + 1

    @property
    def hash(self):
        return hashlib.sha256("".join(self.symbols).encode("utf-8")).hexdigest()[:16]

    def encode(self, text):
        """NFC-normalise ``text`` and map it to class indices."""
        out = []
        for pos, ch in enumerate(unicodedata.normalize("NFC", text)):
            try:
                out.append(self._index[ch])
            except KeyError:
                raise CharsetError(ch, pos, text) from None
        return out

    def decode(self, indices):
        return "".join(self.symbols[i] for i in indices)

    def to_text(self):
        return "".join(self.symbols)

    @classmethod
    def default(cls):
        """Russian + Kazakh letters, space, digits and ``. , ! ? -``."""
        return cls(RUSSIAN + KAZAKH + " " + DIGITS + PUNCTUATION)

    @classmethod
    def from_texts(cls, texts):
        chars = set()
        for t in texts:
            chars.update(unicodedata.normalize("NFC", t))
        return cls(sorted(chars))

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(fh.read().rstrip("\n"))


def encode_label(text, cs):
    return cs.encode(text)


def decode_label(indices, cs):
    return cs.decode(indices)
