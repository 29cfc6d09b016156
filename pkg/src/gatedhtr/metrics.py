"""Edit-distance error rates: CER, WER and SER.

Corpus-level CER and WER are micro averages (total edits over total
reference length).  Text is NFC-normalised and stripped of trailing
whitespace before comparison.
"""

import io
import unicodedata
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


@dataclass
class EditCounts:
    S: int = 0
    I: int = 0  # noqa: E741
    D: int = 0
    N: int = 0

    @property
    def total(self):
        return self.S + self.I + self.D

    def __add__(self, other):
        return EditCounts(self.S + other.S, self.I + other.I, self.D + other.D, self.N + other.N)


@dataclass
class SampleResult:
    id: str
    ref: str
    hyp: str
    chars: EditCounts
    words: EditCounts

    @property
    def correct(self):
        return _norm(self.ref) == _norm(self.hyp)

    @property
    def cer(self):
        return self.chars.total / self.chars.N if self.chars.N else float("nan")


@dataclass
class EvalReport:
    samples: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.samples)

    @property
    def char_counts(self):
        return sum((s.chars for s in self.samples), EditCounts())

    @property
    def word_counts(self):
        return sum((s.words for s in self.samples), EditCounts())

    @property
    def cer(self):
        c = self.char_counts
        return c.total / c.N if c.N else float("nan")

    @property
    def wer(self):
        c = self.word_counts
        return c.total / c.N if c.N else float("nan")

    @property
    def ser(self):
        return ser([(s.ref, s.hyp) for s in self.samples])

    def summary(self):
        return f"CER {self.cer:.3f} | WER {self.wer:.3f} | SER {self.ser:.3f} | n={self.count}"


def _norm(text):
    # trailing whitespace never counts as an error in any of the three rates
    return unicodedata.normalize("NFC", text).rstrip()


def levenshtein(ref, hyp):
    """Minimal unit-cost edit script turning ``ref`` into ``hyp``.

    Works on any two sequences.  The traceback prefers a diagonal step
    (match or substitution), then a deletion, then an insertion.
    """
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i, j] = min(sub, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    s = ins = dele = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(S=int(s), I=ins, D=dele, N=n)


def char_counts(ref, hyp):
    return levenshtein(_norm(ref), _norm(hyp))


def word_counts(ref, hyp):
    return levenshtein(_norm(ref).split(), _norm(hyp).split())


def cer(ref, hyp):
    c = char_counts(ref, hyp)
    if c.N == 0:
        raise UsageError("CER is undefined for an empty reference")
    return c.total / c.N


def wer(ref, hyp):
    c = word_counts(ref, hyp)
    if c.N == 0:
        raise UsageError("WER is undefined for a reference without words")
    return c.total / c.N


def ser(samples):
    """Fraction of (ref, hyp) pairs that are not an exact match."""
    samples = list(samples)
    if not samples:
        raise UsageError("SER needs at least one sample")
    wrong = sum(_norm(r) != _norm(h) for r, h in samples)
    return wrong / len(samples)


def evaluate_pairs(pairs, ids=None):
    """Build an :class:`EvalReport` from ``(ref, hyp)`` pairs."""
    pairs = list(pairs)
    if ids is None:
        ids = [str(i) for i in range(len(pairs))]
    report = EvalReport()
    for sid, (ref, hyp) in zip(ids, pairs):
        report.samples.append(SampleResult(sid, ref, hyp, char_counts(ref, hyp), word_counts(ref, hyp)))
    return report


# --- TSV report ----------------------------------------------------------------

HEADER = "id\tref\thyp\tS\tI\tD\tcer"


def _clean(text):
    return text.replace("\t", " ").replace("\n", " ")


def format_report(report):
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    for s in report.samples:
        c = s.chars
        rate = "NA" if c.N == 0 else repr(s.cer)
        buf.write(f"{_clean(s.id)}\t{_clean(s.ref)}\t{_clean(s.hyp)}\t{c.S}\t{c.I}\t{c.D}\t{rate}\n")
    cc, wc = report.char_counts, report.word_counts
    buf.write(f"#samples\t{report.count}\n")
    buf.write(f"#chars\tN={cc.N}\tS={cc.S}\tI={cc.I}\tD={cc.D}\n")
    buf.write(f"#words\tN={wc.N}\tS={wc.S}\tI={wc.I}\tD={wc.D}\n")
    buf.write(f"#rates\tcer={report.cer!r}\twer={report.wer!r}\tser={report.ser!r}\n")
    return buf.getvalue()


def write_report(report, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report(report))


def read_report(path):
    """Parse a report written by :func:`write_report`.

    Returns ``(rows, footer)``: rows are dicts of the per-sample columns,
    footer maps ``cer``/``wer``/``ser``/``samples`` to numbers.
    """
    rows, footer = [], {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines[0] != HEADER:
        raise UsageError(f"{path}: not an evaluation report")
    for line in lines[1:]:
        if not line:
            continue
        parts = line.split("\t")
        if line.startswith("#"):
            if parts[0] == "#samples":
                footer["samples"] = int(parts[1])
            elif parts[0] == "#rates":
                for kv in parts[1:]:
                    k, v = kv.split("=")
                    footer[k] = float(v)
            continue
        sid, ref, hyp, s, i, d, rate = parts
        rows.append({"id": sid, "ref": ref, "hyp": hyp, "S": int(s), "I": int(i), "D": int(d),
                     "cer": float("nan") if rate == "NA" else float(rate)})
    return rows, footer
