"""Dataset bundles and train/valid/test splits.

A bundle is one self-describing file per split::

    "HTRB" | version u32 | manifest length u32 | manifest (UTF-8 JSON)
    then per sample:
      id length u32 | id (UTF-8) | label length u32 | label u32[] | png length u32 | png

All integers are little-endian.  Images are stored already preprocessed,
as 8-bit grayscale PNG.
"""

import io
import json
import os
import struct
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import CharsetError, ConfigError, CorpusError
from .charset import Charset
from .image import load_image, preprocess

BUNDLE_MAGIC = b"HTRB"
BUNDLE_VERSION = 1
IMAGE_SUFFIXES = (".png", ".pgm")

# Published split sizes of the HKR corpus (train, validation, two test sets).
REFERENCE_SPLIT_COUNTS = {"train": 45470, "valid": 9359, "test1": 5057, "test2": 5057}
DEFAULT_FRACTIONS = {"train": 0.70, "valid": 0.15, "test": 0.15}
REFERENCE_FRACTIONS = {"train": 0.70, "valid": 0.15, "test1": 0.075, "test2": 0.075}


def encode_png(img):
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data):
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()


@dataclass
class BundleSample:
    id: str
    label: list
    png: bytes

    @property
    def image(self):
        return decode_png(self.png)


@dataclass
class Bundle:
    manifest: dict
    samples: list = field(default_factory=list)

    @property
    def charset(self):
        return Charset(self.manifest["charset"])

    @property
    def split(self):
        return self.manifest["split"]

    def __len__(self):
        return len(self.samples)

    def texts(self):
        cs = self.charset
        return [cs.decode(s.label) for s in self.samples]


def bundle_bytes(bundle):
    manifest = dict(bundle.manifest, count=len(bundle.samples))
    raw = json.dumps(manifest, ensure_ascii=False, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<4sII", BUNDLE_MAGIC, BUNDLE_VERSION, len(raw)), raw]
    for s in bundle.samples:
        sid = s.id.encode("utf-8")
        parts.append(struct.pack("<I", len(sid)) + sid)
        parts.append(struct.pack(f"<I{len(s.label)}I", len(s.label), *s.label))
        parts.append(struct.pack("<I", len(s.png)) + s.png)
    return b"".join(parts)


def parse_bundle(buf, path=None):
    try:
        magic, version, mlen = struct.unpack_from("<4sII", buf, 0)
        if magic != BUNDLE_MAGIC:
            raise CorpusError(f"bad magic {magic!r}", path)
        if version != BUNDLE_VERSION:
            raise CorpusError(f"unsupported bundle version {version}", path)
        off = 12
        manifest = json.loads(bytes(buf[off:off + mlen]).decode("utf-8"))
        off += mlen
        samples = []
        for _ in range(manifest["count"]):
            (n,) = struct.unpack_from("<I", buf, off)
            sid = bytes(buf[off + 4:off + 4 + n]).decode("utf-8")
            off += 4 + n
            (n,) = struct.unpack_from("<I", buf, off)
            label = list(struct.unpack_from(f"<{n}I", buf, off + 4))
            off += 4 + 4 * n
            (n,) = struct.unpack_from("<I", buf, off)
            png = bytes(buf[off + 4:off + 4 + n])
            off += 4 + n
            samples.append(BundleSample(sid, label, png))
    except (struct.error, KeyError, ValueError) as exc:
        if isinstance(exc, CorpusError):
            raise
        raise CorpusError(f"truncated or corrupt bundle ({exc})", path) from None
    if off != len(buf):
        raise CorpusError(f"{len(buf) - off} trailing bytes", path)
    return Bundle(manifest, samples)


def write_bundle(bundle, path):
    with open(path, "wb") as fh:
        fh.write(bundle_bytes(bundle))


def read_bundle(path):
    with open(path, "rb") as fh:
        return parse_bundle(fh.read(), str(path))


# --- corpus and splits ---------------------------------------------------------------

def read_corpus(corpus_dir):
    """Read ``labels.tsv`` (id TAB transcript) and locate each image.

    Returns a list of ``(id, transcript, image_path)`` in file order.
    """
    corpus_dir = Path(corpus_dir)
    labels = corpus_dir / "labels.tsv"
    if not labels.is_file():
        raise CorpusError("missing labels.tsv", str(corpus_dir))
    entries, seen = [], set()
    with open(labels, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise CorpusError(f"line {lineno}: expected 'id<TAB>transcript'", str(labels))
            sid, text = line.split("\t", 1)
            if sid in seen:
                raise CorpusError(f"line {lineno}: duplicate id {sid!r}", str(labels))
            seen.add(sid)
            for suffix in IMAGE_SUFFIXES:
                p = corpus_dir / (sid + suffix)
                if p.is_file():
                    break
            else:
                raise CorpusError(f"no image for id {sid!r}", str(corpus_dir / sid))
            entries.append((sid, unicodedata.normalize("NFC", text), p))
    if not entries:
        raise CorpusError("corpus is empty", str(labels))
    return entries


def split_counts(n, fractions):
    """Largest-remainder apportionment of ``n`` samples over ``fractions``."""
    names = list(fractions)
    fr = np.array([fractions[k] for k in names], dtype=np.float64)
    if np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    exact = fr * n
    counts = np.floor(exact + 1e-9).astype(int)
    order = sorted(range(len(names)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return dict(zip(names, counts.tolist()))


def split_ids(ids, fractions, seed=0, transcripts=None, disjoint=None):
    """Deterministic partition of ``ids`` into named splits.

    With ``disjoint`` naming a split (e.g. ``"test1"``), that split is filled
    with whole transcript groups, so none of its transcripts occurs in any
    other split.  ``transcripts`` maps id -> text and is required then.
    """
    ids = sorted(ids)
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate sample ids")
    counts = split_counts(len(ids), fractions)
    rng = np.random.default_rng(seed)
    out = {k: [] for k in fractions}
    pool = ids
    if disjoint is not None:
        if disjoint not in fractions:
            raise ConfigError(f"disjoint split {disjoint!r} is not one of {list(fractions)}")
        if transcripts is None:
            raise ConfigError("a word-disjoint split needs the transcripts")
        groups = {}
        for i in ids:
            groups.setdefault(transcripts[i], []).append(i)
        words = sorted(groups)
        taken = set()
        for w in (words[j] for j in rng.permutation(len(words))):
            if len(out[disjoint]) >= counts[disjoint]:
                break
            if len(out[disjoint]) + len(groups[w]) > counts[disjoint] and out[disjoint]:
                continue
            out[disjoint].extend(groups[w])
            taken.add(w)
        pool = [i for i in ids if transcripts[i] not in taken]
        rest = {k: v for k, v in fractions.items() if k != disjoint}
        total = sum(rest.values())
        counts = split_counts(len(pool), {k: v / total for k, v in rest.items()}) if total > 0 else {}
    perm = [pool[j] for j in rng.permutation(len(pool))]
    start = 0
    for name, c in counts.items():
        out[name].extend(perm[start:start + c])
        start += c
    return {k: sorted(v) for k, v in out.items()}


def build_bundles(corpus_dir, out_dir, charset=None, fractions=None, seed=0, disjoint=None,
                  target=(1024, 128), illumination=True, deslant=True):
    """Preprocess a corpus directory and write one ``<split>.htrb`` per split.

    ``charset`` defaults to the symbols found in the transcripts.  Returns a
    dict split name -> bundle path.
    """
    fractions = dict(fractions or DEFAULT_FRACTIONS)
    entries = read_corpus(corpus_dir)
    texts = {sid: text for sid, text, _ in entries}
    cs = charset or Charset.from_texts(texts.values())
    labels = {}
    for sid, text, path in entries:
        try:
            labels[sid] = cs.encode(text)
        except CharsetError as exc:
            raise CorpusError(str(exc), str(path)) from None
    parts = split_ids(list(texts), fractions, seed=seed, transcripts=texts, disjoint=disjoint)
    paths = {sid: path for sid, _, path in entries}
    base = {
        "charset": cs.to_text(), "charset_hash": cs.hash,
        "image_width": target[0], "image_height": target[1],
        "preprocess": {"illumination": bool(illumination), "deslant": bool(deslant)},
        "seed": seed, "fractions": fractions,
    }
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    for name, members in parts.items():
        samples = []
        for sid in members:
            try:
                raw = load_image(paths[sid])
            except OSError as exc:
                raise CorpusError(f"unreadable image ({exc})", str(paths[sid])) from None
            img = preprocess(raw, target, illumination=illumination, deslant_images=deslant)
            samples.append(BundleSample(sid, labels[sid], encode_png(img)))
        out = Path(out_dir) / f"{name}.htrb"
        write_bundle(Bundle(dict(base, split=name), samples), out)
        written[name] = out
    return written
