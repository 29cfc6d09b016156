"""Procedurally rendered handwriting-like corpus for end-to-end experiments.

Twelve symbols are drawn as jittered polylines with random size, stroke
width, spacing, slant and ink intensity.  Every image is a pure function
of the seed.
"""

import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

ALPHABET = "0123456789+="


def _ellipse(cx, cy, rx, ry, n=14):
    return [(cx + rx * math.cos(2 * math.pi * i / n), cy + ry * math.sin(2 * math.pi * i / n))
            for i in range(n + 1)]


# polylines in a unit box, y pointing down
GLYPHS = {
    "0": [_ellipse(0.5, 0.5, 0.4, 0.5)],
    "1": [[(0.25, 0.25), (0.55, 0.0), (0.55, 1.0)]],
    "2": [[(0.1, 0.25), (0.3, 0.02), (0.7, 0.02), (0.9, 0.3), (0.1, 1.0), (0.95, 1.0)]],
    "3": [[(0.1, 0.05), (0.85, 0.05), (0.4, 0.42), (0.85, 0.62), (0.75, 0.95), (0.1, 0.92)]],
    "4": [[(0.7, 1.0), (0.7, 0.0), (0.05, 0.68), (0.95, 0.68)]],
    "5": [[(0.9, 0.0), (0.2, 0.0), (0.15, 0.45), (0.7, 0.42), (0.92, 0.7), (0.7, 1.0), (0.1, 0.95)]],
    "6": [[(0.8, 0.02), (0.3, 0.3), (0.1, 0.7), (0.3, 1.0), (0.75, 0.95), (0.88, 0.7),
           (0.6, 0.5), (0.15, 0.62)]],
    "7": [[(0.05, 0.0), (0.95, 0.0), (0.35, 1.0)]],
    "8": [_ellipse(0.5, 0.25, 0.3, 0.25), _ellipse(0.5, 0.73, 0.4, 0.27)],
    "9": [[(0.85, 0.38), (0.4, 0.5), (0.12, 0.3), (0.3, 0.0), (0.75, 0.04), (0.85, 0.38), (0.7, 1.0)]],
    "+": [[(0.5, 0.2), (0.5, 0.8)], [(0.1, 0.5), (0.9, 0.5)]],
    "=": [[(0.1, 0.33), (0.9, 0.33)], [(0.1, 0.67), (0.9, 0.67)]],
}


def render_word(text, rng):
    """Render ``text`` (symbols of :data:`ALPHABET`) as a uint8 image, ink dark."""
    height = int(rng.integers(40, 57))
    gh = height * rng.uniform(0.6, 0.75)
    slant = math.tan(math.radians(rng.uniform(-10, 10)))
    stroke = int(rng.integers(2, 5))
    ink = int(rng.integers(0, 70))
    spacing = [gh * rng.uniform(0.2, 0.35) for _ in text]
    widths = [gh * rng.uniform(0.55, 0.75) for _ in text]
    margin = int(gh * 0.5) + 4
    width = int(sum(widths) + sum(spacing) + 2 * margin + abs(slant) * height)
    im = Image.new("L", (width, height), int(rng.integers(225, 256)))
    draw = ImageDraw.Draw(im)
    top = (height - gh) / 2 + rng.uniform(-0.08, 0.08) * height
    x = margin + max(0.0, slant) * height / 2
    yc = height / 2
    for ch, gw, sp in zip(text, widths, spacing):
        for line in GLYPHS[ch]:
            pts = []
            for u, v in line:
                px = x + (u + rng.normal(0, 0.03)) * gw
                py = top + (v + rng.normal(0, 0.03)) * gh
                pts.append((px + slant * (yc - py), py))
            draw.line(pts, fill=ink, width=stroke, joint="curve")
        x += gw + sp
    img = np.asarray(im, dtype=np.float64)
    img += rng.normal(0, 6, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def random_words(n, rng, alphabet=ALPHABET, min_len=1, max_len=5):
    lengths = rng.integers(min_len, max_len + 1, size=n)
    return ["".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=k)) for k in lengths]


def make_corpus(out_dir, n, seed=0, alphabet=ALPHABET):
    """Write ``n`` rendered PNGs plus ``labels.tsv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    words = random_words(n, rng, alphabet)
    lines = []
    for i, w in enumerate(words):
        sid = f"toy{i:05d}"
        Image.fromarray(render_word(w, rng)).save(out_dir / f"{sid}.png")
        lines.append(f"{sid}\t{w}")
    (out_dir / "labels.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out_dir
