"""Grayscale image preprocessing: illumination compensation, deslanting and
resize-with-padding.

Images are 2-d ``uint8`` arrays (height x width), dark ink on a light
background.
"""

import math

import numpy as np
from PIL import Image
from scipy.ndimage import median_filter
from skimage.filters import threshold_otsu

from ..errors import UsageError

SLANT_ANGLES = tuple(range(-45, 46, 3))


def as_image(img):
    a = np.asarray(img)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise UsageError(f"expected a non-empty 2-d grayscale image, got shape {a.shape}")
    return np.clip(np.rint(a), 0, 255).astype(np.uint8) if a.dtype != np.uint8 else a


def load_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()


def border_median(img):
    """Background estimate: median of the outermost rows and columns."""
    border = np.concatenate([img[0], img[-1], img[:, 0], img[:, -1]])
    return int(np.rint(np.median(border)))


def resize_with_padding(img, target=(1024, 128)):
    """Fit ``img`` inside ``target`` = (width, height), keeping its aspect.

    Bilinear scaling; the content sits at the left edge, centred vertically,
    and the rest is filled with the border-median background.
    """
    img = as_image(img)
    tw, th = target
    h, w = img.shape
    if (w, h) == (tw, th):
        return img.copy()
    scale = min(tw / w, th / h)
    nw = min(tw, max(1, int(round(w * scale))))
    nh = min(th, max(1, int(round(h * scale))))
    if (nw, nh) != (w, h):
        scaled = np.asarray(Image.fromarray(img).resize((nw, nh), Image.BILINEAR))
    else:
        scaled = img
    out = np.full((th, tw), border_median(img), dtype=np.uint8)
    top = (th - nh) // 2
    out[top:top + nh, :nw] = scaled
    return out


def illumination_compensate(img, window=31):
    """Divide out a median-filtered background estimate."""
    img = as_image(img)
    background = median_filter(img, size=window, mode="nearest").astype(np.float64)
    out = 255.0 * img / np.maximum(background, 1.0)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def ink_mask(img):
    """Otsu binarisation; ``None`` when the image has a single intensity."""
    if img.min() == img.max():
        return None
    return img < threshold_otsu(img)


def _offsets(h, angle):
    t = math.tan(math.radians(angle))
    yc = (h - 1) / 2.0
    return t * (yc - np.arange(h)), abs(t) * (h - 1) / 2.0


def shear(img, angle, fill=None):
    """Shear horizontally so that rows above the centre move right for ``angle`` > 0.

    The canvas widens to keep every pixel; new area gets ``fill`` (default:
    border median).  ``angle`` 0 returns a copy.
    """
    img = as_image(img)
    if angle == 0:
        return img.copy()
    h, w = img.shape
    fill = border_median(img) if fill is None else fill
    shifts, off = _offsets(h, angle)
    width = w + int(math.ceil(2 * off))
    xs = np.arange(width, dtype=np.float64)
    src = np.arange(w, dtype=np.float64)
    out = np.empty((h, width))
    for y in range(h):
        out[y] = np.interp(xs - off - shifts[y], src, img[y].astype(np.float64), left=fill, right=fill)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def projection_score(mask, angle):
    """Sum of squared column counts of ``mask`` after shearing by ``angle``."""
    ys, xs = np.nonzero(mask)
    shifts, off = _offsets(mask.shape[0], angle)
    cols = np.rint(xs + shifts[ys] + off).astype(np.int64)
    counts = np.bincount(cols)
    return float(np.dot(counts, counts))


def estimate_slant(img, angles=SLANT_ANGLES):
    """Shear angle (degrees) that makes the ink most upright.

    Picks the angle maximising the sum of squared vertical-projection
    counts; ties go to the smallest magnitude.  Returns 0 for images
    without separable ink.
    """
    mask = ink_mask(as_image(img))
    if mask is None or not mask.any():
        return 0
    best, best_score = 0, -1.0
    for a in sorted(angles, key=lambda a: (abs(a), a)):
        s = projection_score(mask, a)
        if s > best_score:
            best, best_score = a, s
    return best


def deslant(img, angles=SLANT_ANGLES, return_angle=False):
    img = as_image(img)
    angle = estimate_slant(img, angles)
    out = shear(img, angle) if angle else img.copy()
    return (out, angle) if return_angle else out


def preprocess(img, target=(1024, 128), illumination=True, deslant_images=True):
    """Full chain: illumination compensation, deslant, resize-with-padding."""
    img = as_image(img)
    if illumination:
        img = illumination_compensate(img)
    if deslant_images:
        img = deslant(img)
    return resize_with_padding(img, target)


def to_input(img, invert=False):
    """uint8 image -> 1 x H x W float array in [0, 1] with ink high, background 0.

    ``invert`` is for corpora scanned as light ink on a dark background.
    """
    a = as_image(img).astype(np.float64) / 255.0
    a = a if invert else 1.0 - a
    return a[None]
