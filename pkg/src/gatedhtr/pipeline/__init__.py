"""Preprocessing, charset handling and dataset bundles."""

from .bundle import (
    DEFAULT_FRACTIONS, REFERENCE_FRACTIONS, REFERENCE_SPLIT_COUNTS, Bundle, BundleSample,
    build_bundles, read_bundle, read_corpus, split_counts, split_ids, write_bundle,
)
from .charset import Charset, decode_label, encode_label
from .image import (
    deslant, estimate_slant, illumination_compensate, load_image, preprocess,
    resize_with_padding, shear, to_input,
)

__all__ = [
    "Bundle", "BundleSample", "Charset", "DEFAULT_FRACTIONS", "REFERENCE_FRACTIONS",
    "REFERENCE_SPLIT_COUNTS", "build_bundles", "decode_label", "deslant", "encode_label",
    "estimate_slant", "illumination_compensate", "load_image", "preprocess", "read_bundle",
    "read_corpus", "resize_with_padding", "shear", "split_counts", "split_ids", "to_input",
    "write_bundle",
]
