"""
=============================================
Preprocessing a rendered word
=============================================

Illumination compensation, slant estimation and fixed-size resizing,
applied to a synthetic word image.
"""

# %%
import numpy as np

from gatedhtr import toy
from gatedhtr.pipeline import deslant, estimate_slant, illumination_compensate, resize_with_padding, shear, to_input

rng = np.random.default_rng(4)
img = toy.render_word("37+1=", rng)
print("raw", img.shape, img.dtype)

# %%
# The renderer slants words at random, so the estimate for the raw image is
# not zero.  Extra shear moves the estimate by the same amount (3 degree grid).

base = estimate_slant(img)
print("raw image correction", base)
for theta in (-15, -6, 6, 15):
    print(f"sheared {theta:+3d} -> correction {estimate_slant(shear(img, theta)):+d}, expected about {base - theta:+d}")

# %%
# Full chain: flatten the background, straighten, fit into 256 x 32.

flat = illumination_compensate(img)
straight, angle = deslant(flat, return_angle=True)
fitted = resize_with_padding(straight, (256, 32))
x = to_input(fitted)
print("deslant angle", angle, "fitted", fitted.shape, "model input range", x.min(), x.max())
print("resize is idempotent:", np.array_equal(resize_with_padding(fitted, (256, 32)), fitted))
