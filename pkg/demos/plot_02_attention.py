"""
=============================================
Self-attention over encoder columns
=============================================

Every column of the feature sequence queries all columns.  The weights
form a distribution, and the context vector is their weighted mean.
"""

# %%
import numpy as np

from gatedhtr.attention import AttentionParams, attend, attention_layer_forward

rng = np.random.default_rng(1)
d, a, s = 4, 3, 6
p = AttentionParams(rng.standard_normal((a, d)), rng.standard_normal((a, d)),
                    rng.standard_normal(a), rng.standard_normal((d, 2 * d)) * 0.5)
seq = rng.standard_normal((s, d))

out = attend(seq[2], seq, p)
np.set_printoptions(precision=3, suppress=True)
print("alpha:", out.weights, "sum", out.weights.sum())
print("context:", out.context)
print("columns min/max:", seq.min(axis=0), seq.max(axis=0))

# %%
# The layer form runs every query at once: S x D in, S x D out.

y, _ = attention_layer_forward(seq[None], p)
print(y.shape, np.allclose(y[0, 2], out.vector))
