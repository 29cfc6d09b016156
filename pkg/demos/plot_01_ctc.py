"""
=============================================
CTC loss against brute-force enumeration
=============================================

The forward-backward loss is checked against a sum over every frame path,
then the decoders are compared on a case where they disagree.
"""

# %%
# Loss versus enumeration
# -----------------------
#
# Two symbols plus the blank (last class), four frames, label "ab".

import math

import numpy as np

from gatedhtr.ctc import ctc_bruteforce, ctc_loss, ctc_loss_from_probs, decode_beam, decode_greedy, label_distribution

rng = np.random.default_rng(0)
logits = rng.standard_normal((4, 3))
probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
label = [0, 1]

res = ctc_loss(logits, label)
print("p(label) forward-backward:", math.exp(-res.loss))
print("p(label) enumeration:     ", ctc_bruteforce(probs, label))
print("gradient rows sum to zero:", np.allclose(res.grad.sum(axis=1), 0))

# %%
# Greedy and beam decoding
# ------------------------
#
# Best path is two blanks, yet "a" collects more probability over its paths.

p = np.array([[0.3, 0.3, 0.4], [0.3, 0.3, 0.4]])
dist = label_distribution(p)
print("greedy:", decode_greedy(p), " beam:", decode_beam(p, 8))
for lab, mass in sorted(dist.items(), key=lambda kv: -kv[1]):
    print(f"  {lab!s:10} {mass:.3f}")
print("p(empty) via the loss:", math.exp(-ctc_loss_from_probs(p, []).loss))
