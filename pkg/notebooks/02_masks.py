"""
Static and dynamic masks
========================

A static mask lets each token attend within a fixed band. The dynamic mask is
learned: each entry is a sigmoid of a query-dependent term, a relative-offset
table entry and a per-head bias. All of these start at zero, so a fresh dynamic
mask is 0.5 everywhere and the layer behaves like self-attention.
"""

import numpy as np

from maskattn.masks import Banded, Dynamic, DynamicMaskParams, build_mask, mask_to_csv

np.set_printoptions(precision=3, suppress=True)

print("band of half-width 1 over 6 tokens:\n", build_mask(Banded(1), 6).data)
print("sqrt rule for 16 tokens gives half-width", Banded(None).width(16))

params = DynamicMaskParams.zeros(4, 1, max_rel=3)
hidden = np.random.default_rng(0).standard_normal((6, 4))
print("fresh dynamic mask:\n", build_mask(Dynamic(), 6, hidden=hidden, params=params).data)

# a hand-set offset table that favours neighbours within distance 1
for offset in range(-3, 4):
    params.set_offset(offset, 2.0 if abs(offset) <= 1 else -2.0)
soft_band = build_mask(Dynamic(), 6, hidden=hidden, params=params).data
print("soft band from the hand-set offsets:\n", soft_band)

# masks export as plain CSV for inspection elsewhere
print(mask_to_csv(soft_band).splitlines()[0])
