"""
Two special masks recover the familiar layers
=============================================

A mask attention layer multiplies the exponentiated scores by a mask before
normalizing. With an all-ones mask it is ordinary multi-head self-attention.
With the identity mask each token can only see itself, so the attention
weights are one-hot and the layer collapses to a position-wise feed-forward
network.
"""

import numpy as np

from maskattn.analysis import verify_degeneracy
from maskattn.attention import ManLayer, ManLayerConfig, ParamStore
from maskattn.masks import Identity, batch_mask

rng = np.random.default_rng(0)
store = ParamStore(rng)
layer = ManLayer(ManLayerConfig.ffn(6), store, "ffn")
h = rng.standard_normal((4, 6))

# the identity mask gives one-hot attention rows
layer.transform(h, masks=batch_mask(Identity(), 4), capture=True)
print("attention under the identity mask:\n", layer.last_attention[0, 0])

# so the output is relu(h Wv) Wh, a feed-forward network
ffn = np.maximum(h @ layer.wv.data, 0) @ layer.wh.data
print("max |MAN - FFN| =", np.abs(layer.transform(h).data - ffn).max())

# the library check repeats both comparisons over many random draws
report = verify_degeneracy(seed=0, draws=100)
print(f"SAN deviation {report.san_max_dev:.1e}, FFN deviation {report.ffn_max_dev:.1e}, passed={report.passed}")

# a single mask entry moved away from the identity breaks the equivalence
print("perturbed mask passes?", verify_degeneracy(seed=0, draws=5, perturb=True).passed)
