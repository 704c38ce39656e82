"""The aggregation core: self-attention and cross-attention modules.

Run:  python3 demos/04_attention_aggregation.py
"""

import numpy as np

from shapefuse.attention import Cmam, Imam
from shapefuse.tensor import Tensor

rng = np.random.default_rng(0)

# Self-attention aggregator: a learnable class token is prepended to the
# content tokens, position embeddings are added, and encoder blocks
#   Z' = MSA(LN(Z)) + Z ;  Z* = LN(MLP(LN(Z')) + Z')
# mix the set. The class-token row of Z* is the aggregate.
imam = Imam("demo.imam", in_width=64, max_tokens=12, dim=512, heads=4,
            mlp_hidden=128, blocks=1, seed=0)
view_tokens = Tensor(rng.normal(size=(12, 64)))
aggregate = imam.forward(view_tokens)
print("12 view tokens ->", aggregate.shape, "aggregated feature")

sequence = imam.forward(view_tokens, return_sequence=True)
print("sequence mode keeps all rows:", sequence.tokens.shape,
      "(class token at row", sequence.class_index, ")")

# Attention rows are probability distributions.
sink = []
imam.forward(view_tokens, attn_sink=sink)
print("attention row sums:", np.round(sink[0].sum(axis=-1).ravel()[:6], 12).tolist(), "...")

# Cross-attention aggregator: the aligned point feature g(f_point) queries
# the hybrid set [g(f_point); self-attended tokens] and is added back:
#   f_cross = g(f_point) + Attn(g(f_point), hybrid)
cmam = Cmam("demo.cmam", in_width=64, max_tokens=12, point_dim=1024, dim=512,
            heads=4, mlp_hidden=128, blocks=1, seed=1)
f_point = Tensor(rng.normal(size=(1, 1024)))
fused = cmam.forward(view_tokens, f_point)
print("cross-modality feature:", fused.shape)

# The residual path is exact: zero the cross-attention weights and the
# module returns g(f_point) untouched.
for p in (cmam.wq, cmam.wk, cmam.wv, cmam.wo):
    p.value.data[...] = 0.0
residual = cmam.forward(view_tokens, f_point)
aligned = cmam.align_point(f_point)
print("zero cross-attention == g(f_point):",
      bool(np.array_equal(residual.data, aligned.data)))
