"""
Two branches and a gate
=======================

The spatial branch mixes graph and hypergraph views of each window.  The
temporal branch sees only the node-averaged series.  A sigmoid gate blends
them per node and horizon step.
"""

import numpy as np

from sthsep import ModelConfig, STHSepNet
from sthsep.spatial import spatial_branch
from sthsep.temporal import PatchSpec, prompt_stats, temporal_branch

cfg = ModelConfig().update({
    "window.L": 24, "window.H": 6, "patch.P": 8, "patch.S": 4,
    "transformer.layers": 1, "transformer.d_m": 16, "transformer.ffn_width": 32,
})
N = 5
rng = np.random.default_rng(2)
coords = rng.uniform(0, 10, (N, 2))
dist = np.sqrt(((coords[:, None] - coords[None]) ** 2).sum(-1))
model = STHSepNet(cfg, N, dist)
supports = model.build_supports()

t = np.arange(24)
X = np.sin(2 * np.pi * t / 12)[None, :, None] + 0.1 * rng.standard_normal((2, 24, N))

print("patches per window:", PatchSpec(8, 4).count(24))
print("prompt of the pooled first window:", prompt_stats(X[0].mean(axis=1)))

parts = model.forward(X, supports)
print("trend branch", parts.O1.shape, "spatial branch", parts.O2.shape, "fused", parts.O_tilde.shape)
print("gate range: [%.3f, %.3f]" % (parts.gate.data.min(), parts.gate.data.max()))

# Forcing the gate to one returns the trend branch bit for bit.
trend = temporal_branch(X, model.store, cfg).data
print("gate=1 equals trend branch:", np.array_equal(model.forward(X, supports, force_gate=1.0).O_tilde.data, trend))

# Forcing it to zero returns the spatial branch.
spatial = spatial_branch(X, model.adaptive_adjacency(), supports, model.store, cfg).data
print("gate=0 equals spatial branch:", np.array_equal(model.forward(X, supports, force_gate=0.0).O_tilde.data, spatial))
