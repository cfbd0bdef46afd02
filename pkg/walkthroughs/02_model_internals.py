"""
Inside one forward pass
=======================

Build the full model on a 16-channel montage, push a random standardized
sample through it and inspect the trace.

    python walkthroughs/02_model_internals.py
"""

# %%
import math

import numpy as np

from elpg.data_io import spherical_cap_layout
from elpg.graph import Parcellation
from elpg.model import ElpgModel, ModelConfig, Montage, flops_report, gate_values

N = 16
layout = spherical_cap_layout(N)
montage = Montage(layout.coords, Parcellation.contiguous(N))
model = ElpgModel(ModelConfig(n_channels=N), montage, seed=0)
print("parameters:", sum(p.data.size for p in model.parameters()))

# %% a sample is 5 consecutive windows of DE (4 bands) and MI (6 band pairs)
rng = np.random.default_rng(1)
de, mi = rng.normal(size=(5, N, 4)), rng.normal(size=(5, N, 6))
seed = np.abs(np.corrcoef(rng.normal(size=(N, 500))))
np.fill_diagonal(seed, 0.0)

logits, trace = model.forward(de, mi, seed, return_trace=True)
print("logits:", logits.data)

# %% 16 electrodes + 9 virtual centers = 25 nodes; each attention row keeps ceil(25/4)
A = trace["attention"].adjacency.data
print("nodes:", A.shape[0], "kept per row:", sorted(set((A != 0).sum(axis=1).tolist())), "expected", math.ceil(A.shape[0] / 4))

# %% the prior gates start nearly closed
P = trace["P"].data
for i, gate in enumerate(model.gates, 1):
    g = gate_values(P, gate).data
    ratio = np.linalg.norm(g * P) / np.linalg.norm(trace[f"H_data{i}"].data)
    print(f"gate {i}: mean {g.mean():.4f}, prior/data norm ratio {ratio:.3f}")

# %% operation counts at the 128-channel scale
print("attention / GCN flops:", flops_report(128, 64, 0.25))
