"""
Temporal group normalization
============================

TGN normalizes each channel separately inside fixed-size temporal windows.
The window size g stays fixed, so the number of groups p = t / g shrinks as
pooling shortens the time axis deeper in the network.
"""

import numpy as np
import torch

from vidpace import BackboneConfig, build_backbone, plan_groups, tgn_forward, tgn_reference_oracle
from vidpace.tgn import TGNParams

# group plans follow the temporal size at each layer
for t in (16, 8, 4, 2):
    plan = plan_groups(t, g=2)
    print(f"t={t:2d} -> p={plan.group_count}, windows {plan.boundaries}")

# C3D built for 16-frame clips: (t, p) per conv stage
c3d = build_backbone(BackboneConfig(arch="c3d", width_scale=0.125, clip_len=16, g=2), seed=0)
print("C3D stages:", c3d.stage_plans())

# the vectorized layer against a plain-Python summation oracle
x = torch.randn(2, 8, 3, 5, 5, dtype=torch.float64)
params = TGNParams(torch.rand(3, dtype=torch.float64) + 0.5, torch.randn(3, dtype=torch.float64))
plan = plan_groups(8, 2)
fast = tgn_forward(x, plan, params).numpy()
slow = tgn_reference_oracle(x.numpy(), plan, params)
print("max |fast - oracle| =", np.abs(fast - slow).max())

# every (channel, window) slice is standardized before the affine step
y = tgn_forward(x, plan, TGNParams(torch.ones(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64)))
window = y[:, 0:2, 1]
print("window mean %.2e, var %.4f" % (window.mean().item(), window.var(unbiased=False).item()))
