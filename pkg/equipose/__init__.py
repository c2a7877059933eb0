"""
EquiPose
Diffusion-driven category-level shape reconstruction with pose and size estimation
"""

import torch

__version__ = "0.1.0"

# Every model, layer and oracle runs in double precision
torch.set_default_dtype(torch.float64)
