"""Walk through every loss term with hand-sized volumes.

Shows the anchor values each term is designed around: the overlap
penalty is exactly 0.25 on a coin-flip map and exactly 0 on any binary
map; the Dice loss vanishes on a perfect prediction; the focal-positive
term gates probabilities through a learnable threshold map, soft in
training and hard at evaluation.
"""

import numpy as np

from voxseg import (LossWeights, build_unet, cel, composite_loss, dice_loss,
                    focal_positive_loss, overlap_loss, UNetConfig)
from voxseg.autodiff import Tensor

rng = np.random.default_rng(3)
y = (rng.random((5, 5, 5)) < 0.3).astype(np.float32)

# --- cross entropy ----------------------------------------------------
perfectish = Tensor(np.clip(y, 0.001, 0.999))
print("cel near-perfect:", f"{cel(perfectish, y).item():.5f}")
print("cel coin-flip:   ", f"{cel(Tensor(np.full_like(y, 0.5)), y).item():.5f}",
      "(= ln 2 =", f"{np.log(2):.5f})")

# --- soft Dice --------------------------------------------------------
print("\ndice perfect:    ", f"{dice_loss(Tensor(y), y).item():.2e}")
print("dice complement: ", f"{dice_loss(Tensor(1.0 - y), y).item():.5f}")

# --- overlap penalty --------------------------------------------------
# p*(1-p) per voxel: pushes the map toward a binary decision.
half = Tensor(np.full((4, 4, 4), 0.5))
binary = Tensor((rng.random((4, 4, 4)) < 0.5).astype(np.float64))
print("\noverlap at p=0.5:", overlap_loss(half).item(), "(exactly 1/4)")
print("overlap binary:  ", overlap_loss(binary).item(), "(exactly 0)")

# --- focal positive with threshold map --------------------------------
# Probabilities enter as logits; the threshold map decides which voxels
# count as positives.  Raising the threshold above a false positive
# removes it from the gated map without touching the probabilities.
logit = Tensor(np.where(y > 0, 4.0, -4.0))        # confident prediction
bz, by, bx = np.argwhere(y == 0)[0]               # some background voxel
logit.data[bz, by, bx] = 4.0                      # one confident mistake
flat_tm = Tensor(np.full_like(y, 0.5))
fixed_tm = np.full_like(y, 0.5)
fixed_tm[bz, by, bx] = 0.99                       # gate the mistake out
print("\nfpl eval, flat tm 0.5: ",
      f"{focal_positive_loss(logit, flat_tm, y, training=False).item():.5f}")
print("fpl eval, tm raised at the mistake:",
      f"{focal_positive_loss(logit, Tensor(fixed_tm), y, training=False).item():.5f}")
soft = focal_positive_loss(logit, flat_tm, y, training=True, tau=0.05)
print("fpl train (soft gate, tau=0.05):   ", f"{soft.item():.5f}")

# Training mode is differentiable in both the logits and the map.
logit2 = Tensor(np.where(y > 0, 1.0, -1.0), requires_grad=True)
tm2 = Tensor(np.full_like(y, 0.5), requires_grad=True)
focal_positive_loss(logit2, tm2, y, training=True).backward()
print("grad reaches logits:", logit2.grad is not None,
      " threshold map:", tm2.grad is not None)

# --- composite --------------------------------------------------------
# One forward pass of the miniature U-Net provides the five side outputs
# the deep-supervision terms attach to.
net = build_unet(UNetConfig(levels=2, base_channels=2, crop_dims=(8, 8, 8)), seed=0)
x = rng.normal(size=(1, 1, 8, 8, 8)).astype(np.float32)
target = (rng.random((1, 1, 8, 8, 8)) < 0.2).astype(np.float32)
outputs = net.forward(x)

weights = LossWeights()
total, parts = composite_loss(outputs, target, net.params, weights)
print("\ncomposite total:", f"{parts.total:.5f}")
print("  dice main    :", f"{parts.dcl_main:.5f}")
print("  overlap main :", f"{parts.ovl_main:.5f}")
print("  focal positive:", f"{parts.fpl:.5f}")
print("  side dice    :", [f"{v:.3f}" for v in parts.side_dcl])
print("  side overlap :", [f"{v:.3f}" for v in parts.side_ovl])
print("  l2           :", f"{parts.l2:.5f}")

# The cross-entropy-only configuration used as an ablation baseline.
total_cel, parts_cel = composite_loss(outputs, target, net.params,
                                      LossWeights(use_cel=True))
print("cel-only total :", f"{parts_cel.total:.5f}")
