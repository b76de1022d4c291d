"""Tour of the tensor engine and the Gaussian-RBF KAN building blocks.

Builds a small computation graph, checks its hand-derived gradients
against finite differences, and shows what the two-path KAN block
computes on a toy feature map.
"""

import numpy as np

from gkanct import autodiff as ad
from gkanct.autodiff import Tensor
from gkanct.gkan import RbfGrid, gauss_rbf_map, kan_block, rbf_basis

rng = np.random.default_rng(0)

# --- the tape ---------------------------------------------------------------
# Tensors record their parents; backward() walks the graph once in
# topological order and accumulates gradients.
x = Tensor(rng.standard_normal((2, 6, 6)), requires_grad=True)
k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
y = ad.silu(ad.conv2d(x, k, stride=1, pad=1))
lossval = ad.mse_loss(y, np.zeros_like(y.data))
lossval.backward()
print("loss:", float(lossval.data))
print("grad norms:", np.linalg.norm(x.grad), np.linalg.norm(k.grad))

# --- gradient checking -------------------------------------------------------
# Every op ships with an analytic backward pass; grad_check compares it
# to central differences through a random linear functional.
err = ad.grad_check(lambda x, k: ad.silu(ad.conv2d(x, k, 1, 1)), [x, k])
print("finite-difference error:", err)

# --- the Gaussian RBF grid ----------------------------------------------------
# Eight fixed centers on [-1, 1]; sigma equals the center spacing. The
# basis response at any point is a short vector of Gaussian activations.
grid = RbfGrid()
print("centers:", np.round(grid.centers, 3))
print("basis at x=0.1:", np.round(rbf_basis(0.1, grid), 3))

# --- the two-path block --------------------------------------------------------
# A KAN block sums a conventional conv path (on SiLU features) with a
# pixel-wise RBF expansion followed by a shared linear map. Zeroing one
# path isolates the other.
F = Tensor(rng.standard_normal((2, 6, 6)))
conv_k = Tensor(rng.standard_normal((3, 2, 3, 3)))
rbf_w = Tensor(rng.standard_normal((3, 2 * grid.c)))
full = kan_block(F, conv_k, rbf_w, grid)
conv_only = kan_block(F, conv_k, Tensor(np.zeros_like(rbf_w.data)), grid)
rbf_only = gauss_rbf_map(F, rbf_w, grid)
print("block = conv path + rbf path:",
      np.allclose(full.data, conv_only.data + rbf_only.data))
