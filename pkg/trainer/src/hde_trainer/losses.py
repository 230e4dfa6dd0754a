"""Training losses in torch, numerically matching the toolkit's oracle.

Dot-product loss: mean over the 3|F| face-corner terms of squared
differences of edge-vector dot products.  Laplacian loss: sum over vertices
of squared uniform-Laplacian differences.  Total = dot + w_lap * lap.
Everything runs in float64 so values agree with the reference oracle to
well under the 1e-5 parity tolerance.
"""

from __future__ import annotations

import numpy as np
import torch

DEFAULT_W_LAP = 0.1


def corner_dots(coords: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    p_i, p_j, p_k = coords[faces[:, 0]], coords[faces[:, 1]], coords[faces[:, 2]]
    e_ij, e_jk, e_ki = p_j - p_i, p_k - p_j, p_i - p_k
    d_i = (e_ij * (-e_ki)).sum(1)
    d_j = (e_jk * (-e_ij)).sum(1)
    d_k = (e_ki * (-e_jk)).sum(1)
    return torch.stack([d_i, d_j, d_k], dim=1)


def dot_product_loss(pred: torch.Tensor, truth: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    dp = corner_dots(pred, faces)
    dt = corner_dots(truth, faces)
    return ((dp - dt) ** 2).sum() / (3.0 * faces.shape[0])


def one_ring(faces: np.ndarray, n: int):
    """(offsets, indices) CSR one-ring, matching the oracle's ordering."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    both = np.concatenate([e, e[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    offsets = np.searchsorted(both[:, 0], np.arange(n + 1))
    return offsets, both[:, 1]


def uniform_laplacian(coords: torch.Tensor, offsets, idx) -> torch.Tensor:
    n = coords.shape[0]
    counts = torch.as_tensor(np.diff(offsets), dtype=coords.dtype).clamp_min(1)
    nbr_sum = torch.zeros_like(coords)
    src = torch.as_tensor(idx, dtype=torch.int64)
    owner = torch.repeat_interleave(
        torch.arange(n), torch.as_tensor(np.diff(offsets))
    )
    nbr_sum = nbr_sum.index_add(0, owner, coords[src])
    return coords - nbr_sum / counts.unsqueeze(1)


def laplacian_loss(pred: torch.Tensor, truth: torch.Tensor, offsets, idx) -> torch.Tensor:
    lp = uniform_laplacian(pred, offsets, idx)
    lt = uniform_laplacian(truth, offsets, idx)
    return ((lp - lt) ** 2).sum()


def total_loss(pred, truth, faces, offsets, idx, w_lap=DEFAULT_W_LAP):
    l_dot = dot_product_loss(pred, truth, faces)
    l_lap = laplacian_loss(pred, truth, offsets, idx)
    return l_dot + w_lap * l_lap, l_dot, l_lap
