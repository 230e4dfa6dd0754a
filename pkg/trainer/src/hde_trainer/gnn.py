"""Graph U-Net for vertex-wise embedding prediction.

Message passing follows the edge-feature scheme
A(f_i, f_j) = [f_j, f_j - f_i, ||f_j - f_i||] with max aggregation over the
one-ring, residual blocks of two convolutions with a skip connection, Top-K
pooling on the way down and index-based interpolation on the way up.  The
network maps 6 input channels (coordinates + normals) to 5 output channels;
the caller concatenates the original 3D coordinates in front.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
from scipy.sparse import csr_matrix


def conv_message(f_i: torch.Tensor, f_j: torch.Tensor) -> torch.Tensor:
    """[f_j, f_j - f_i, ||f_j - f_i||_2]; feature dim becomes 2d + 1."""
    diff = f_j - f_i
    return torch.cat([f_j, diff, diff.norm(dim=-1, keepdim=True)], dim=-1)


def edges_from_faces(faces: np.ndarray, n: int) -> np.ndarray:
    """Directed edge list (both directions) with self loops, deduplicated."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    both = np.concatenate([e, e[:, ::-1], np.stack([np.arange(n)] * 2, axis=1)])
    return np.unique(both, axis=0)


class GraphConv(nn.Module):
    """f_i' = W0([f_i, max_j W1 A(f_i, f_j)])."""

    def __init__(self, in_dim, out_dim, hidden=None):
        super().__init__()
        hidden = hidden or out_dim
        self.w1 = nn.Linear(2 * in_dim + 1, hidden)
        self.w0 = nn.Linear(in_dim + hidden, out_dim)

    def forward(self, x, edges):
        src, dst = edges[:, 1], edges[:, 0]  # aggregate j -> i
        msg = self.w1(conv_message(x[dst], x[src]))
        agg = torch.full((x.shape[0], msg.shape[1]), float("-inf"), dtype=x.dtype)
        agg = agg.scatter_reduce(0, dst.unsqueeze(1).expand_as(msg), msg, "amax",
                                 include_self=False)
        agg = torch.nan_to_num(agg, neginf=0.0)
        return self.w0(torch.cat([x, agg], dim=1))


class ResidualBlock(nn.Module):
    """Two graph convolutions with a skip connection; BN + LeakyReLU."""

    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.conv1 = GraphConv(in_dim, out_dim)
        self.bn1 = nn.BatchNorm1d(out_dim)
        self.conv2 = GraphConv(out_dim, out_dim)
        self.bn2 = nn.BatchNorm1d(out_dim)
        self.act = nn.LeakyReLU(0.01)
        self.skip = nn.Linear(in_dim, out_dim) if in_dim != out_dim else nn.Identity()

    def forward(self, x, edges):
        h = self.act(self.bn1(self.conv1(x, edges)))
        h = self.act(self.bn2(self.conv2(h, edges)))
        return h + self.skip(x)


class TopKPool(nn.Module):
    """Learnable scalar projection; keeps the top ceil(ratio * N) vertices."""

    def __init__(self, dim, ratio=0.5):
        super().__init__()
        self.p = nn.Parameter(torch.randn(dim))
        self.ratio = ratio

    def forward(self, x, adj: csr_matrix):
        y = x @ self.p / self.p.norm().clamp_min(1e-12)
        k = max(1, int(np.ceil(self.ratio * x.shape[0])))
        idx = torch.topk(y, k).indices
        idx, _ = torch.sort(idx)
        x_out = x[idx] * torch.tanh(y[idx]).unsqueeze(1)
        # 2-hop augmented connectivity keeps the pooled graph connected
        a2 = ((adj + adj @ adj) > 0).astype(np.int8)
        sub = a2[idx.numpy()][:, idx.numpy()].tocoo()
        edges = np.unique(
            np.concatenate(
                [np.stack([sub.row, sub.col], axis=1),
                 np.stack([np.arange(k)] * 2, axis=1)]
            ),
            axis=0,
        )
        sub_adj = csr_matrix(
            (np.ones(len(edges), dtype=np.int8), (edges[:, 0], edges[:, 1])),
            shape=(k, k),
        )
        return x_out, torch.as_tensor(edges, dtype=torch.int64), sub_adj, idx


class GraphUNet(nn.Module):
    """5 down-sampling and 5 up-sampling blocks with skip connections."""

    def __init__(self, in_channels=6, out_channels=5, widths=(64, 128, 256, 512, 512),
                 pool_ratio=0.5):
        super().__init__()
        self.depth = len(widths)
        self.down = nn.ModuleList()
        self.pools = nn.ModuleList()
        prev = in_channels
        for w in widths:
            self.down.append(ResidualBlock(prev, w))
            self.pools.append(TopKPool(w, pool_ratio))
            prev = w
        self.bottom = ResidualBlock(prev, prev)
        # up blocks take [unpooled, skip] concatenated and emit the skip width
        self.up = nn.ModuleList()
        for w in reversed(widths):
            self.up.append(ResidualBlock(prev + w, w))
            prev = w
        self.head = GraphConv(prev, out_channels)

    def forward(self, x, edges, adj: csr_matrix):
        skips = []
        cur_edges = edges
        cur_adj = adj
        for block, pool in zip(self.down, self.pools):
            x = block(x, cur_edges)
            skips.append((x, cur_edges, cur_adj))
            x, cur_edges, cur_adj, idx = pool(x, cur_adj)
            skips[-1] += (idx,)
        x = self.bottom(x, cur_edges)
        for block in self.up:
            x_skip, e_skip, a_skip, idx = skips.pop()
            full = torch.zeros((x_skip.shape[0], x.shape[1]), dtype=x.dtype)
            full[idx] = x  # interpolation: pooled features back at their nodes
            x = block(torch.cat([full, x_skip], dim=1), e_skip)
            cur_edges = e_skip
        return self.head(x, cur_edges)


def prepare_graph(vertices: np.ndarray, faces: np.ndarray, normals: np.ndarray):
    """(features, edge tensor, csr adjacency) for one mesh."""
    n = len(vertices)
    edges = edges_from_faces(faces, n)
    adj = csr_matrix(
        (np.ones(len(edges), dtype=np.int8), (edges[:, 0], edges[:, 1])), shape=(n, n)
    )
    feats = torch.as_tensor(
        np.concatenate([vertices, normals], axis=1), dtype=torch.get_default_dtype()
    )
    return feats, torch.as_tensor(edges, dtype=torch.int64), adj
