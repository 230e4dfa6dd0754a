import numpy as np
import pytest
import torch

torch.set_default_dtype(torch.float64)

from hde_trainer.gnn import (
    GraphConv,
    GraphUNet,
    TopKPool,
    conv_message,
    edges_from_faces,
    prepare_graph,
)
from scipy.sparse import csr_matrix


def test_conv_message_equal_features():
    f = torch.randn(4, 6)
    m = conv_message(f, f)
    assert m.shape == (4, 13)  # 2d + 1
    assert torch.all(m[:, 6:12] == 0)
    assert torch.all(m[:, 12] == 0)


def test_conv_message_unit_offset():
    f_i = torch.zeros(1, 6)
    f_j = torch.zeros(1, 6)
    f_j[0, 2] = 1.0
    m = conv_message(f_i, f_j)
    assert m[0, 12] == pytest.approx(1.0)
    assert m[0, 2] == 1.0  # f_j block
    assert m[0, 8] == 1.0  # difference block


def test_conv_message_random_shape():
    rng = torch.Generator().manual_seed(0)
    f_i = torch.randn(10, 7, generator=rng)
    f_j = torch.randn(10, 7, generator=rng)
    assert conv_message(f_i, f_j).shape == (10, 15)


def test_graph_conv_max_aggregation_two_nodes():
    # wire the layer to the identity so the output is exactly the max-
    # aggregated message of the neighborhood
    d = 2
    conv = GraphConv(d, 2 * d + 1, hidden=2 * d + 1)
    with torch.no_grad():
        conv.w1.weight.copy_(torch.eye(2 * d + 1))
        conv.w1.bias.zero_()
        conv.w0.weight.copy_(
            torch.cat([torch.zeros(2 * d + 1, d), torch.eye(2 * d + 1)], dim=1)
        )
        conv.w0.bias.zero_()
    x = torch.tensor([[1.0, 2.0], [-1.0, 5.0]])
    edges = torch.tensor([[0, 0], [0, 1], [1, 0], [1, 1]])
    out = conv(x, edges)
    # node 0 aggregates A(f_0, f_0) and A(f_0, f_1), elementwise max
    a00 = conv_message(x[0:1], x[0:1])[0]
    a01 = conv_message(x[0:1], x[1:2])[0]
    torch.testing.assert_close(out[0], torch.maximum(a00, a01))
    a11 = conv_message(x[1:2], x[1:2])[0]
    a10 = conv_message(x[1:2], x[0:1])[0]
    torch.testing.assert_close(out[1], torch.maximum(a11, a10))


def test_topk_pool_ratio_and_gating():
    torch.manual_seed(3)
    pool = TopKPool(4, ratio=0.5)
    x = torch.randn(10, 4)
    edges = np.array([[i, (i + 1) % 10] for i in range(10)])
    both = np.concatenate([edges, edges[:, ::-1], np.stack([np.arange(10)] * 2, 1)])
    adj = csr_matrix((np.ones(len(both)), (both[:, 0], both[:, 1])), shape=(10, 10))
    x_out, e_out, a_out, idx = pool(x, adj)
    assert x_out.shape == (5, 4)
    y = x @ pool.p / pool.p.norm()
    expected = torch.sort(torch.topk(y, 5).indices).values
    torch.testing.assert_close(idx, expected)
    torch.testing.assert_close(x_out, x[idx] * torch.tanh(y[idx]).unsqueeze(1))


def test_unet_output_shape_and_depth():
    verts, faces = np.random.default_rng(0).random((40, 3)), None
    # ring connectivity standing in for a mesh
    faces = np.array([[i, (i + 1) % 40, (i + 2) % 40] for i in range(40)])
    normals = np.zeros((40, 3))
    normals[:, 2] = 1.0
    feats, edges, adj = prepare_graph(verts, faces, normals)
    model = GraphUNet(widths=(8, 16, 16, 16, 16))
    assert len(model.down) == 5 and len(model.up) == 5
    out = model(feats, edges, adj)
    assert out.shape == (40, 5)


def test_edges_include_self_loops():
    faces = np.array([[0, 1, 2]])
    e = edges_from_faces(faces, 3)
    pairs = {tuple(r) for r in e}
    assert (0, 0) in pairs and (1, 1) in pairs and (2, 2) in pairs
    assert (0, 1) in pairs and (1, 0) in pairs
