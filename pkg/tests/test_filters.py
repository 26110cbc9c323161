"""Polynomial sheaf filters and the layered network forward pass."""

import numpy as np
import pytest

from netsheaf import (
    Cochain,
    FilterSpec,
    MultiChannelCochain,
    apply_laplacian,
    assemble_laplacian,
    build_knn_graph,
    forward,
    load_filter_spec,
    polynomial_filter,
    random_filter_spec,
    sample_circle,
    save_filter_spec,
    scalar_graph_laplacian,
    transfer_disagreement,
    write_output_csv,
)
from netsheaf.circle import TWO_PI, arc_distance
from netsheaf.rng import derive
from netsheaf.sheaf import bandwidth_schedule


def random_orthogonal(d, rng):
    return np.linalg.qr(rng.standard_normal((d, d)))[0]


def make_instance(n, d, rng, t=0.7):
    coords = rng.standard_normal((n, 2))
    dmat = np.linalg.norm(coords[:, None] - coords[None, :], axis=-1)
    graph = build_knn_graph(list(range(n)), min(3, n - 1), t, distance=dmat,
                            stalk_dim=d)
    trans = {(int(i), int(j)): random_orthogonal(d, rng) for i, j in graph.edges}
    return assemble_laplacian(graph, trans)


def test_order_one_filter_is_channel_mixing():
    rng = derive(501)
    lap = make_instance(5, 2, rng)
    stack = rng.standard_normal((5, 2, 3))
    w0 = rng.standard_normal((3, 4))
    out = polynomial_filter(lap, MultiChannelCochain.from_stack(stack), [w0], 1)
    assert np.allclose(out.stack, stack @ w0, atol=1e-14)
    zero = polynomial_filter(lap, MultiChannelCochain.from_stack(stack),
                             [np.zeros((3, 4))], 1)
    assert np.all(zero.matrix == 0.0)


def test_filter_matches_dense_matrix_power_oracle():
    rng = derive(502)
    lap = make_instance(4, 2, rng)
    dense = lap.to_dense()
    s = rng.standard_normal((4, 2, 1))
    weights = [rng.standard_normal((1, 1)) for _ in range(3)]
    out = polynomial_filter(lap, MultiChannelCochain.from_stack(s), weights, 3)
    flat = s.reshape(8, 1)
    oracle = (flat * weights[0][0, 0]
              + (dense @ flat) * weights[1][0, 0]
              + (dense @ dense @ flat) * weights[2][0, 0])
    assert np.abs(out.matrix - oracle).max() <= 1e-9 * max(1.0, np.abs(oracle).max())


def test_filter_is_linear_in_the_signal():
    rng = derive(503)
    lap = make_instance(6, 3, rng)
    weights = [rng.standard_normal((2, 2)) for _ in range(3)]
    a = rng.standard_normal((6, 3, 2))
    b = rng.standard_normal((6, 3, 2))
    out_sum = polynomial_filter(
        lap, MultiChannelCochain.from_stack(2.0 * a - b), weights, 3)
    out_a = polynomial_filter(lap, MultiChannelCochain.from_stack(a), weights, 3)
    out_b = polynomial_filter(lap, MultiChannelCochain.from_stack(b), weights, 3)
    assert np.abs(out_sum.matrix - 2.0 * out_a.matrix + out_b.matrix).max() <= 1e-10


def test_filter_validation():
    rng = derive(504)
    lap = make_instance(4, 2, rng)
    s = MultiChannelCochain.from_stack(rng.standard_normal((4, 2, 1)))
    with pytest.raises(ValueError):
        polynomial_filter(lap, s, [], 0)
    with pytest.raises(ValueError):
        polynomial_filter(lap, s, [np.eye(1)], 2)
    bad = MultiChannelCochain.from_stack(rng.standard_normal((5, 2, 1)))
    with pytest.raises(ValueError):
        polynomial_filter(lap, bad, [np.eye(1)], 1)


def test_forward_identity_single_layer():
    rng = derive(505)
    lap = make_instance(5, 2, rng)
    stack = rng.standard_normal((5, 2, 3))
    w0 = rng.standard_normal((3, 2))
    spec = FilterSpec(orders=(1,), widths=(3, 2), weights=((w0,),),
                      nonlinearity="identity")
    out = forward(lap, MultiChannelCochain.from_stack(stack), spec)
    assert np.allclose(out.stack, stack @ w0, atol=1e-14)


@pytest.mark.parametrize("sigma", ["relu", "tanh", "identity"])
def test_forward_fixes_zero(sigma):
    rng = derive(506)
    lap = make_instance(5, 2, rng)
    spec = random_filter_spec((2, 2), (3, 4, 2), sigma, derive(507))
    zero = MultiChannelCochain.from_stack(np.zeros((5, 2, 3)))
    out = forward(lap, zero, spec)
    assert np.all(out.matrix == 0.0)


def test_forward_permutation_equivariance():
    rng = derive(508)
    n, d = 6, 2
    coords = rng.standard_normal((n, 2))
    dmat = np.linalg.norm(coords[:, None] - coords[None, :], axis=-1)
    graph = build_knn_graph(list(range(n)), 2, 0.7, distance=dmat, stalk_dim=d)
    trans = {(int(i), int(j)): random_orthogonal(d, rng) for i, j in graph.edges}
    lap = assemble_laplacian(graph, trans)
    perm = rng.permutation(n)
    inv = np.empty(n, dtype=int)
    inv[perm] = np.arange(n)
    graph_p = build_knn_graph(list(range(n)), 2, 0.7,
                              distance=dmat[np.ix_(perm, perm)], stalk_dim=d)
    trans_p = {}
    for (i, j), p_edge in trans.items():
        a, b = int(inv[i]), int(inv[j])
        trans_p[(min(a, b), max(a, b))] = p_edge if a < b else p_edge.T
    lap_p = assemble_laplacian(graph_p, trans_p)
    spec = random_filter_spec((2, 3), (2, 5, 3), "relu", derive(509))
    stack = rng.standard_normal((n, d, 2))
    out = forward(lap, MultiChannelCochain.from_stack(stack), spec).stack
    out_p = forward(lap_p, MultiChannelCochain.from_stack(stack[perm]), spec).stack
    assert np.abs(out_p - out[perm]).max() <= 1e-12


def test_forward_lipschitz_bound():
    rng = derive(510)
    lap = make_instance(8, 3, rng)
    spec = random_filter_spec((3, 2), (2, 4, 3), "relu", derive(511))
    lap_op = np.linalg.norm(lap.to_dense(), ord=2)
    bound = 1.0
    for l in range(spec.layers):
        layer = sum(lap_op ** k * np.linalg.norm(spec.weights[l][k], ord=2)
                    for k in range(spec.orders[l]))
        bound *= layer
    a = rng.standard_normal((8, 3, 2))
    b = a + 0.1 * rng.standard_normal((8, 3, 2))
    out_a = forward(lap, MultiChannelCochain.from_stack(a), spec)
    out_b = forward(lap, MultiChannelCochain.from_stack(b), spec)
    lhs = np.linalg.norm(out_a.matrix - out_b.matrix)
    rhs = bound * np.linalg.norm(a - b)
    assert lhs <= rhs + 1e-12


def test_identity_transports_reduce_to_scalar_network():
    rng = derive(512)
    n, d = 7, 3
    coords = rng.standard_normal((n, 2))
    dmat = np.linalg.norm(coords[:, None] - coords[None, :], axis=-1)
    graph = build_knn_graph(list(range(n)), 2, 0.7, distance=dmat, stalk_dim=d)
    eye = np.eye(d)
    lap = assemble_laplacian(graph, {(int(i), int(j)): eye for i, j in graph.edges})
    spec = random_filter_spec((2, 2), (2, 4, 1), "relu", derive(513))
    stack = rng.standard_normal((n, d, 2))
    out = forward(lap, MultiChannelCochain.from_stack(stack), spec).stack

    scalar_lap = scalar_graph_laplacian(graph)
    for coord in range(d):
        current = stack[:, coord, :]
        for l in range(spec.layers):
            acc = current @ spec.weights[l][0]
            power = current
            for k in range(1, spec.orders[l]):
                power = scalar_lap @ power
                acc = acc + power @ spec.weights[l][k]
            current = np.maximum(acc, 0.0)
        assert np.abs(out[:, coord, :] - current).max() <= 1e-10


def test_transfer_disagreement_basics():
    rng = derive(514)
    lap = make_instance(6, 2, rng)
    spec = FilterSpec(orders=(1,), widths=(1, 1), weights=((np.eye(1),),),
                      nonlinearity="identity")
    s = MultiChannelCochain.from_stack(rng.standard_normal((6, 2, 1)))
    probes = np.arange(3)
    assert transfer_disagreement(lap, lap, s, s, spec, probes, probes) == 0.0
    delta = np.zeros((6, 2, 1))
    delta[:3] = rng.standard_normal((3, 2, 1))
    shifted = MultiChannelCochain.from_stack(s.stack + delta)
    got = transfer_disagreement(lap, lap, s, shifted, spec, probes, probes)
    assert got == pytest.approx(np.sqrt(np.mean(delta[:3] ** 2)), rel=1e-12)
    with pytest.raises(ValueError):
        transfer_disagreement(lap, lap, s, s, spec, [], [])
    with pytest.raises(ValueError):
        transfer_disagreement(lap, lap, s, s, spec, [0, 1], [0])


def test_transfer_disagreement_shrinks_with_sample_size():
    spec = FilterSpec(orders=(2,), widths=(1, 1),
                      weights=((np.eye(1), np.eye(1)),), nonlinearity="identity")
    probes = TWO_PI * np.arange(16) / 16
    probe_idx = np.arange(16)

    def instance(n, rep):
        angles = np.concatenate([
            probes, sample_circle(n - 16, derive(515, n, rep)).angles])
        t_n = bandwidth_schedule(n, 1, 1.0)
        dmat = arc_distance(angles[:, None], angles[None, :])
        graph = build_knn_graph(angles, 8, t_n, distance=dmat, stalk_dim=1)
        lap = assemble_laplacian(
            graph, {(int(i), int(j)): np.eye(1) for i, j in graph.edges})
        s = MultiChannelCochain.from_stack(np.sin(angles)[:, None, None])
        return lap, s

    gaps = {}
    for n in (256, 1024):
        vals = []
        for rep in range(3):
            lap_a, s_a = instance(n, 2 * rep)
            lap_b, s_b = instance(n, 2 * rep + 1)
            vals.append(transfer_disagreement(
                lap_a, lap_b, s_a, s_b, spec, probe_idx, probe_idx))
        gaps[n] = np.mean(vals)
    assert gaps[1024] < gaps[256]


def test_filter_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec(orders=(1,), widths=(2, 2), weights=((np.eye(2),),),
                   nonlinearity="sigmoid")
    with pytest.raises(ValueError):
        FilterSpec(orders=(1, 1), widths=(2, 2), weights=((np.eye(2),),))
    with pytest.raises(ValueError):
        FilterSpec(orders=(2,), widths=(2, 2), weights=((np.eye(2),),))
    with pytest.raises(ValueError):
        FilterSpec(orders=(1,), widths=(2, 3), weights=((np.eye(2),),))


def test_multichannel_cochain_shape_checks():
    with pytest.raises(ValueError):
        MultiChannelCochain(n=2, d=2, channels=3, matrix=np.zeros((4, 2)))
    stack = np.arange(24.0).reshape(2, 3, 4)
    mc = MultiChannelCochain.from_stack(stack)
    assert np.all(mc.stack == stack)


def test_random_spec_is_seed_deterministic():
    a = random_filter_spec((2, 1), (3, 4, 2), "tanh", derive(516))
    b = random_filter_spec((2, 1), (3, 4, 2), "tanh", derive(516))
    for l in range(2):
        for k in range(a.orders[l]):
            assert np.array_equal(a.weights[l][k], b.weights[l][k])


def test_spec_file_round_trip(tmp_path):
    spec = random_filter_spec((2, 3), (2, 5, 3), "tanh", derive(517))
    path = tmp_path / "spec.txt"
    save_filter_spec(path, spec)
    restored = load_filter_spec(path)
    assert restored.orders == spec.orders
    assert restored.widths == spec.widths
    assert restored.nonlinearity == spec.nonlinearity
    for l in range(spec.layers):
        for k in range(spec.orders[l]):
            assert np.array_equal(restored.weights[l][k], spec.weights[l][k])


def test_spec_file_rejects_layer_mismatch(tmp_path):
    spec = random_filter_spec((1,), (2, 2), "relu", derive(518))
    path = tmp_path / "spec.txt"
    save_filter_spec(path, spec)
    text = path.read_text().replace("layers = 1", "layers = 2")
    path.write_text(text)
    with pytest.raises(ValueError):
        load_filter_spec(path)


def test_output_csv_layout(tmp_path):
    rng = derive(519)
    out = MultiChannelCochain.from_stack(rng.standard_normal((2, 2, 2)))
    path = tmp_path / "out.csv"
    write_output_csv(path, out)
    lines = path.read_text().splitlines()
    assert lines[1] == "node,coord,channel,value"
    assert len(lines) == 2 + 2 * 2 * 2
    node, coord, channel, value = lines[2].split(",")
    assert (node, coord, channel) == ("0", "0", "0")
    assert float(value) == pytest.approx(out.stack[0, 0, 0])
