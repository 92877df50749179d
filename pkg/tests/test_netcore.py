import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from routecomply.netcore import (
    DemandSpec,
    Edge,
    GridAttrRanges,
    Network,
    Path,
    PathCatalog,
    bpr,
    bpr_time,
    build_grid,
    dumps_network,
    edge_flows,
    enumerate_paths,
    free_flow_cost,
    load_network,
    path_incidence,
    save_network,
    total_system_time,
    validate_path,
)

from conftest import parallel_net


def all_simple_paths(net, origin, dest):
    """Plain recursive DFS; the oracle for the best-first enumerator."""
    out = []

    def walk(node, seq, seen):
        if node == dest:
            out.append(tuple(seq))
            return
        for eid in net.out_edges[node]:
            nxt = net.edges[eid].head
            if nxt not in seen:
                walk(nxt, seq + [eid], seen | {nxt})

    walk(origin, [], {origin})
    return out


def test_grid_sizes():
    net = build_grid(4, 4, seed=1)
    assert len(net.nodes) == 16 and net.n_edges == 48
    net = build_grid(2, 2, seed=1)
    assert len(net.nodes) == 4 and net.n_edges == 8


def test_grid_edges_are_antiparallel_lattice_pairs():
    net = build_grid(3, 4, seed=5)
    for k in range(0, net.n_edges, 2):
        a, b = net.edges[k], net.edges[k + 1]
        assert (a.tail, a.head) == (b.head, b.tail)
        assert a.length == b.length
        ra, ca = divmod(a.tail, 4)
        rb, cb = divmod(a.head, 4)
        assert abs(ra - rb) + abs(ca - cb) == 1


def test_grid_attributes_within_ranges():
    rng = GridAttrRanges()
    net = build_grid(4, 4, seed=3, attr_ranges=rng)
    speed = net.length / net.t0
    assert np.all((speed >= rng.speed[0] - 1e-9) & (speed <= rng.speed[1] + 1e-9))
    assert np.all((net.capacity >= rng.capacity[0]) & (net.capacity <= rng.capacity[1]))
    frac = net.base_flow / net.capacity
    assert np.all((frac >= 0) & (frac <= rng.base_fraction[1]))
    np.testing.assert_allclose(net.max_time, 3.4 * net.t0, rtol=1e-12)


def test_grid_same_seed_is_byte_identical():
    assert dumps_network(build_grid(4, 4, seed=11)) == dumps_network(build_grid(4, 4, seed=11))
    assert dumps_network(build_grid(4, 4, seed=11)) != dumps_network(build_grid(4, 4, seed=12))


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        build_grid(1, 4, seed=0)
    with pytest.raises(ValueError):
        build_grid(4, 4, seed=0, attr_ranges=GridAttrRanges(capacity=(0.0, 1.0)))
    with pytest.raises(ValueError):
        build_grid(4, 4, seed=0, attr_ranges=GridAttrRanges(risk=(0.0, 1.5)))


def test_edge_invariants_enforced():
    with pytest.raises(ValueError):
        Edge(0, 0, 1, 0.0, 1.0, 1.0, 0.5, 0.0, 1.0)
    with pytest.raises(ValueError):
        Edge(0, 0, 1, 1.0, 1.0, 1.0, 0.5, 0.0, 0.5)
    with pytest.raises(ValueError):
        Network([0, 1], [Edge(0, 0, 2, 1.0, 1.0, 1.0, 0.5, 0.0, 2.0)])
    with pytest.raises(ValueError):
        DemandSpec(3, 3, 1.0)


def test_network_roundtrip_lossless(tmp_path):
    net = build_grid(4, 4, seed=2)
    save_network(net, tmp_path / "n.json")
    back = load_network(tmp_path / "n.json")
    assert back == net
    assert np.array_equal(back.t0, net.t0) and np.array_equal(back.base_flow, net.base_flow)


def test_bpr_examples():
    e = Edge(0, 0, 1, 12.5, 0.8, 100.0, 0.1, 0.0, 50.0)
    assert bpr_time(e, 0.0) == 12.5
    assert bpr_time(e, 0.8) == pytest.approx(1.15 * 12.5, rel=1e-15)
    assert bpr_time(e, 1.6) == pytest.approx(3.4 * 12.5, rel=1e-15)
    with pytest.raises(ValueError):
        bpr_time(e, -0.1)


@given(
    t0=st.floats(0.1, 100),
    cap=st.floats(0.1, 5),
    x1=st.floats(0, 10),
    dx=st.floats(1e-3, 10),
)
def test_bpr_strictly_increasing(t0, cap, x1, dx):
    assert bpr(t0, cap, x1) < bpr(t0, cap, x1 + dx)


def test_enumerate_2x2_corner():
    net = build_grid(2, 2, seed=0)
    paths = enumerate_paths(net, DemandSpec(0, 3, 1.0), 2)
    assert len(paths) == 2 and all(len(p) == 2 for p in paths)


def test_enumerate_k1_is_shortest():
    net = build_grid(4, 4, seed=4)
    best = min(all_simple_paths(net, 0, 15), key=lambda s: sum(net.t0[e] for e in s))
    (p,) = enumerate_paths(net, DemandSpec(0, 15, 1.0), 1)
    assert p.edge_ids == best


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_enumerate_matches_exhaustive_dfs(seed):
    net = build_grid(4, 4, seed=seed)
    paths = enumerate_paths(net, DemandSpec(1, 14, 1.0), 5)
    oracle = sorted(all_simple_paths(net, 1, 14), key=lambda s: (sum(net.t0[e] for e in s), s))[:5]
    assert [p.edge_ids for p in paths] == oracle
    costs = [free_flow_cost(net, p) for p in paths]
    assert len(set(oracle)) == 5 and costs == sorted(costs)
    for p in paths:
        validate_path(net, p)


def test_enumerate_tie_break_lexicographic():
    net = parallel_net([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    paths = enumerate_paths(net, DemandSpec(0, 1, 1.0), 3)
    assert [p.edge_ids for p in paths] == [(0,), (1,), (2,)]


def test_enumerate_returns_available_when_fewer_than_k():
    net = parallel_net([1.0, 2.0], [1.0, 1.0])
    assert len(enumerate_paths(net, DemandSpec(0, 1, 1.0), 5)) == 2


def test_enumerate_no_path():
    net = parallel_net([1.0], [1.0])
    with pytest.raises(ValueError):
        enumerate_paths(net, DemandSpec(1, 0, 1.0), 2)


def test_validate_path_rejects_broken_chains():
    net = build_grid(2, 2, seed=0)
    with pytest.raises(ValueError):
        validate_path(net, Path((0, 0), 0, 1))
    with pytest.raises(ValueError):
        validate_path(net, Path((0, 1), 0, 0))


def test_edge_flows_examples():
    net = build_grid(2, 2, seed=0)
    ps = enumerate_paths(net, DemandSpec(0, 3, 1.0), 2)
    assert np.array_equal(edge_flows(net, ps, [0.0, 0.0]), np.zeros(net.n_edges))
    ind = np.zeros(net.n_edges)
    ind[list(ps[0].edge_ids)] = 1.0
    assert np.array_equal(edge_flows(net, ps, [1.0, 0.0]), ind)
    with pytest.raises(ValueError):
        edge_flows(net, ps, [1.0])


def test_edge_flows_overlap_superposition():
    net = build_grid(3, 3, seed=0)
    ps = enumerate_paths(net, DemandSpec(0, 8, 1.0), 4)
    shared = set(ps[0].edge_ids) & set(ps[1].edge_ids)
    assert shared
    x = edge_flows(net, ps[:2], [0.3, 0.45])
    for e in shared:
        assert x[e] == pytest.approx(0.75)


@settings(max_examples=50)
@given(st.lists(st.floats(0, 3), min_size=6, max_size=6), st.lists(st.floats(0, 3), min_size=6, max_size=6))
def test_edge_flows_additive(a, b):
    net = build_grid(3, 3, seed=0)
    ps = enumerate_paths(net, DemandSpec(0, 8, 1.0), 6)
    lhs = edge_flows(net, ps, np.add(a, b))
    np.testing.assert_allclose(lhs, edge_flows(net, ps, a) + edge_flows(net, ps, b), rtol=1e-12, atol=1e-12)


def test_total_system_time_examples():
    net = build_grid(3, 3, seed=0)
    assert total_system_time(net, np.zeros(net.n_edges)) == 0.0
    single = parallel_net([7.0], [0.6])
    assert total_system_time(single, [0.6]) == pytest.approx(1.15 * 7.0 * 0.6, rel=1e-14)


def test_total_system_time_independent_summation():
    net = build_grid(3, 3, seed=9)
    x = np.random.default_rng(0).uniform(0, 1, net.n_edges)
    acc = 0.0
    for e, xe in zip(net.edges, x):
        acc += bpr_time(e, xe + net.base_flow[e.id]) * xe
    assert total_system_time(net, x) == pytest.approx(acc, rel=1e-12)


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_total_system_time_convex_on_rays(seed):
    net = build_grid(3, 3, seed=1)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, net.n_edges)
    d = rng.uniform(0, 1, net.n_edges)
    s, t = sorted(rng.uniform(0, 3, 2))
    f = lambda u: total_system_time(net, x + u * d)
    assert f(0.5 * (s + t)) <= 0.5 * (f(s) + f(t)) + 1e-9 * abs(f(t))


def test_path_catalog_ids(default_catalog):
    cat = default_catalog
    ids = [cat.path_id(m, k) for m in range(len(cat.demands)) for k in range(len(cat.paths[m]))]
    assert ids == list(range(len(cat.flat)))
    for pid in ids:
        m, k = cat.locate(pid)
        assert cat.get(pid) == cat.paths[m][k]
    with pytest.raises(KeyError):
        cat.locate(len(ids))
