import networkx as nx
import numpy as np
import pytest

from stablecube.hyperbolic_graph import (
    Disconnected,
    HypGraph,
    PointTooFar,
    build_clusters,
    build_setup,
    build_stable_interval,
    choose_geodesic,
    cluster_separation_graph,
    compute_delta,
    compute_delta_brute,
    path_graph,
    random_near_tree,
    merge_blocks,
    random_tree,
    thicken,
    thicken_segments,
)

P20 = path_graph(20)


def p20(Y=(2, 3, 10), **kw):
    return build_setup(P20, 0, 20, set(Y), 2, E=2, eps_prime=0, **kw)


def test_delta_examples():
    assert compute_delta(random_tree(np.random.default_rng(0), 15)) == 0
    assert compute_delta(path_graph(9)) == 0
    c8 = HypGraph.from_networkx(nx.cycle_graph(8))
    assert compute_delta(c8) == compute_delta_brute(c8.dist)


def test_delta_needs_connected():
    g = HypGraph(4, [(0, 1), (2, 3)])
    with pytest.raises(Disconnected):
        compute_delta(g)


def test_geodesic_symmetric_and_minimal():
    rng = np.random.default_rng(2)
    g = random_near_tree(rng, 12, 3, 2)
    for u, v in [(0, 12), (3, 9), (1, 1)]:
        lam = choose_geodesic(g, [u], [v])
        assert len(lam) - 1 == g.d(u, v)
        assert set(lam) == set(choose_geodesic(g, [v], [u]))


def test_setup_examples():
    assert build_setup(P20, 0, 20, set(), 2).Y == frozenset()
    s = p20()
    assert s.lam == list(range(21))
    G = nx.path_graph(21)
    nx.add_path(G, [10, 21, 22, 23])
    g = HypGraph.from_networkx(G)
    with pytest.raises(PointTooFar):
        build_setup(g, 0, 20, {2, 3, 10, 23}, 2)


def test_clusters():
    assert build_clusters(build_setup(P20, 0, 20, set(), 2, E=2)).clusters == [(0,), (20,)]
    assert build_clusters(p20()).clusters == [(0,), (2, 3), (10,), (20,)]
    assert len(build_clusters(p20(), E=50).clusters) == 1


def test_cluster_separation_order():
    sg = cluster_separation_graph(build_setup(P20, 0, 20, set(), 2, E=2, eps_prime=0))
    assert sg.edges == [(0, 1)]
    sg = cluster_separation_graph(p20())
    assert [sg.partition.clusters[i] for i in sg.order] == [(0,), (2, 3), (10,), (20,)]


def test_cluster_separation_on_branch():
    # Y on a pendant branch hanging off the spine
    G = nx.path_graph(41)
    nx.add_path(G, [20, 41, 42])
    g = HypGraph.from_networkx(G)
    s = build_setup(g, 0, 40, {41}, 4, eps_prime=1, E=4)
    sg = cluster_separation_graph(s)
    sh = [sg.partition.shadows[c] for c in sg.order]
    assert sh == sorted(sh)


def test_stable_interval_examples():
    t = build_stable_interval(build_setup(P20, 0, 20, set(), 2, E=2, eps_prime=0))
    assert [c.length for c in t.edge_components] == [20]
    t = build_stable_interval(p20())
    assert [c.length for c in t.edge_components] == [2, 7, 10]
    assert t.mu(1).length == 1
    assert t.phi == list(range(21))
    assert t.qi["injective_components"]


def test_stable_interval_branch_cluster():
    G = nx.path_graph(41)
    nx.add_path(G, [20, 41])
    g = HypGraph.from_networkx(G)
    s = build_setup(g, 0, 40, {16, 41}, 4, eps_prime=1, E=6)
    t = build_stable_interval(s)
    k = t.cluster_index_of(41)
    assert set(t.clusters[k]) == {16, 41}
    # mu runs between the two connector endpoints: 16 towards a, 41 towards b
    m = t.mu(k)
    assert (t.phi[m.start], t.phi[m.end]) == (16, 41)
    assert m.length == g.d(16, 41)


def test_thickening_examples():
    th = thicken_segments(10, [(0, 0), (10, 10)], 1, 1)
    assert th.edge_blocks == [(1, 9)]
    th = thicken(build_stable_interval(p20()), 1, 2)
    # the length-2 edge next to a disappears; the others lose 1 at each cluster end
    assert th.edge_blocks == [(4, 9), (11, 19)]
    th = thicken(build_stable_interval(p20()), 1, 10)
    assert th.degenerate and th.edge_blocks == []


def test_thickening_idempotent():
    t = build_stable_interval(p20())
    for r1, r2 in [(1, 1), (1, 2), (2, 3)]:
        th = thicken(t, r1, r2)
        # the merge step is a fixed point on its own output
        assert merge_blocks(th.cluster_blocks, r2) == th.cluster_blocks


def test_default_regime_properties():
    rng = np.random.default_rng(9)
    for _ in range(20):
        g = random_near_tree(rng, 30, 4, 1)
        lam = choose_geodesic(g, [0], [30])
        Y = {int(v) for v in rng.choice(lam, 3, replace=False)}
        s = build_setup(g, 0, 30, Y, 1)
        part = build_clusters(s)
        sh = sorted(part.shadows)
        assert all(x[1] < y[0] for x, y in zip(sh, sh[1:]))
        build_stable_interval(s)
