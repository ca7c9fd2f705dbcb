import networkx as nx
import numpy as np
import pytest

from stablecube.hyperbolic_graph import HypGraph, build_setup, path_graph, random_near_tree, choose_geodesic
from stablecube.stable_decomposition import (
    MiddleMismatch,
    NotAdmissible,
    PointTooFar,
    StablePiece,
    add_cluster_point,
    build_stable_pair,
    collapse_to_isometry,
    identity_pair,
    interval_for,
    perturb_endpoint,
    refine_and_compose,
    validate_pair,
)

P20 = path_graph(20)


def p20(Y=(2, 3, 10), a=0, b=20):
    return build_setup(P20, a, b, set(Y), 2, E=2, eps_prime=0)


def test_add_existing_point_is_trivial():
    p = add_cluster_point(p20(), 3)
    assert p.history[-1][2] == "trivial"
    assert validate_pair(p).measured["unstable_count"] == 0


def test_split_case():
    p = add_cluster_point(p20(), 15)
    assert p.history[-1][2] == "split"
    assert [len(p.T.edge_components), len(p.Tp.edge_components)] == [3, 4]
    # the old edge 10..20 is cut at 15; both halves pair with the new edges
    st = sorted(p.stable(1))
    assert (10, 15) in st and (15, 20) in st
    assert validate_pair(p).ok


def test_affected_case():
    p = add_cluster_point(p20(), 4)
    assert p.history[-1][2] == "affected"
    assert (2, 3, 4) in p.Tp.clusters
    assert (10, 20) in p.stable(0) and (10, 20) in p.stable(1)


def test_add_far_point():
    G = nx.path_graph(21)
    nx.add_path(G, [10, 21, 22])
    g = HypGraph.from_networkx(G)
    s = build_setup(g, 0, 20, {10}, 2, E=2, eps_prime=0)
    with pytest.raises(PointTooFar):
        add_cluster_point(s, 22)


def test_identity_pair_validates():
    rep = validate_pair(identity_pair(interval_for(p20())))
    assert rep.ok and rep.measured["unstable_count"] == 0 and rep.measured["non_identical"] == 0


def test_mismatched_lengths_rejected():
    p = add_cluster_point(p20(), 15)
    q = p.pieces[0]
    p.pieces[0] = StablePiece(q.s, q.e, q.sp, q.ep + 1, q.identical, q.dist)
    rep = validate_pair(p)
    assert not rep.ok and not rep.items["c"] and rep.witnesses["c"]


def test_compose_with_identity():
    p = add_cluster_point(p20(), 15)
    i = identity_pair(p.Tp)
    out = refine_and_compose(p, i)
    assert out.stable(0) == p.stable(0) and out.stable(1) == p.stable(1)


def test_compose_two_splits():
    s = p20()
    p1 = add_cluster_point(s, 15)
    p2 = add_cluster_point(s.with_points(Y={2, 3, 10, 15}), 5)
    out = refine_and_compose(p1, p2)
    assert validate_pair(out).ok
    assert out.L <= 4 * max(p1.L, 1) * max(p2.L, 1)
    assert len(out.refinements) == 2


def test_compose_middle_mismatch():
    p1 = add_cluster_point(p20(), 15)
    with pytest.raises(MiddleMismatch):
        refine_and_compose(p1, identity_pair(interval_for(p20())))


def test_compose_associative():
    s = p20()
    p1 = add_cluster_point(s, 15)
    s2 = s.with_points(Y={2, 3, 10, 15})
    p2 = add_cluster_point(s2, 5)
    p3 = add_cluster_point(s2.with_points(Y={2, 3, 5, 10, 15}), 18)
    left = refine_and_compose(refine_and_compose(p1, p2), p3, check_bound=False)
    right = refine_and_compose(p1, refine_and_compose(p2, p3), check_bound=False)
    assert left.stable(0) == right.stable(0) and left.stable(1) == right.stable(1)
    assert left.complements(0) == right.complements(0)


def test_perturb_endpoint_examples():
    s = p20(Y=(10,))
    same = perturb_endpoint(s, 0)
    assert validate_pair(same).measured["unstable_count"] == 0
    p = perturb_endpoint(s, 1)
    assert validate_pair(p).ok
    c1, c2, phi = collapse_to_isometry(p)
    assert phi(c1.q[0]) == c2.q[0] and phi(c1.q[-1]) == c2.q[-1]
    with pytest.raises(PointTooFar):
        perturb_endpoint(s, 5)


def test_perturb_onto_branch():
    G = nx.path_graph(31)
    nx.add_path(G, [0, 31])
    g = HypGraph.from_networkx(G)
    s = build_setup(g, 0, 30, {15}, 2, E=2, eps_prime=0)
    p = perturb_endpoint(s, 31)
    assert validate_pair(p).ok


def test_build_stable_pair_examples():
    s = p20()
    assert validate_pair(build_stable_pair(s, s)).measured["unstable_count"] == 0
    sp = p20(Y=(2, 3, 10, 15), a=1, b=19)
    p = build_stable_pair(s, sp)
    assert validate_pair(p).ok
    assert p.moves <= 1 + 2
    assert p.thick is not None
    for side in (0, 1):
        thin = p.stable(side)
        for lo, hi in p.thick.stable(side):
            assert any(a <= lo and hi <= b for a, b in thin)
    q = build_stable_pair(p20(Y=(5,)), p20(Y=(12,)))
    assert validate_pair(q).ok


def test_not_admissible():
    with pytest.raises(NotAdmissible):
        build_stable_pair(p20(Y=()), p20(Y=(), a=5))
    with pytest.raises(NotAdmissible):
        build_stable_pair(p20(Y=(2,)), p20(Y=(2, 5, 8)), N=2)


def test_collapse_examples():
    i = identity_pair(interval_for(p20()))
    c1, c2, phi = collapse_to_isometry(i)
    # mu({2,3}) has length 1 and collapses to a vertex
    assert c1.q == c2.q and c1.length == 19
    p = add_cluster_point(p20(), 15)
    c1, c2, phi = collapse_to_isometry(p)
    assert c1.length == c2.length
    for y in p.Y0:
        assert phi(c1.cluster_points[y]) == c2.cluster_points[y]


def test_close_pair_isometry():
    # a near-tree with a short cycle lets paired pieces differ in the graph
    rng = np.random.default_rng(3)
    for _ in range(40):
        g = random_near_tree(rng, 20, 3, 2)
        lam = choose_geodesic(g, [0], [20])
        s = build_setup(g, 0, 20, {int(lam[6])}, 2, E=2, eps_prime=0)
        nb = [v for v in g.adj[20] if g.d(v, 20) == 1]
        sp = s.with_points(b=nb[0])
        p = build_stable_pair(s, sp)
        assert validate_pair(p).ok
        c1, c2, _ = collapse_to_isometry(p)
        assert c1.length == c2.length
