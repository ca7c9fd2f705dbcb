import itertools

import numpy as np
import pytest

from stablecube.wallspace_core import (
    InvalidPocset,
    Pocset,
    UnknownHyperplane,
    VertexNotInComplex,
    check_halfspace_isomorphism,
    consistent,
    delete_hyperplanes,
    distance,
    dual_complex,
    median,
    random_pocset,
    transversality_graph,
    validate_pocset,
    width,
)


def chain(n):
    names = [f"c{i}" for i in range(n)]
    return Pocset.from_names(names, [(names[i], names[j]) for i in range(n) for j in range(i + 1, n)]).closed()


def cube(n):
    return Pocset([f"t{i}" for i in range(n)])


def brute_vertices(p):
    return sorted(v for v in itertools.product((0, 1), repeat=p.n) if consistent(p, v))


def test_single_wall_valid():
    rep = validate_pocset(Pocset(["A"]))
    assert rep.ok and rep.info["width"] == 1


def test_order_reversal_violation():
    p = Pocset(["A", "B"], [(0, 2)])
    rep = validate_pocset(p)
    assert not rep.ok
    assert "order-reversal(A,B)" in rep.violations


def test_width_matches_subset_search():
    rng = np.random.default_rng(8)
    p = random_pocset(rng, 8)
    best = 0
    for r in range(1, p.n + 1):
        for S in itertools.combinations(range(p.n), r):
            if all(p.transverse(i, j) for i, j in itertools.combinations(S, 2)):
                best = r
    assert width(p) == best


def test_dual_small_cases():
    one = dual_complex(Pocset(["A"]))
    assert len(one.vertices) == 2 and len(one.edges) == 1
    sq = dual_complex(cube(2))
    assert len(sq.vertices) == 4 and len(sq.edges) == 4 and sq.dimension == 2
    ch = dual_complex(Pocset.from_names(["A", "B"], [("A", "B")]).closed())
    assert len(ch.vertices) == 3
    # A chosen forces B chosen, so (A, B*) is not a vertex
    assert (0, 1) not in ch


def test_dual_rejects_invalid():
    with pytest.raises(InvalidPocset):
        dual_complex(Pocset(["A", "B"], [(0, 2)]))


@pytest.mark.parametrize("n", range(1, 9))
def test_cube_and_chain_counts(n):
    assert len(dual_complex(cube(n)).vertices) == 2 ** n
    assert len(dual_complex(chain(n)).vertices) == n + 1


def test_dual_equals_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(30):
        p = random_pocset(rng, int(rng.integers(1, 10)))
        cc = dual_complex(p)
        assert cc.vertices == brute_vertices(p)
        assert cc.dimension == width(p)


def test_median_examples():
    sq = dual_complex(cube(2))
    a, c = (0, 0), (1, 1)
    assert median(sq, a, a, c) == a
    assert median(sq, (0, 0), (1, 0), (0, 1)) == (0, 0)
    with pytest.raises(VertexNotInComplex):
        median(sq, (0, 0), (0, 0), (2, 2))


def test_median_is_interval_intersection():
    rng = np.random.default_rng(5)
    cc = dual_complex(random_pocset(rng, 8))

    def interval(u, v):
        return {w for w in cc.vertices
                if distance(cc, u, w) + distance(cc, w, v) == distance(cc, u, v)}

    V = cc.vertices
    for _ in range(50):
        a, b, c = (V[int(i)] for i in rng.integers(len(V), size=3))
        common = interval(a, b) & interval(a, c) & interval(b, c)
        assert common == {median(cc, a, b, c)}


def test_distance_examples():
    sq = dual_complex(cube(2))
    assert distance(sq, (0, 1), (0, 1), "L1") == distance(sq, (0, 1), (0, 1), "LInf") == 0
    assert distance(sq, (0, 0), (1, 1), "L1") == 2
    assert distance(sq, (0, 0), (1, 1), "LInf") == 1
    ch = dual_complex(chain(3))
    a, b = ch.vertices[0], ch.vertices[-1]
    assert distance(ch, a, b, "L1") == 3 and distance(ch, a, b, "LInf") == 3


def test_delete_hyperplanes():
    sq = dual_complex(cube(2))
    same, m = delete_hyperplanes(sq, [])
    assert all(m(v) == v for v in sq.vertices)
    edge, m = delete_hyperplanes(sq, [0])
    assert len(edge.vertices) == 2
    assert {m(v) for v in sq.vertices} == set(edge.vertices)
    ch = dual_complex(chain(3))
    path, m = delete_hyperplanes(ch, ["c1"])
    assert len(ch.vertices) == 4 and len(path.vertices) == 3
    imgs = [m(v) for v in ch.vertices]
    assert len(set(imgs)) == 3
    with pytest.raises(UnknownHyperplane):
        delete_hyperplanes(sq, ["nope"])


def test_delete_composes_and_nonexpanding():
    rng = np.random.default_rng(3)
    cc = dual_complex(random_pocset(rng, 7))
    c1, m1 = delete_hyperplanes(cc, [1])
    c2, m2 = delete_hyperplanes(c1, [3])
    c3, m3 = delete_hyperplanes(cc, [1, 4])
    assert c2.vertices == c3.vertices
    for v in cc.vertices:
        assert m2(m1(v)) == m3(v)
    for u, v in itertools.combinations(cc.vertices, 2):
        assert distance(c3, m3(u), m3(v)) <= distance(cc, u, v)


def test_halfspace_isomorphism():
    sq = dual_complex(cube(2))
    ident = {h: h for h in range(4)}
    res = check_halfspace_isomorphism(sq, sq, ident)
    assert res.ok and all(res.vertex_map[v] == v for v in sq.vertices)
    swap = {0: 2, 1: 3, 2: 0, 3: 1}
    res = check_halfspace_isomorphism(sq, sq, swap)
    assert res.ok and res.vertex_map[(0, 1)] == (1, 0)
    ch = dual_complex(chain(2))
    for perm in itertools.permutations(range(2)):
        for flips in itertools.product((0, 1), repeat=2):
            bij = {}
            for i in range(2):
                bij[2 * i] = 2 * perm[i] + flips[i]
                bij[2 * i + 1] = 2 * perm[i] + 1 - flips[i]
            assert not check_halfspace_isomorphism(sq, ch, bij).ok


def test_transversality_graph_is_complement_of_comparability():
    p = chain(4)
    assert transversality_graph(p).number_of_edges() == 0
    assert transversality_graph(cube(4)).number_of_edges() == 6


def test_pocset_json_roundtrip():
    p = random_pocset(np.random.default_rng(11), 6)
    q = Pocset.from_json(p.to_json())
    assert q.walls == p.walls and q.order == p.order
