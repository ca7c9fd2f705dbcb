import itertools

import numpy as np
import pytest

from stablecube.hfi_cubulator import (
    HFI,
    ConditionViolated,
    InadmissibleSetup,
    InvalidHFI,
    NotAGeodesic,
    NotInQ,
    SimplicialTrimmingSetup,
    brute_force_q,
    build_q_complex,
    induce_isomorphism,
    projection_is_geodesic,
    q_median,
    random_hfi,
    random_trim_setup,
    trim_hfi,
    validate_hfi,
    walk_is_monotone,
)
from stablecube.normal_paths import nr_path
from stablecube.wallspace_core import dual_complex, median, width


def under_top(lengths, orth=(), trans=(), cluster=None):
    """Family whose domains all sit at the single point of a top domain S."""
    nest = {(U, "S") for U in lengths}
    cl = {(U, "S"): 0 for U in lengths}
    cl.update(cluster or {})
    return HFI(["S", *lengths], nest, {frozenset(p) for p in orth},
               {frozenset(p) for p in trans}, {"S": 0, **lengths}, cl)


GRID = under_top({"U": 2, "V": 3}, orth=[("U", "V")])
ELL = under_top({"U": 2, "V": 2}, trans=[("U", "V")], cluster={("V", "U"): 0, ("U", "V"): 2})


def path_of(Q):
    R = Q.realized
    p = nr_path(R, Q.bits(Q.xhat), Q.bits(Q.yhat))
    out = []
    for v in p.vertices:
        x = [0] * len(Q.hfi.domains)
        for (U, _), bit in zip(Q.walls, v):
            x[Q.hfi.domains.index(U)] += bit
        out.append(tuple(x))
    return out


def test_validate_examples():
    one = HFI(["U"], set(), set(), set(), {"U": 4}, {})
    assert validate_hfi(one).ok
    bad = under_top({"U": 2, "V": 3}, orth=[("U", "V")], trans=[("U", "V")])
    rep = validate_hfi(bad)
    assert not rep.ok and "trichotomy(U,V)" in rep.violations
    with pytest.raises(InvalidHFI):
        build_q_complex(bad)


def test_q_examples():
    Q = build_q_complex(HFI(["U"], set(), set(), set(), {"U": 4}, {}))
    assert len(Q.vertices) == 5
    Q = build_q_complex(GRID)
    assert len(Q.vertices) == 12
    assert Q.xhat == (0, 0, 0) and Q.yhat == (0, 2, 3)
    Q = build_q_complex(ELL)
    assert len(Q.vertices) == 5
    assert all(q[1] == 0 or q[2] == 2 for q in Q.vertices)


def test_median_examples():
    assert q_median(GRID, (0, 1, 1), (0, 1, 1), (0, 2, 3)) == (0, 1, 1)
    assert q_median(GRID, (0, 0, 0), (0, 2, 0), (0, 0, 3)) == (0, 0, 0)
    Q = build_q_complex(ELL)
    R = Q.realized
    for p, q, r in itertools.product(Q.vertices, repeat=3):
        assert Q.bits(q_median(ELL, p, q, r)) == median(R, Q.bits(p), Q.bits(q), Q.bits(r))
    with pytest.raises(NotInQ):
        q_median(ELL, (0, 1, 1), (0, 0, 0), (0, 2, 2))


def test_q_matches_oracle_on_random_families():
    rng = np.random.default_rng(0)
    for _ in range(30):
        h = random_hfi(rng, int(rng.integers(2, 7)), 5)
        assert validate_hfi(h).ok
        Q = build_q_complex(h)
        assert Q.vertices == brute_force_q(h)
        # realized complex: one wall per crossed factor edge, vertices biject with Q
        R = Q.realized
        assert len(R.vertices) == len(Q.vertices)
        assert R.vertices == sorted(Q.bits(q) for q in Q.vertices)
        assert dual_complex(R.pocset).vertices == R.vertices
        crossed = set()
        for q in Q.vertices:
            for k, U in enumerate(h.domains):
                nxt = q[:k] + (q[k] + 1,) + q[k + 1:]
                if nxt in Q:
                    crossed.add((U, q[k]))
        assert len(Q.walls) == len(set(Q.walls)) and set(Q.walls) == crossed


def test_median_closure_random():
    rng = np.random.default_rng(1)
    for _ in range(10):
        h = random_hfi(rng, 4, 3)
        Q = build_q_complex(h)
        V = Q.vertices
        for _ in range(100):
            p, q, r = (V[int(i)] for i in rng.integers(len(V), size=3))
            assert q_median(h, p, q, r) in Q


def test_trim_empty_setup():
    r = trim_hfi(GRID, SimplicialTrimmingSetup({}, 1))
    assert r.deleted == 0
    assert all(r.delta(q) == q and r.xi(q) == q for q in r.Q.vertices)


def test_trim_grid():
    r = trim_hfi(GRID, SimplicialTrimmingSetup({"V": [(1, 2)]}, 2))
    assert len(r.Qp.vertices) == 9 and r.deleted == 1
    assert r.hfi.lengths == {"S": 0, "U": 2, "V": 2}
    assert all(r.delta(r.xi(q)) == q for q in r.Qp.vertices)


def test_trim_nested_section_is_first_consistent_preimage():
    h = HFI(["V", "U"], {("U", "V")}, set(), set(), {"V": 4, "U": 2}, {("U", "V"): 2})
    r = trim_hfi(h, SimplicialTrimmingSetup({"V": [(2, 3)]}, 2))
    Q = r.Q
    for qp in r.Qp.vertices:
        pre = sorted(q for q in Q.vertices if r.delta(q) == qp)
        assert pre and r.xi(qp) == pre[0]


def test_trim_inadmissible():
    with pytest.raises(InadmissibleSetup):
        trim_hfi(GRID, SimplicialTrimmingSetup({"V": [(0, 3)]}, 2))
    with pytest.raises(InadmissibleSetup):
        trim_hfi(GRID, SimplicialTrimmingSetup({"U": [(0, 1)], "V": [(0, 1)]}, 2))
    with pytest.raises(InadmissibleSetup):
        trim_hfi(GRID, SimplicialTrimmingSetup({"S": []}, 2, drop=frozenset({"S"})))


def test_trim_random():
    rng = np.random.default_rng(2)
    for _ in range(40):
        h = random_hfi(rng, 5, 5)
        st = random_trim_setup(rng, h)
        r = trim_hfi(h, st)
        assert all(r.delta(r.xi(q)) == q for q in r.Qp.vertices)
        assert r.deleted <= st.B ** 2 and r.distortion <= st.B ** 2


def test_isomorphism_examples():
    ident = {U: tuple(range(GRID.lengths[U] + 1)) for U in GRID.domains}
    iso = induce_isomorphism(GRID, GRID, ident)
    assert iso.certified and all(iso(q) == q for q in build_q_complex(GRID).vertices)
    copy = under_top({"U": 2, "V": 2}, trans=[("U", "V")], cluster={("V", "U"): 0, ("U", "V"): 2})
    iso = induce_isomorphism(ELL, copy, {"S": (0,), "U": (0, 1, 2), "V": (0, 1, 2)})
    assert iso.certified and len(iso.table) == 5
    with pytest.raises(ConditionViolated) as e:
        induce_isomorphism(GRID, GRID, {"S": (0,), "U": (2, 1, 0), "V": (0, 1, 2, 3)})
    assert e.value.item == 1


def test_isomorphism_of_mirror_family():
    # swapping the order of two transverse domains reverses both intervals
    mirror = under_top({"U": 2, "V": 2}, trans=[("U", "V")], cluster={("V", "U"): 2, ("U", "V"): 0})
    with pytest.raises(ConditionViolated):
        induce_isomorphism(ELL, mirror, {"S": (0,), "U": (0, 1, 2), "V": (0, 1, 2)})


def test_projection_examples():
    Q = build_q_complex(GRID)
    assert projection_is_geodesic(Q, [(0, 1, 1)] * 3, "U")
    p = path_of(Q)
    assert projection_is_geodesic(Q, p, "U") and projection_is_geodesic(Q, p, "V")
    assert not walk_is_monotone([(0, 0, 0), (0, 1, 0), (0, 0, 0)], 1)
    with pytest.raises(NotAGeodesic):
        projection_is_geodesic(Q, [(0, 0, 0), (0, 1, 0), (0, 0, 0)], "U")


def test_projections_monotone_random():
    rng = np.random.default_rng(5)
    for _ in range(20):
        h = random_hfi(rng, 5, 4)
        Q = build_q_complex(h)
        p = path_of(Q)
        assert all(projection_is_geodesic(Q, p, U) for U in h.domains)


def test_dimension_bounded_by_orthogonal_cliques():
    rng = np.random.default_rng(7)
    for _ in range(10):
        h = random_hfi(rng, 5, 3)
        Q = build_q_complex(h)
        if Q.walls:
            assert width(Q.realized.pocset) <= len(h.domains)
