"""Hierarchical families of intervals and their 0-consistent cube complexes."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .wallspace_core import (
    CubeComplex,
    Pocset,
    ValidationReport,
    check_halfspace_isomorphism,
)


class InvalidHFI(ValueError):
    pass


class OracleMismatch(AssertionError):
    pass


class NotInQ(ValueError):
    pass


class InadmissibleSetup(ValueError):
    pass


class SectionFailure(RuntimeError):
    def __init__(self, vertex, witness=None):
        super().__init__(f"no 0-consistent preimage of {vertex}: {witness}")
        self.vertex, self.witness = vertex, witness


class ConditionViolated(ValueError):
    def __init__(self, domain, item, detail=""):
        super().__init__(f"domain {domain} violates condition {item} {detail}")
        self.domain, self.item = domain, item


class NotAGeodesic(ValueError):
    pass


@dataclass
class HFI:
    """Index set, relations, interval lengths, cluster points and projection maps.

    ``nest`` holds pairs (V, U) with V properly nested in U.  ``orth`` and
    ``trans`` hold frozensets {U, V}.  ``cluster[(V, U)]`` is the vertex of
    T_U labelled by V.  ``maps[(U, V)]`` for V nested in U lists, for each
    vertex of T_U, the image vertex in T_V or ``None`` where the image is the
    whole interval.
    """
    domains: list
    nest: set
    orth: set
    trans: set
    lengths: dict
    cluster: dict
    maps: dict = field(default_factory=dict)

    def __post_init__(self):
        self.domains = list(self.domains)
        if not self.maps:
            self.maps = default_maps(self)

    def rel(self, U, V):
        if (U, V) in self.nest:
            return "nested_in"
        if (V, U) in self.nest:
            return "contains"
        if frozenset((U, V)) in self.orth:
            return "orth"
        if frozenset((U, V)) in self.trans:
            return "trans"
        return None

    @cached_property
    def order(self):
        """Domains sorted by nesting height (top first) then id."""
        def height(U):
            return sum(1 for (V, W) in self.nest if V == U)
        return sorted(self.domains, key=lambda U: (height(U), str(U)))

    @cached_property
    def constraints(self):
        """List of (U, V, kind) over unordered pairs that carry a rule."""
        out = []
        for U, V in itertools.combinations(self.domains, 2):
            r = self.rel(U, V)
            if r == "trans":
                out.append((U, V, "trans"))
            elif r == "nested_in":
                out.append((V, U, "nest"))  # (big, small)
            elif r == "contains":
                out.append((U, V, "nest"))
        return out

    def pair_ok(self, big, small, kind, xb, xs) -> bool:
        if kind == "trans":
            return xb == self.cluster[(small, big)] or xs == self.cluster[(big, small)]
        if xb == self.cluster[(small, big)]:
            return True
        m = self.maps[(big, small)][xb]
        return m is None or m == xs

    def consistent(self, x: dict) -> bool:
        return all(self.pair_ok(U, V, k, x[U], x[V]) for U, V, k in self.constraints)

    def to_json(self):
        return {
            "domains": [str(U) for U in self.domains],
            "nest": sorted([str(V), str(U)] for V, U in self.nest),
            "orth": sorted(sorted(str(u) for u in p) for p in self.orth),
            "trans": sorted(sorted(str(u) for u in p) for p in self.trans),
            "lengths": {str(U): n for U, n in self.lengths.items()},
            "cluster": sorted([str(V), str(U), c] for (V, U), c in self.cluster.items()),
        }


def default_maps(h: HFI) -> dict:
    """Step maps determined by cluster points: below -> x-hat, above -> y-hat."""
    maps = {}
    for V, U in h.nest:
        c = h.cluster[(V, U)]
        nv = h.lengths[V]
        maps[(U, V)] = tuple(0 if x < c else (nv if x > c else None)
                             for x in range(h.lengths[U] + 1))
    return maps


def validate_hfi(h: HFI) -> ValidationReport:
    v = []
    D = h.domains
    if len(set(D)) != len(D):
        v.append("duplicate domains")
    for U in D:
        if (U, U) in h.nest:
            v.append(f"nest-reflexive({U})")
    for U, V in itertools.combinations(D, 2):
        rs = [(U, V) in h.nest, (V, U) in h.nest, frozenset((U, V)) in h.orth,
              frozenset((U, V)) in h.trans]
        if sum(rs) != 1:
            v.append(f"trichotomy({U},{V})")
    for (A, B), (C, E) in itertools.product(h.nest, h.nest):
        if B == C and A != E and (A, E) not in h.nest:
            v.append(f"nest-transitivity({A},{B},{E})")
    maximal = [U for U in D if not any(W == U for W, _ in h.nest)]
    top = [U for U in maximal if all((V, U) in h.nest for V in D if V != U)]
    if len(top) != 1:
        v.append(f"unique-maximal({maximal})")
    # orthogonal clique bound
    import networkx as nx
    og = nx.Graph()
    og.add_nodes_from(D)
    og.add_edges_from(tuple(p) for p in h.orth)
    ortho_clique = max((len(c) for c in nx.find_cliques(og)), default=0)
    for U in D:
        n = h.lengths.get(U)
        if not isinstance(n, (int, np.integer)) or n < 0:
            v.append(f"interval({U})")
    for U, V in itertools.permutations(D, 2):
        r = h.rel(V, U)
        if r in ("nested_in", "trans"):
            c = h.cluster.get((V, U))
            if c is None or not 0 <= c <= h.lengths[U]:
                v.append(f"cluster-point({V},{U})")
    for V, U in h.nest:
        m = h.maps.get((U, V))
        nU, nV = h.lengths[U], h.lengths[V]
        if m is None or len(m) != nU + 1:
            v.append(f"map-missing({U},{V})")
            continue
        c = h.cluster[(V, U)]
        for f, fV in ((0, 0), (nU, nV)):
            if m[f] is not None and m[f] != fV:
                v.append(f"map-consistency({U},{V},{f})")
        for x in range(nU + 1):
            if x == c:
                continue
            side = 0 if x < c else nV
            if m[x] != side:
                v.append(f"BGI({U},{V},{x})")
                break
    for U in D:
        below = [V for V in D if (V, U) in h.nest]
        for V, W in itertools.permutations(below, 2):
            if frozenset((V, W)) in h.trans and h.cluster[(V, U)] != h.cluster[(W, U)]:
                img = h.maps[(U, V)][h.cluster[(W, U)]]
                if img != h.cluster[(W, V)]:
                    v.append(f"delta-control({U},{V},{W})")
    rep = ValidationReport(ok=not v, violations=v)
    rep.info["orthogonal_clique"] = ortho_clique
    return rep


# Q enumeration -------------------------------------------------------------

def enumerate_q(h: HFI, candidates: dict | None = None) -> list:
    """All 0-consistent tuples (in ``h.domains`` order) by forward checking."""
    order = h.order
    pos = {U: k for k, U in enumerate(h.domains)}
    cons = {U: [] for U in order}
    rank = {U: k for k, U in enumerate(order)}
    for U, V, kind in h.constraints:
        later = U if rank[U] > rank[V] else V
        cons[later].append((U, V, kind))
    cand = {U: (list(range(h.lengths[U] + 1)) if candidates is None or U not in candidates
                else list(candidates[U])) for U in order}
    out = []
    x = {}

    def rec(k):
        if k == len(order):
            out.append(tuple(x[U] for U in h.domains))
            return
        U = order[k]
        for val in cand[U]:
            x[U] = val
            if all(h.pair_ok(A, B, kind, x[A], x[B]) for A, B, kind in cons[U]):
                rec(k + 1)
        x.pop(U, None)

    rec(0)
    out.sort()
    return out


def brute_force_q(h: HFI) -> list:
    ranges = [range(h.lengths[U] + 1) for U in h.domains]
    out = []
    for t in itertools.product(*ranges):
        if h.consistent(dict(zip(h.domains, t))):
            out.append(t)
    return out


@dataclass
class QComplex:
    hfi: HFI
    vertices: list
    index: dict
    xhat: tuple
    yhat: tuple
    walls: list  # (domain, k) for the factor edge [k, k+1]

    def as_dict(self, q):
        return dict(zip(self.hfi.domains, q))

    def __contains__(self, q):
        return tuple(q) in self.index

    def d(self, u, v) -> int:
        return int(sum(abs(a - b) for a, b in zip(u, v)))

    def bits(self, q):
        out = []
        for U, k in self.walls:
            out.append(1 if q[self.hfi.domains.index(U)] > k else 0)
        return tuple(out)

    @cached_property
    def array(self):
        return np.array(self.vertices, dtype=np.int64).reshape(len(self.vertices), len(self.hfi.domains))

    @cached_property
    def realized(self) -> CubeComplex:
        """Q as a wallspace over factor edges; half-space order is inclusion."""
        W = len(self.walls)
        di = {U: k for k, U in enumerate(self.hfi.domains)}
        sides = []
        for U, k in self.walls:
            s0 = 0
            for n, q in enumerate(self.vertices):
                if q[di[U]] <= k:
                    s0 |= 1 << n
            sides.append(s0)
        full = (1 << len(self.vertices)) - 1
        hs = []
        for s0 in sides:
            hs += [s0, full & ~s0]
        order = []
        for a, b in itertools.permutations(range(2 * W), 2):
            if a >> 1 == b >> 1:
                continue
            if hs[a] & ~hs[b] == 0 and hs[a] != hs[b]:
                order.append((a, b))
        p = Pocset([f"{U}:{k}" for U, k in self.walls], order)
        return CubeComplex(p, [self.bits(q) for q in self.vertices])

    def graph_distances(self):
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import shortest_path
        rows, cols = [], []
        for n, q in enumerate(self.vertices):
            for k in range(len(q)):
                r = list(q)
                r[k] += 1
                m = self.index.get(tuple(r))
                if m is not None:
                    rows += [n, m]
                    cols += [m, n]
        N = len(self.vertices)
        mat = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, N))
        return shortest_path(mat, unweighted=True, directed=False)


def build_q_complex(h: HFI, oracle_cap=50000) -> QComplex:
    rep = validate_hfi(h)
    if not rep.ok:
        raise InvalidHFI("; ".join(rep.violations[:5]))
    verts = enumerate_q(h)
    size = 1
    for U in h.domains:
        size *= h.lengths[U] + 1
    if size <= oracle_cap and brute_force_q(h) != verts:
        raise OracleMismatch("forward-checking enumeration disagrees with brute force")
    index = {q: k for k, q in enumerate(verts)}
    xhat = tuple(0 for _ in h.domains)
    yhat = tuple(h.lengths[U] for U in h.domains)
    assert xhat in index and yhat in index, "marked tuples must be 0-consistent"
    walls = [(U, k) for U in h.domains for k in range(h.lengths[U])]
    return QComplex(h, verts, index, xhat, yhat, walls)


def q_median(h: HFI, p, q, r, Q: QComplex | None = None):
    for t in (p, q, r):
        if Q is not None and tuple(t) not in Q.index:
            raise NotInQ(t)
        if Q is None and not h.consistent(dict(zip(h.domains, t))):
            raise NotInQ(t)
    m = tuple(sorted(z)[1] for z in zip(p, q, r))
    if not h.consistent(dict(zip(h.domains, m))):
        raise AssertionError(f"median {m} is not 0-consistent")
    return m


def crossed_walls(Q: QComplex) -> list:
    A = Q.array
    out = []
    for U, k in Q.walls:
        col = A[:, Q.hfi.domains.index(U)]
        if (col <= k).any() and (col > k).any():
            out.append((U, k))
    return out


# trimming ------------------------------------------------------------------

@dataclass
class SimplicialTrimmingSetup:
    segments: dict  # domain -> list of (lo, hi)
    B: int
    drop: frozenset | None = None  # explicit drop list; default: fully cut domains

    @property
    def count(self):
        return sum(len(s) for s in self.segments.values())

    def total(self):
        return sum(hi - lo for s in self.segments.values() for lo, hi in s)


def minimal_budget(segments: dict) -> int:
    segs = [hi - lo for s in segments.values() for lo, hi in s]
    if not segs:
        return 1
    return max(len(segs) + 1, max(segs))


def random_trim_setup(rng, h: HFI, p=0.4) -> SimplicialTrimmingSetup:
    """At most one random segment per domain, with the smallest admissible budget."""
    segs = {}
    for U in h.domains:
        if rng.random() < p and h.lengths[U] >= 1:
            lo = int(rng.integers(0, h.lengths[U]))
            hi = int(rng.integers(lo + 1, h.lengths[U] + 1))
            segs[U] = [(lo, hi)]
    return SimplicialTrimmingSetup(segs, minimal_budget(segs))


def check_setup(h: HFI, st: SimplicialTrimmingSetup):
    if st.count >= st.B and st.count > 0:
        raise InadmissibleSetup(f"{st.count} segments, budget {st.B}")
    for U, segs in st.segments.items():
        if U not in h.lengths:
            raise InadmissibleSetup(f"unknown domain {U}")
        prev = -1
        for lo, hi in sorted(segs):
            if not (0 <= lo < hi <= h.lengths[U]):
                raise InadmissibleSetup(f"segment {(lo, hi)} of {U}")
            if hi - lo > st.B:
                raise InadmissibleSetup(f"segment {(lo, hi)} longer than B")
            if lo < prev:
                raise InadmissibleSetup(f"overlapping segments in {U}")
            prev = hi


@dataclass
class CollapseMap:
    src: HFI
    dst: HFI
    segments: dict
    dropped: list

    def coord(self, U, x):
        return x - sum(min(max(x - lo, 0), hi - lo) for lo, hi in self.segments.get(U, []))

    def __call__(self, q):
        d = dict(zip(self.src.domains, q))
        return tuple(self.coord(U, d[U]) for U in self.dst.domains)

    def preimage(self, U, y):
        return [x for x in range(self.src.lengths[U] + 1) if self.coord(U, x) == y]


@dataclass
class Section:
    table: dict

    def __call__(self, q):
        return self.table[tuple(q)]


@dataclass
class TrimResult:
    hfi: HFI
    Q: QComplex
    Qp: QComplex
    delta: CollapseMap
    xi: Section
    deleted: int
    distortion: int
    dropped: list
    dropped_diam: dict


def trim_hfi(h: HFI, setup: SimplicialTrimmingSetup, Q: QComplex | None = None) -> TrimResult:
    check_setup(h, setup)
    if Q is None:
        Q = build_q_complex(h)
    segs = {U: sorted(s) for U, s in setup.segments.items() if s}
    newlen = {}
    dropped = []
    tops = {U for U in h.domains if not any(W == U for W, _ in h.nest)}
    for U in h.domains:
        n = h.lengths[U]
        cut = sum(hi - lo for lo, hi in segs.get(U, []))
        if setup.drop is not None:
            if U in setup.drop:
                if cut != n or U in tops:
                    raise InadmissibleSetup(f"cannot drop {U}: not fully cut or maximal")
                dropped.append(U)
            else:
                newlen[U] = n - cut
            continue
        # the maximal domain stays, possibly as a point
        if n > 0 and cut == n and U not in tops:
            dropped.append(U)
        else:
            newlen[U] = n - cut
    keep = [U for U in h.domains if U not in dropped]
    tmp = CollapseMap(h, None, segs, dropped)
    nest = {(V, U) for V, U in h.nest if V in newlen and U in newlen}
    orth = {p for p in h.orth if p <= set(keep)}
    trans = {p for p in h.trans if p <= set(keep)}
    cluster = {(V, U): tmp.coord(U, c) for (V, U), c in h.cluster.items()
               if V in newlen and U in newlen}
    h2 = HFI(keep, nest, orth, trans, newlen, cluster)
    # transported maps must agree with the maps rebuilt from cluster points
    for V, U in nest:
        for y in range(newlen[U] + 1):
            pre = tmp.preimage(U, y)
            vals = {h.maps[(U, V)][x] for x in pre}
            if None in vals:
                img = None
            else:
                img = {tmp.coord(V, v) for v in vals}
                img = img.pop() if len(img) == 1 else "multi"
            if img != h2.maps[(U, V)][y] and img is not None:
                raise InvalidHFI(f"trimmed map ill-defined on {U}->{V} at {y}")
    rep = validate_hfi(h2)
    if not rep.ok:
        raise InvalidHFI("trimmed family: " + "; ".join(rep.violations[:5]))
    delta = CollapseMap(h, h2, segs, dropped)
    Qp = build_q_complex(h2)
    imgs = {delta(q) for q in Q.vertices}
    if imgs != set(Qp.vertices):
        raise AssertionError("collapse map is not onto Q'")
    xi = Section({qp: section_point(h, delta, qp) for qp in Qp.vertices})
    for qp in Qp.vertices:
        if delta(xi(qp)) != qp:
            raise SectionFailure(qp, "collapse of section differs")
    deleted = sum(hi - lo for s in segs.values() for lo, hi in s)
    if deleted > setup.B ** 2:
        raise AssertionError(f"deleted {deleted} > B^2")
    distortion = max_distortion(Q, delta)
    if distortion > setup.B ** 2:
        raise AssertionError(f"distortion {distortion} > B^2")
    return TrimResult(h2, Q, Qp, delta, xi, deleted, distortion, dropped,
                      {U: h.lengths[U] for U in dropped})


def section_point(h: HFI, delta: CollapseMap, qp):
    """First 0-consistent preimage in canonical order (minimal values first)."""
    d = dict(zip(delta.dst.domains, qp))
    cand = {}
    for U in h.domains:
        if U in d:
            cand[U] = delta.preimage(U, d[U])
        else:
            cand[U] = list(range(h.lengths[U] + 1))
    sols = _first_solution(h, cand)
    if sols is None:
        raise SectionFailure(qp)
    return sols


def _first_solution(h: HFI, cand):
    order = h.order
    rank = {U: k for k, U in enumerate(order)}
    cons = {U: [] for U in order}
    for U, V, kind in h.constraints:
        later = U if rank[U] > rank[V] else V
        cons[later].append((U, V, kind))
    x = {}

    def rec(k):
        if k == len(order):
            return True
        U = order[k]
        for val in cand[U]:
            x[U] = val
            if all(h.pair_ok(A, B, kind, x[A], x[B]) for A, B, kind in cons[U]):
                if rec(k + 1):
                    return True
        x.pop(U, None)
        return False

    if rec(0):
        return tuple(x[U] for U in h.domains)
    return None


def max_distortion(Q: QComplex, delta: CollapseMap, chunk=512) -> int:
    A = Q.array
    Bm = np.array([delta(q) for q in Q.vertices], dtype=np.int64).reshape(len(Q.vertices), -1)
    worst = 0
    for i in range(0, len(A), chunk):
        da = np.abs(A[i:i + chunk, None, :] - A[None, :, :]).sum(-1)
        db = np.abs(Bm[i:i + chunk, None, :] - Bm[None, :, :]).sum(-1)
        worst = max(worst, int(np.abs(da - db).max()))
    return worst


# isomorphisms --------------------------------------------------------------

@dataclass
class CubicalIsomorphism:
    table: dict
    certified: bool

    def __call__(self, q):
        return self.table[tuple(q)]


def induce_isomorphism(hA: HFI, hB: HFI, maps: dict, QA=None, QB=None) -> CubicalIsomorphism:
    if set(hA.domains) != set(hB.domains) or hA.nest != hB.nest or hA.orth != hB.orth \
            or hA.trans != hB.trans:
        raise InvalidHFI("index sets or relations differ")
    for U in hA.domains:
        f = maps[U]
        nA, nB = hA.lengths[U], hB.lengths[U]
        if nA != nB or len(f) != nA + 1:
            raise ConditionViolated(U, 1, "lengths differ")
        if f[0] != 0 or f[nA] != nB:
            raise ConditionViolated(U, 1)
        if any(abs(f[x + 1] - f[x]) != 1 for x in range(nA)):
            raise ConditionViolated(U, 1, "not an isometry")
    for (V, U), c in hA.cluster.items():
        if maps[U][c] != hB.cluster[(V, U)]:
            raise ConditionViolated(U, 2, f"cluster point of {V}")
    for V, U in hA.nest:
        mA, mB = hA.maps[(U, V)], hB.maps[(U, V)]
        for x in range(hA.lengths[U] + 1):
            a = mA[x]
            b = mB[maps[U][x]]
            if (a is None) != (b is None) or (a is not None and maps[V][a] != b):
                raise ConditionViolated(U, 3, f"map to {V} at {x}")
    QA = QA or build_q_complex(hA)
    QB = QB or build_q_complex(hB)
    idxB = [hB.domains.index(U) for U in hA.domains]
    table = {}
    for q in QA.vertices:
        img = [None] * len(hB.domains)
        for k, U in enumerate(hA.domains):
            img[idxB[k]] = maps[U][q[k]]
        img = tuple(img)
        if img not in QB.index:
            raise ConditionViolated("*", 0, f"image {img} not in Q'")
        table[q] = img
    if len(set(table.values())) != len(QB.vertices):
        raise ConditionViolated("*", 0, "not a bijection")
    # half-space bijection: wall (U,k) goes to the wall between the images
    wB = {w: n for n, w in enumerate(QB.walls)}
    bij = {}
    for n, (U, k) in enumerate(QA.walls):
        lo, hi = maps[U][k], maps[U][k + 1]
        m = wB[(U, min(lo, hi))]
        flip = 0 if hi > lo else 1
        bij[2 * n] = 2 * m + flip
        bij[2 * n + 1] = 2 * m + (1 - flip)
    res = check_halfspace_isomorphism(QA.realized, QB.realized, bij)
    return CubicalIsomorphism(table, res.ok)


def projection_is_geodesic(Q: QComplex, path, U) -> bool:
    path = [tuple(p) for p in path]
    for p in path:
        if p not in Q.index:
            raise NotAGeodesic(f"{p} not in Q")
    tot = sum(Q.d(a, b) for a, b in zip(path, path[1:]))
    if path and tot != Q.d(path[0], path[-1]):
        raise NotAGeodesic("path length exceeds endpoint distance")
    k = Q.hfi.domains.index(U)
    xs = [p[k] for p in path]
    inc = all(a <= b for a, b in zip(xs, xs[1:]))
    dec = all(a >= b for a, b in zip(xs, xs[1:]))
    return inc or dec


def walk_is_monotone(path, k) -> bool:
    xs = [p[k] for p in path]
    return all(a <= b for a, b in zip(xs, xs[1:])) or all(a >= b for a, b in zip(xs, xs[1:]))


# generator -----------------------------------------------------------------

def random_hfi(rng, n_domains=5, max_len=5, p_orth=0.3) -> HFI:
    """Tree-nesting HFI: children sit at cluster points of their parent.

    Transverse relations are inherited from the branch children at the lowest
    common ancestor; siblings are ordered by cluster point so that the
    delta-control item holds.
    """
    names = ["S"] + [f"D{i}" for i in range(1, n_domains)]
    parent = {"S": None}
    for i, U in enumerate(names[1:], start=1):
        parent[U] = names[int(rng.integers(i))]
    lengths = {U: int(rng.integers(1, max_len + 1)) for U in names}
    children = {U: [V for V in names if parent[V] == U] for U in names}

    def ancestors(U):
        out = []
        while parent[U] is not None:
            U = parent[U]
            out.append(U)
        return out

    where = {}
    sib_rel = {}
    for U in names:
        kids = children[U]
        for V in kids:
            where[V] = int(rng.integers(0, lengths[U] + 1))
        for V, W in itertools.combinations(kids, 2):
            if where[V] == where[W] and rng.random() < p_orth:
                sib_rel[frozenset((V, W))] = "orth"
            else:
                sib_rel[frozenset((V, W))] = "trans"
        # ordering of transverse siblings: by position, ties by name
    nest, orth, trans, cluster = set(), set(), set(), {}
    for U in names:
        for A in ancestors(U):
            nest.add((U, A))
    for V, W in itertools.combinations(names, 2):
        if (V, W) in nest or (W, V) in nest:
            continue
        aV, aW = [V] + ancestors(V), [W] + ancestors(W)
        lca = next(x for x in aV if x in aW)
        cV = aV[aV.index(lca) - 1]
        cW = aW[aW.index(lca) - 1]
        r = sib_rel[frozenset((cV, cW))]
        if r == "orth":
            orth.add(frozenset((V, W)))
        else:
            trans.add(frozenset((V, W)))
            first, second = (V, W) if (where[cV], cV) < (where[cW], cW) else (W, V)
            cluster[(second, first)] = lengths[first]
            cluster[(first, second)] = 0
    for V, U in nest:
        chain = [V] + ancestors(V)
        child = chain[chain.index(U) - 1]
        cluster[(V, U)] = where[child]
    return HFI(names, nest, orth, trans, lengths, cluster)
