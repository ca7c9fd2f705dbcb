"""Finite pocsets, their dual cube complexes, medians and hyperplane deletion.

Half-spaces are encoded as integers: wall ``i`` owns half-spaces ``2*i`` (the
"positive" side, written ``w``) and ``2*i + 1`` (its complement ``w*``).  A
vertex of the dual complex is a tuple of bits, one per wall, where bit 0 means
the ultrafilter contains ``2*i`` and bit 1 means it contains ``2*i + 1``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import networkx as nx

WIDTH_CAP = 24


class InvalidPocset(ValueError):
    pass


class VertexNotInComplex(KeyError):
    pass


class UnknownHyperplane(KeyError):
    pass


class NotBijective(ValueError):
    pass


def star(h: int) -> int:
    return h ^ 1


@dataclass
class ValidationReport:
    ok: bool
    violations: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


class Pocset:
    """Finite pocset over named walls.

    ``order`` is a set of pairs ``(A, B)`` of half-space integers meaning
    ``A < B``.  The constructor stores the declared relation as given; use
    :meth:`closed` for the order-reversal/transitive closure.
    """

    def __init__(self, walls, order=()):
        self.walls = tuple(walls)
        if len(set(self.walls)) != len(self.walls):
            raise InvalidPocset("duplicate wall ids")
        self.order = frozenset((int(a), int(b)) for a, b in order)
        n2 = 2 * len(self.walls)
        for a, b in self.order:
            if not (0 <= a < n2 and 0 <= b < n2):
                raise InvalidPocset(f"half-space out of range in {(a, b)}")

    @property
    def n(self):
        return len(self.walls)

    def name(self, h: int) -> str:
        w = str(self.walls[h >> 1])
        return w + "*" if h & 1 else w

    def parse(self, s: str) -> int:
        s = str(s)
        starred = s.endswith("*")
        base = s[:-1] if starred else s
        for i, w in enumerate(self.walls):
            if str(w) == base:
                return 2 * i + (1 if starred else 0)
        raise UnknownHyperplane(s)

    @classmethod
    def from_names(cls, walls, order):
        p = cls(walls)
        return cls(walls, [(p.parse(a), p.parse(b)) for a, b in order])

    def closed(self) -> "Pocset":
        """Close the declared relation under reversal and transitivity."""
        g = nx.DiGraph()
        g.add_nodes_from(range(2 * self.n))
        for a, b in self.order:
            g.add_edge(a, b)
            g.add_edge(star(b), star(a))
        tc = nx.transitive_closure_dag(g) if nx.is_directed_acyclic_graph(g) else nx.transitive_closure(g, reflexive=False)
        return Pocset(self.walls, tc.edges())

    @cached_property
    def _up(self):
        # up[h] = set of half-spaces strictly above h
        up = [set() for _ in range(2 * self.n)]
        for a, b in self.order:
            up[a].add(b)
        return [frozenset(s) for s in up]

    def less(self, a: int, b: int) -> bool:
        return (a, b) in self.order

    def comparable(self, a, b):
        return (a, b) in self.order or (b, a) in self.order

    def transverse(self, i: int, j: int) -> bool:
        """Walls i and j are transverse when no half-spaces are comparable."""
        if i == j:
            return False
        for a in (2 * i, 2 * i + 1):
            for b in (2 * j, 2 * j + 1):
                if self.comparable(a, b):
                    return False
        return True

    def to_json(self):
        return {
            "walls": [{"id": w} for w in self.walls],
            "order": [[self.name(a), self.name(b)] for a, b in sorted(self.order)],
        }

    @classmethod
    def from_json(cls, doc):
        return cls.from_names([w["id"] for w in doc["walls"]], doc.get("order", []))

    def restrict(self, keep) -> "Pocset":
        """Sub-pocset on the walls with indices in ``keep`` (order kept)."""
        keep = sorted(keep)
        pos = {w: k for k, w in enumerate(keep)}
        order = []
        for a, b in self.order:
            if a >> 1 in pos and b >> 1 in pos:
                order.append((2 * pos[a >> 1] + (a & 1), 2 * pos[b >> 1] + (b & 1)))
        return Pocset([self.walls[i] for i in keep], order)


def transversality_graph(p: Pocset) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(range(p.n))
    for i, j in itertools.combinations(range(p.n), 2):
        if p.transverse(i, j):
            g.add_edge(i, j)
    return g


def width(p: Pocset) -> int:
    """Size of a largest pairwise-transverse wall set (exact)."""
    if p.n == 0:
        return 0
    if p.n > WIDTH_CAP:
        raise InvalidPocset(f"width computation capped at {WIDTH_CAP} walls, got {p.n}")
    g = transversality_graph(p)
    return max(len(c) for c in nx.find_cliques(g))


def validate_pocset(p: Pocset) -> ValidationReport:
    v = []
    for a, b in sorted(p.order):
        if a == b:
            v.append(f"irreflexive({p.name(a)})")
        elif a == star(b):
            v.append(f"incomparable({p.name(a)},{p.name(b)})")
    for a, b in sorted(p.order):
        if a != b and (star(b), star(a)) not in p.order:
            v.append(f"order-reversal({p.name(a)},{p.name(b)})")
    up = p._up
    for a, b in sorted(p.order):
        for c in sorted(up[b]):
            if (a, c) not in p.order:
                v.append(f"transitivity({p.name(a)},{p.name(b)},{p.name(c)})")
    rep = ValidationReport(ok=not v, violations=v)
    if not v:
        rep.info["width"] = width(p)
    rep.info["dcc"] = "vacuous (finite)"
    return rep


def consistent(p: Pocset, bits) -> bool:
    """Ultrafilter test: A chosen and A < B forces B chosen."""
    for a, b in p.order:
        if bits[a >> 1] == (a & 1) and bits[b >> 1] != (b & 1):
            return False
    return True


def enumerate_ultrafilters(p: Pocset) -> list:
    """All consistent orientations, by backtracking with forward propagation."""
    n = p.n
    up = p._up
    out = []
    bits = [-1] * n

    def assign(h, trail):
        i, s = h >> 1, h & 1
        if bits[i] == s:
            return True
        if bits[i] != -1:
            return False
        bits[i] = s
        trail.append(i)
        for g in up[h]:
            if not assign(g, trail):
                return False
        return True

    def rec(i):
        while i < n and bits[i] != -1:
            i += 1
        if i == n:
            out.append(tuple(bits))
            return
        for s in (0, 1):
            trail = []
            if assign(2 * i + s, trail):
                rec(i + 1)
            for j in trail:
                bits[j] = -1

    rec(0)
    out.sort()
    return out


class CubeComplex:
    """Dual cube complex of a finite pocset, vertices as bit tuples."""

    def __init__(self, pocset: Pocset, vertices):
        self.pocset = pocset
        self.vertices = sorted(set(tuple(v) for v in vertices))
        self.index = {v: k for k, v in enumerate(self.vertices)}

    @property
    def n_walls(self):
        return self.pocset.n

    def __contains__(self, v):
        return tuple(v) in self.index

    def check(self, *vs):
        for v in vs:
            if tuple(v) not in self.index:
                raise VertexNotInComplex(v)

    @cached_property
    def edges(self):
        es = []
        for v in self.vertices:
            for i in range(self.n_walls):
                if v[i] == 0:
                    w = v[:i] + (1,) + v[i + 1:]
                    if w in self.index:
                        es.append((self.index[v], self.index[w]))
        return es

    @cached_property
    def hyperplanes(self):
        """Per wall: (vertex indices on side ``w``, on side ``w*``)."""
        hs = []
        for i in range(self.n_walls):
            side0 = frozenset(k for k, v in enumerate(self.vertices) if v[i] == 0)
            side1 = frozenset(range(len(self.vertices))) - side0
            hs.append((side0, side1))
        return hs

    def halfspace(self, h: int) -> frozenset:
        return self.hyperplanes[h >> 1][h & 1]

    @cached_property
    def dimension(self):
        return width(self.pocset)

    def cubes_at(self, v):
        """Maximal sets of walls adjacent to v that span a cube at v."""
        self.check(v)
        adj = []
        for i in range(self.n_walls):
            w = list(v)
            w[i] ^= 1
            if tuple(w) in self.index:
                adj.append(i)
        g = nx.Graph()
        g.add_nodes_from(adj)
        for i, j in itertools.combinations(adj, 2):
            if self.pocset.transverse(i, j):
                g.add_edge(i, j)
        return [frozenset(c) for c in nx.find_cliques(g)] if adj else [frozenset()]

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(len(self.vertices)))
        g.add_edges_from(self.edges)
        return g


def dual_complex(p: Pocset) -> CubeComplex:
    rep = validate_pocset(p)
    if not rep.ok:
        raise InvalidPocset("; ".join(rep.violations))
    return CubeComplex(p, enumerate_ultrafilters(p))


def median(cc: CubeComplex, a, b, c):
    cc.check(a, b, c)
    m = tuple(1 if x + y + z >= 2 else 0 for x, y, z in zip(a, b, c))
    if m not in cc.index:
        raise VertexNotInComplex(m)
    return m


def separating(a, b):
    return [i for i, (x, y) in enumerate(zip(a, b)) if x != y]


def longest_chain(p: Pocset, a, walls) -> int:
    """Longest <-chain among ``walls``, oriented by the half-spaces holding a."""
    hs = [2 * i + a[i] for i in walls]
    if not hs:
        return 0
    memo = {}

    def longest_from(h):
        if h in memo:
            return memo[h]
        best = 1
        for g in hs:
            if p.less(g, h):
                best = max(best, 1 + longest_from(g))
        memo[h] = best
        return best

    return max(longest_from(h) for h in hs)


def distance(cc: CubeComplex, a, b, metric="L1") -> int:
    cc.check(a, b)
    sep = separating(a, b)
    if metric.upper() == "L1":
        return len(sep)
    if metric.upper() in ("LINF", "L_INF"):
        return longest_chain(cc.pocset, a, sep)
    raise ValueError(f"unknown metric {metric}")


@dataclass
class VertexMap:
    source: CubeComplex
    target: CubeComplex
    keep: tuple

    def __call__(self, v):
        return tuple(v[i] for i in self.keep)


def delete_hyperplanes(cc: CubeComplex, walls) -> tuple:
    """Restriction quotient forgetting ``walls`` (wall indices or ids)."""
    idx = set()
    for w in walls:
        if isinstance(w, int) and 0 <= w < cc.n_walls:
            idx.add(w)
        elif w in cc.pocset.walls:
            idx.add(cc.pocset.walls.index(w))
        else:
            raise UnknownHyperplane(w)
    keep = tuple(i for i in range(cc.n_walls) if i not in idx)
    sub = cc.pocset.restrict(keep)
    img = {tuple(v[i] for i in keep) for v in cc.vertices}
    target = CubeComplex(sub, img)
    return target, VertexMap(cc, target, keep)


@dataclass
class IsomorphismResult:
    ok: bool
    vertex_map: dict | None = None
    violation: tuple | None = None


def check_halfspace_isomorphism(a: CubeComplex, b: CubeComplex, bij: dict) -> IsomorphismResult:
    """Check that a half-space bijection preserves complements and disjointness.

    ``bij`` maps half-space integers of ``a`` to half-space integers of ``b``.
    """
    n2a, n2b = 2 * a.n_walls, 2 * b.n_walls
    if set(bij) != set(range(n2a)) or sorted(bij.values()) != list(range(n2b)):
        raise NotBijective("half-space map is not a bijection")
    for h in range(n2a):
        if bij[star(h)] != star(bij[h]):
            return IsomorphismResult(False, violation=("complement", h))
    for g, h in itertools.combinations(range(n2a), 2):
        da = not (a.halfspace(g) & a.halfspace(h))
        db = not (b.halfspace(bij[g]) & b.halfspace(bij[h]))
        if da != db:
            return IsomorphismResult(False, violation=("disjointness", g, h))
    vmap = {}
    for v in a.vertices:
        w = [None] * b.n_walls
        for i, s in enumerate(v):
            h = bij[2 * i + s]
            w[h >> 1] = h & 1
        w = tuple(w)
        if w not in b.index:
            return IsomorphismResult(False, violation=("vertex", v))
        vmap[v] = w
    if len(set(vmap.values())) != len(b.vertices):
        return IsomorphismResult(False, violation=("vertex-count",))
    eb = {frozenset(e) for e in b.edges}
    for i, j in a.edges:
        e = frozenset((b.index[vmap[a.vertices[i]]], b.index[vmap[a.vertices[j]]]))
        if e not in eb:
            return IsomorphismResult(False, violation=("edge", a.vertices[i], a.vertices[j]))
    if len(a.edges) != len(b.edges):
        return IsomorphismResult(False, violation=("edge-count",))
    return IsomorphismResult(True, vertex_map=vmap)


def random_pocset(rng, n_walls, density=0.3, max_tries=50) -> Pocset:
    """Random pocset by closing random relations; retries on contradictions."""
    for _ in range(max_tries):
        rel = []
        for i, j in itertools.combinations(range(n_walls), 2):
            if rng.random() < density:
                a = 2 * i + int(rng.integers(2))
                b = 2 * j + int(rng.integers(2))
                rel.append((a, b) if rng.random() < 0.5 else (b, a))
        p = Pocset([f"h{i}" for i in range(n_walls)], rel).closed()
        if validate_pocset(p).ok:
            return p
    return Pocset([f"h{i}" for i in range(n_walls)])


def hull_complex(cc: CubeComplex, a, b) -> tuple:
    """Hull sub-pocset of the walls separating a and b, with images of a, b."""
    sep = separating(a, b)
    sub = cc.pocset.restrict(sep)
    hc = dual_complex(sub)
    return hc, tuple(a[i] for i in sep), tuple(b[i] for i in sep)
