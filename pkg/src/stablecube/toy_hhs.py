"""Finite synthetic hierarchically hyperbolic instances built from trees.

Each domain U carries a tree C(U): a spine 0..l_U (entry 0, exit l_U) with
short pendant branches.  Domains form a nesting tree under S.  A child V of U
sits at a spine vertex of C(U), which is rho^V_U for V and all of its
descendants.  The downward maps send the entry side (and branches hanging at
that vertex) to entry_V, the exit side to exit_V, and the vertex itself to all
of C(V).  Transverse pairs V before W get rho^W_V = exit_V, rho^V_W = entry_W.

X is the set of exactly consistent tuples (theta = 0) with the graph metric in
which an edge changes one coordinate by one tree edge.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .hfi_cubulator import HFI, QComplex, validate_hfi
from .hyperbolic_graph import (
    HypGraph,
    PointTooFar,
    build_setup,
    closest_positions,
    thicken,
    thicken_segments,
)
from .stable_decomposition import interval_for
from .wallspace_core import ValidationReport


class InconsistentPoint(ValueError):
    pass


class SetupInadmissible(ValueError):
    def __init__(self, domain, detail=""):
        super().__init__(f"setup for {domain} inadmissible: {detail}")
        self.domain = domain


class ThickeningCollision(ValueError):
    def __init__(self, domain, detail=""):
        super().__init__(f"thickening collision in {domain}: {detail}")
        self.domain = domain


class NotInHull(ValueError):
    pass


class HoningFailure(AssertionError):
    pass


# constants -----------------------------------------------------------------

@dataclass
class ConstantLedger:
    values: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)

    @classmethod
    def defaults(cls, r1=1, r2=2, E_S=0, n_domains=1, depth=1):
        led = cls()
        K0 = 2 * r1 + r2
        for k, v in dict(E_S=E_S, theta=E_S, kappa=E_S, eps=1, eps_prime=0, E=2, r1=r1, r2=r2,
                         K0=K0, K=max(K0 + 1, 8 * r1 + 4 * r2 + 8 * E_S), R=E_S,
                         N0=2 + 2 * depth, colors=n_domains).items():
            led.configure(k, v)
        return led

    def configure(self, name, value):
        self.values[name] = value
        self.tags[name] = "configured"

    def measure(self, name, value, source=""):
        self.values[name] = value
        self.tags[name] = "measured"
        self.sources[name] = source

    def __getitem__(self, k):
        return self.values[k]

    def get(self, k, default=None):
        return self.values.get(k, default)

    def check(self) -> list:
        v = []
        c = self.values
        if not c["K"] > c["K0"]:
            v.append(f"K={c['K']} <= K0={c['K0']}")
        if c["r1"] < 1 or c["r2"] < 1:
            v.append("r1, r2 must be positive")
        if c["E"] < 2 * c["eps"]:
            v.append("E below 2*eps")
        return v

    def to_json(self):
        return {k: {"value": _jsonable(self.values[k]), "tag": self.tags[k],
                    **({"source": self.sources[k]} if k in self.sources else {})}
                for k in sorted(self.values)}

    @classmethod
    def from_json(cls, doc):
        led = cls()
        for k, d in doc.items():
            led.values[k] = d["value"]
            led.tags[k] = d["tag"]
            if "source" in d:
                led.sources[k] = d["source"]
        return led

    def copy(self):
        return ConstantLedger(dict(self.values), dict(self.tags), dict(self.sources))


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


# instances -----------------------------------------------------------------

@dataclass
class DomainTree:
    spine: int
    branches: list  # (attach, length)
    graph: HypGraph = None
    gate: list = None

    def __post_init__(self):
        edges = [(i, i + 1) for i in range(self.spine)]
        gate = list(range(self.spine + 1))
        nxt = self.spine + 1
        for at, ln in self.branches:
            prev = at
            for _ in range(ln):
                edges.append((prev, nxt))
                gate.append(at)
                prev = nxt
                nxt += 1
        self.graph = HypGraph(nxt, edges)
        self.gate = gate

    @property
    def n(self):
        return self.graph.n

    @property
    def exit(self):
        return self.spine


@dataclass
class HHSInstance:
    domains: list  # S first
    parent: dict
    nest: set  # (V, U): V properly nested in U
    orth: set
    trans: set
    trees: dict  # U -> DomainTree
    rho_sets: dict  # (V, U) -> frozenset of vertices of C(U)
    rho_maps: dict  # (U, V) for V nested in U -> tuple over C(U) vertices of frozensets
    constants: ConstantLedger
    name: str = ""

    def __post_init__(self):
        self.index = {U: k for k, U in enumerate(self.domains)}
        self._cons = None

    @property
    def S(self):
        return self.domains[0]

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

    def depth(self, U):
        k = 0
        while self.parent[U] is not None:
            U = self.parent[U]
            k += 1
        return k

    def d(self, U, x, y):
        return int(self.trees[U].graph.dist[x, y])

    def coord(self, x, U):
        return x[self.index[U]]

    @property
    def order(self):
        return sorted(self.domains, key=lambda U: (self.depth(U), self.index[U]))

    def constraints(self):
        """(big-or-first, other, kind) over related pairs."""
        if self._cons is None:
            out = []
            for U, V in itertools.combinations(self.domains, 2):
                r = self.rel(U, V)
                if r == "trans":
                    out.append((U, V, "trans"))
                elif r == "nested_in":
                    out.append((V, U, "nest"))
                elif r == "contains":
                    out.append((U, V, "nest"))
            self._cons = out
        return self._cons

    def pair_ok(self, U, V, kind, xU, xV, theta=0) -> bool:
        if kind == "trans":
            dW = self._set_dist(V, xV, self.rho_sets[(U, V)])
            dV = self._set_dist(U, xU, self.rho_sets[(V, U)])
            return min(dW, dV) <= theta
        # V nested in U
        if self._set_dist(U, xU, self.rho_sets[(V, U)]) <= theta:
            return True
        img = self.rho_maps[(U, V)][xU]
        dist = self.trees[V].graph.dist
        diam = max(int(dist[xV, y]) for y in img)
        if len(img) > 1:
            arr = np.array(sorted(img))
            diam = max(diam, int(dist[np.ix_(arr, arr)].max()))
        return diam <= theta

    def _set_dist(self, U, x, S):
        dist = self.trees[U].graph.dist
        return min(int(dist[x, y]) for y in S)

    def consistent(self, x, theta=0) -> bool:
        if len(x) != len(self.domains) or any(
                not 0 <= v < self.trees[U].n for v, U in zip(x, self.domains)):
            return False
        return all(self.pair_ok(U, V, k, self.coord(x, U), self.coord(x, V), theta)
                   for U, V, k in self.constraints())

    def entry_point(self):
        return tuple(0 for _ in self.domains)

    def exit_point(self):
        return tuple(self.trees[U].exit for U in self.domains)

    def neighbors(self, x, theta=0):
        """X-neighbours: change one coordinate along one tree edge."""
        out = []
        for k, U in enumerate(self.domains):
            for y in self.trees[U].graph.adj[x[k]]:
                z = list(x)
                z[k] = int(y)
                z = tuple(z)
                if self.consistent(z, theta):
                    out.append(z)
        return sorted(out)

    def d_X(self, x, y) -> int:
        return int(sum(self.d(U, x[k], y[k]) for k, U in enumerate(self.domains)))

    # serialization
    def to_json(self):
        doms = []
        for U in self.domains:
            doms.append({"id": U, "parent": self.parent[U],
                         "relations": {V: self.rel(U, V) for V in self.domains if V != U}})
        trees = {U: {"vertices": t.n, "spine": t.spine, "branches": [list(b) for b in t.branches],
                     "edges": [list(e) for e in t.graph.edges]}
                 for U, t in self.trees.items()}
        rs = sorted([V, U, sorted(int(v) for v in S)] for (V, U), S in self.rho_sets.items())
        rm = sorted([U, V, [sorted(int(v) for v in s) for s in tab]]
                    for (U, V), tab in self.rho_maps.items())
        return {"name": self.name, "domains": doms, "trees": trees, "rho_sets": rs,
                "rho_maps": rm, "constants": self.constants.to_json()}

    @classmethod
    def from_json(cls, doc):
        domains = [d["id"] for d in doc["domains"]]
        parent = {d["id"]: d["parent"] for d in doc["domains"]}
        nest, orth, trans = set(), set(), set()
        for d in doc["domains"]:
            U = d["id"]
            for V, r in d["relations"].items():
                if r == "nested_in":
                    nest.add((U, V))
                elif r == "orth":
                    orth.add(frozenset((U, V)))
                elif r == "trans":
                    trans.add(frozenset((U, V)))
        trees = {U: DomainTree(t["spine"], [tuple(b) for b in t["branches"]])
                 for U, t in doc["trees"].items()}
        rho_sets = {(V, U): frozenset(S) for V, U, S in doc["rho_sets"]}
        rho_maps = {(U, V): tuple(frozenset(s) for s in tab) for U, V, tab in doc["rho_maps"]}
        return cls(domains, parent, nest, orth, trans, trees, rho_sets, rho_maps,
                   ConstantLedger.from_json(doc["constants"]), doc.get("name", ""))

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True, indent=1)


def _tree_relations(names, parent, where, sib_orth):
    """Relations inherited from the nesting tree; transverse order by position."""
    def chain(U):
        out = [U]
        while parent[out[-1]] is not None:
            out.append(parent[out[-1]])
        return out

    nest, orth, trans, first = set(), set(), set(), {}
    for U in names:
        for A in chain(U)[1:]:
            nest.add((U, A))
    for V, W in itertools.combinations(names, 2):
        if (V, W) in nest or (W, V) in nest:
            continue
        cV, cW = chain(V), chain(W)
        lca = next(x for x in cV if x in cW)
        bV, bW = cV[cV.index(lca) - 1], cW[cW.index(lca) - 1]
        if frozenset((bV, bW)) in sib_orth:
            orth.add(frozenset((V, W)))
        else:
            trans.add(frozenset((V, W)))
            first[frozenset((V, W))] = V if (where[bV], bV) < (where[bW], bW) else W
    return nest, orth, trans, first, chain


def assemble_instance(names, parent, trees, where, sib_orth, constants=None, name=""):
    """Build rho data from placements: ``where[V]`` is V's spine vertex in its parent."""
    nest, orth, trans, first, chain = _tree_relations(names, parent, where, sib_orth)
    rho_sets, rho_maps = {}, {}
    for V, U in nest:
        cV = chain(V)
        branch = cV[cV.index(U) - 1]
        c = where[branch]
        rho_sets[(V, U)] = frozenset([c])
        tU, tV = trees[U], trees[V]
        tab = []
        for x in range(tU.n):
            g = tU.gate[x]
            if x == c:
                tab.append(frozenset(range(tV.n)))
            elif g < c or g == c:
                tab.append(frozenset([0]))
            else:
                tab.append(frozenset([tV.exit]))
        rho_maps[(U, V)] = tuple(tab)
    for p in trans:
        V = first[p]
        (W,) = p - {V}
        rho_sets[(W, V)] = frozenset([trees[V].exit])
        rho_sets[(V, W)] = frozenset([0])
    depth = max(len(chain(U)) for U in names)
    if constants is None:
        constants = ConstantLedger.defaults(n_domains=len(names), depth=depth)
    return HHSInstance(list(names), dict(parent), nest, orth, trans, dict(trees), rho_sets,
                       rho_maps, constants, name)


def prod_instance() -> HHSInstance:
    """S with a one-vertex tree and two orthogonal children on paths of length 5 and 7."""
    trees = {"S": DomainTree(0, []), "U": DomainTree(5, []), "V": DomainTree(7, [])}
    parent = {"S": None, "U": "S", "V": "S"}
    led = ConstantLedger.defaults(n_domains=3, depth=2)
    led.configure("K", led["K0"] + 1)
    return assemble_instance(["S", "U", "V"], parent, trees, {"U": 0, "V": 0},
                             {frozenset(("U", "V"))}, constants=led, name="PROD")


def random_instance(rng, n_domains=None, spine=(5, 8), p_orth=0.3, max_tries=200) -> HHSInstance:
    """Seeded generator; rejects draws that fail validate_instance."""
    for _ in range(max_tries):
        n = int(rng.integers(2, 5)) if n_domains is None else n_domains
        names = ["S"] + [f"U{i}" for i in range(1, n)]
        parent = {"S": None}
        for i, U in enumerate(names[1:], start=1):
            parent[U] = names[int(rng.integers(i))]
        trees = {}
        for U in names:
            ln = int(rng.integers(spine[0], spine[1] + 1))
            br = []
            for _ in range(int(rng.integers(0, 3))):
                br.append((int(rng.integers(0, ln + 1)), int(rng.integers(1, 3))))
            trees[U] = DomainTree(ln, br)
        where = {}
        sib_orth = set()
        for U in names:
            kids = [V for V in names if parent[V] == U]
            ln = trees[U].spine
            for V in kids:
                where[V] = int(rng.integers(1, ln)) if ln >= 2 else 0
            for V, W in itertools.combinations(kids, 2):
                if rng.random() < p_orth:
                    where[W] = where[V]
                    sib_orth.add(frozenset((V, W)))
            # orthogonal siblings must share a vertex; re-sync chains of orth pairs
            for V, W in itertools.combinations(kids, 2):
                if frozenset((V, W)) in sib_orth:
                    where[W] = where[V]
        depth = max(_depth(parent, U) for U in names) + 1
        led = ConstantLedger.defaults(n_domains=len(names), depth=depth)
        # desk-scale trees: the relevance threshold sits just above K0
        led.configure("K", led["K0"] + 1)
        inst = assemble_instance(names, parent, trees, where, sib_orth, constants=led,
                                 name=f"gen{int(rng.integers(1 << 30))}")
        if validate_instance(inst).ok:
            return inst
    raise RuntimeError("generator failed to produce a valid instance")


def _depth(parent, U):
    k = 0
    while parent[U] is not None:
        U = parent[U]
        k += 1
    return k


def random_point(inst: HHSInstance, rng, start="entry", steps=3):
    x = inst.entry_point() if start == "entry" else inst.exit_point()
    for _ in range(steps):
        nb = inst.neighbors(x)
        if nb:
            x = nb[int(rng.integers(len(nb)))]
    return x


# validation ----------------------------------------------------------------

def _chromatic(nodes, bad_edges, limit=10):
    """Least k such that nodes split into k classes avoiding bad edges (exhaustive)."""
    nodes = list(nodes)
    if len(nodes) > limit:
        return None
    adj = {u: set() for u in nodes}
    for u, v in bad_edges:
        adj[u].add(v)
        adj[v].add(u)
    for k in range(1, len(nodes) + 1):
        col = {}

        def rec(i):
            if i == len(nodes):
                return True
            u = nodes[i]
            used = max(col.values(), default=-1)
            for c in range(min(k, used + 2)):
                if all(col.get(w) != c for w in adj[u]):
                    col[u] = c
                    if rec(i + 1):
                        return True
                    del col[u]
            return False

        if rec(0):
            return k
    return len(nodes)


def validate_instance(inst: HHSInstance) -> ValidationReport:
    v = []
    D = inst.domains
    E = inst.constants["E_S"]
    for U, V in itertools.combinations(D, 2):
        rs = [(U, V) in inst.nest, (V, U) in inst.nest, frozenset((U, V)) in inst.orth,
              frozenset((U, V)) in inst.trans]
        if sum(rs) != 1:
            v.append(f"trichotomy({U},{V})")
    for (A, B), (C, F) in itertools.product(inst.nest, inst.nest):
        if B == C and (A, F) not in inst.nest:
            v.append(f"nest-transitivity({A},{B},{F})")
    tops = [U for U in D if all((V, U) in inst.nest for V in D if V != U)]
    if tops != [inst.S]:
        v.append(f"unique-maximal({tops})")
    # orthogonality passes down nesting
    for (U, V), p in itertools.product(inst.nest, inst.orth):
        if V in p:
            (W,) = p - {V}
            if W != U and frozenset((U, W)) not in inst.orth:
                v.append(f"orth-inheritance({U},{V},{W})")
    # orthogonal containers, in the form: inside T, everything orthogonal to U
    # nested in T lies in one proper subdomain of T
    for T in D:
        inside = [U for U in D if (U, T) in inst.nest]
        for U in inside:
            ortho = [V for V in inside if frozenset((U, V)) in inst.orth]
            if ortho and not any(all(V == W or (V, W) in inst.nest for V in ortho)
                                 for W in inside):
                v.append(f"orthogonal-container({U} in {T})")
    # complexity: pairwise non-transverse families (exhaustive)
    g = nx.Graph()
    g.add_nodes_from(D)
    g.add_edges_from((U, V) for U, V in itertools.combinations(D, 2)
                     if frozenset((U, V)) not in inst.trans)
    xi = max(len(c) for c in nx.find_cliques(g))
    # rho sets
    for U, V in itertools.permutations(D, 2):
        r = inst.rel(V, U)
        if r in ("nested_in", "trans"):
            S = inst.rho_sets.get((V, U))
            if not S:
                v.append(f"rho-set-missing({V},{U})")
                continue
            arr = np.array(sorted(S))
            if int(inst.trees[U].graph.dist[np.ix_(arr, arr)].max()) > E:
                v.append(f"rho-diameter({V},{U})")
    for V, U in inst.nest:
        tab = inst.rho_maps.get((U, V))
        if tab is None or len(tab) != inst.trees[U].n:
            v.append(f"rho-map-missing({U},{V})")
    if v:
        return ValidationReport(False, v, {"complexity": xi})
    # BGIA: geodesics avoiding rho^V_U have image of diameter <= E
    for V, U in inst.nest:
        gU = inst.trees[U].graph
        S = inst.rho_sets[(V, U)]
        distV = inst.trees[V].graph.dist
        paths = dict(nx.all_pairs_shortest_path(gU.to_networkx()))
        bad = None
        for x in range(gU.n):
            for y in range(x, gU.n):
                path = paths[x][y]
                if min(min(int(gU.dist[p, s]) for s in S) for p in path) <= E:
                    continue
                img = sorted(set().union(*(inst.rho_maps[(U, V)][p] for p in path)))
                if int(distV[np.ix_(img, img)].max()) > E:
                    bad = (x, y)
                    break
            if bad:
                break
        if bad:
            v.append(f"BGIA({V},{U},{bad})")
    # compatibility of nested and transverse rho sets
    for (U, V), W in itertools.product(inst.nest, D):
        if W in (U, V):
            continue
        r = inst.rel(V, W)
        if (r == "nested_in" or r == "trans") and inst.rel(U, W) != "orth":
            if (U, W) in inst.rho_sets and (V, W) in inst.rho_sets:
                if inst.trees[W].graph.set_distance(inst.rho_sets[(U, W)],
                                                    inst.rho_sets[(V, W)]) > E:
                    v.append(f"rho-compatibility({U},{V},{W})")
    # rho control items; strict bounds read as <= when E is zero
    for W in D:
        below = [U for U in D if (U, W) in inst.nest]
        for U, V in itertools.combinations(below, 2):
            if inst.rel(U, V) != "trans":
                if inst.trees[W].graph.set_distance(inst.rho_sets[(U, W)],
                                                    inst.rho_sets[(V, W)]) > E:
                    v.append(f"rho-control-1({U},{V},{W})")
    for p in inst.trans:
        for U, V in itertools.permutations(tuple(p)):
            for W in D:
                if (W, V) in inst.nest and inst.rel(W, U) != "orth":
                    if inst.trees[U].graph.set_distance(inst.rho_sets[(V, U)],
                                                        inst.rho_sets[(W, U)]) > E:
                        v.append(f"rho-control-2({U},{V},{W})")
    # the two base points must be consistent
    for name, x in (("entry", inst.entry_point()), ("exit", inst.exit_point())):
        if not inst.consistent(x):
            v.append(f"{name}-point-inconsistent")
    # colorability: families must be pairwise transverse
    not_trans = [(U, V) for U, V in itertools.combinations(D, 2)
                 if frozenset((U, V)) not in inst.trans]
    greedy = nx.coloring.greedy_color(nx.Graph(not_trans) if not_trans else nx.empty_graph(D))
    for U in D:
        greedy.setdefault(U, 0)
    for U, V in not_trans:
        if greedy[U] == greedy[V]:
            v.append(f"coloring({U},{V})")
    exact = _chromatic(D, not_trans)
    big = [U for U in D if inst.trees[U].n > 1]
    exact_big = _chromatic(big, [(U, V) for U, V in not_trans if U in big and V in big])
    bound = inst.constants.get("colors", len(D))
    if exact is not None and exact > bound:
        v.append(f"colors({exact} > {bound})")
    info = {"complexity": xi, "greedy_colors": len(set(greedy.values())),
            "colors_all": exact, "colors": exact_big}
    return ValidationReport(not v, v, info)


# hulls and relevance ---------------------------------------------------------

def geodesic(inst, U, x, y) -> list:
    t = inst.trees[U].graph
    return nx.shortest_path(t.to_networkx(), x, y) if x != y else [x]


def enumerate_consistent(inst: HHSInstance, cand: dict, theta=0) -> list:
    order = inst.order
    rank = {U: k for k, U in enumerate(order)}
    cons = {U: [] for U in order}
    for U, V, kind in inst.constraints():
        later = U if rank[U] > rank[V] else V
        cons[later].append((U, V, kind))
    out, x = [], {}

    def rec(k):
        if k == len(order):
            out.append(tuple(x[U] for U in inst.domains))
            return
        U = order[k]
        for val in cand[U]:
            x[U] = val
            if all(inst.pair_ok(A, B, kind, x[A], x[B], theta) for A, B, kind in cons[U]):
                rec(k + 1)
        x.pop(U, None)

    rec(0)
    out.sort()
    return out


@dataclass
class Hull:
    inst: HHSInstance
    a: tuple
    b: tuple
    theta: int
    points: list
    paths: dict  # U -> geodesic vertex list from a_U to b_U

    @property
    def array(self):
        return np.array(self.points, dtype=np.int64).reshape(len(self.points), len(self.inst.domains))

    def __contains__(self, x):
        return tuple(x) in self._set

    def __len__(self):
        return len(self.points)

    def __post_init__(self):
        self._set = set(self.points)

    def gate(self, z):
        """Coordinatewise closest point on each hull_U, then the nearest hull point."""
        inst = self.inst
        target = []
        for k, U in enumerate(inst.domains):
            pos, _ = closest_positions(inst.trees[U].graph, self.paths[U], z[k])
            target.append(self.paths[U][pos[0]])
        if tuple(target) in self._set:
            return tuple(target)
        A = self.array
        cost = np.zeros(len(A), dtype=np.int64)
        for k, U in enumerate(inst.domains):
            cost += inst.trees[U].graph.dist[A[:, k], target[k]]
        return self.points[int(np.argmin(cost))]

    def graph_distances(self):
        """All-pairs distances in the hull graph (one coordinate, one tree edge)."""
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import shortest_path
        idx = {p: i for i, p in enumerate(self.points)}
        rows, cols = [], []
        for i, p in enumerate(self.points):
            for k, U in enumerate(self.inst.domains):
                for y in self.inst.trees[U].graph.adj[p[k]]:
                    q = p[:k] + (int(y),) + p[k + 1:]
                    j = idx.get(q)
                    if j is not None:
                        rows.append(i)
                        cols.append(j)
        N = len(self.points)
        m = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, N))
        return shortest_path(m, unweighted=True, directed=False)

    def l1_distances(self, idx=None):
        A = self.array if idx is None else self.array[idx]
        out = np.zeros((len(A), len(A)), dtype=np.int64)
        for k, U in enumerate(self.inst.domains):
            dist = self.inst.trees[U].graph.dist
            out += dist[np.ix_(A[:, k], A[:, k])]
        return out


def hull(inst: HHSInstance, a, b, theta=0) -> Hull:
    a, b = tuple(a), tuple(b)
    for p in (a, b):
        if not inst.consistent(p, theta):
            raise InconsistentPoint(p)
    paths, cand = {}, {}
    for k, U in enumerate(inst.domains):
        path = geodesic(inst, U, a[k], b[k])
        paths[U] = path
        if theta == 0:
            cand[U] = sorted(path)
        else:
            dl = inst.trees[U].graph.dset(path)
            cand[U] = [v for v in range(inst.trees[U].n) if dl[v] <= theta]
    return Hull(inst, a, b, theta, enumerate_consistent(inst, cand, theta), paths)


class RelevantSet(frozenset):
    audit: dict = {}


def relevant_domains(inst: HHSInstance, a, b, K) -> RelevantSet:
    if K <= 0:
        raise ValueError("K must be positive")
    dists = {U: inst.d(U, a[k], b[k]) for k, U in enumerate(inst.domains)}
    rel = RelevantSet(U for U in inst.domains if dists[U] >= K)
    N = max((sum(1 for V in rel if (U, V) in inst.nest) for U in rel), default=0)
    # bounding containers with K2 = K + 1: medium domains nest into large ones
    K2 = K + 1
    big = [U for U in inst.domains if dists[U] >= K2]
    medium = [U for U in rel if U not in big]
    orphans = [V for V in medium if not any((V, W) in inst.nest for W in big)]
    per = {W: sum(1 for V in medium if (V, W) in inst.nest) for W in big}
    rel.audit = {"distances": dists, "covering_N": N, "K2": K2, "orphans": sorted(orphans),
                 "container_counts": per}
    return rel


def passing_up_table(inst: HHSInstance, pairs, Ds) -> dict:
    """Largest relevant-set size at each threshold over the sampled pairs."""
    out = {}
    for D in Ds:
        out[D] = max((sum(1 for k, U in enumerate(inst.domains) if inst.d(U, x[k], y[k]) >= D)
                      for x, y in pairs), default=0)
    return out


# interval systems ------------------------------------------------------------

@dataclass
class DomainInterval:
    U: str
    setup: object
    T: object  # StableInterval
    Y: dict  # V -> vertex of C(U)


@dataclass
class IntervalSystem:
    inst: HHSInstance
    a: tuple
    b: tuple
    K: int
    relevant: frozenset
    domains: list  # relevant domains plus S, in instance order
    intervals: dict  # U -> DomainInterval for relevant U
    delta: dict  # (V, U) -> position in T_U
    checks: dict = field(default_factory=dict)

    def length(self, U):
        return self.intervals[U].T.length if U in self.intervals else 0

    def position(self, U, v):
        """Closest position of a vertex of C(U) on phi_U(T_U)."""
        T = self.intervals[U].T
        pos, _ = closest_positions(self.inst.trees[U].graph, T.phi, v)
        return pos[0]


def build_interval_system(inst: HHSInstance, a, b, K=None) -> IntervalSystem:
    c = inst.constants
    K = c["K"] if K is None else K
    if not K > c["K0"]:
        raise ValueError(f"K={K} must exceed K0={c['K0']}")
    rel = relevant_domains(inst, a, b, K)
    doms = [U for U in inst.domains if U in rel or U == inst.S]
    intervals = {}
    for U in inst.domains:
        if U not in rel:
            continue
        k = inst.index[U]
        Y = {V: min(inst.rho_sets[(V, U)]) for V in rel if (V, U) in inst.nest}
        try:
            s = build_setup(inst.trees[U].graph, a[k], b[k], set(Y.values()), c["eps"],
                            eps_prime=c["eps_prime"], E=c["E"])
        except PointTooFar as e:
            raise SetupInadmissible(U, str(e)) from e
        intervals[U] = DomainInterval(U, s, interval_for(s), Y)
    sysm = IntervalSystem(inst, tuple(a), tuple(b), K, rel, doms, intervals, {})
    for U, V in itertools.permutations(doms, 2):
        r = inst.rel(V, U)
        if r not in ("nested_in", "trans"):
            continue
        if U not in rel:
            sysm.delta[(V, U)] = 0
            continue
        v = min(inst.rho_sets[(V, U)])
        T = intervals[U].T
        if r == "nested_in":
            # closest point on the owning cluster component
            comp = T.mu(T.cluster_index_of(v))
            seg = T.phi[comp.start:comp.end + 1]
            pos, _ = closest_positions(inst.trees[U].graph, seg, v)
            sysm.delta[(V, U)] = comp.start + pos[0]
        else:
            sysm.delta[(V, U)] = sysm.position(U, v)
    sysm.checks = check_interval_system(sysm)
    return sysm


def check_interval_system(sysm: IntervalSystem) -> dict:
    """Interval axioms and interval control, measured; R_s is the worst offset."""
    inst = sysm.inst
    worst = 0
    bad = []
    for U, di in sysm.intervals.items():
        worst = max(worst, di.T.qi["hausdorff"], di.T.qi["endpoint_offset"])
    for (V, U), p in sysm.delta.items():
        if U not in sysm.intervals or V not in sysm.intervals:
            continue
        L = sysm.length(U)
        if inst.rel(V, U) == "trans":
            worst = max(worst, min(p, L - p))
        else:
            # interval BGI: each side of delta maps to the marked point on its side
            TU, TV = sysm.intervals[U].T, sysm.intervals[V].T
            blk = TU.mu(TU.cluster_index_of(min(inst.rho_sets[(V, U)])))
            for t in range(L + 1):
                if blk.start <= t <= blk.end:
                    continue
                img = inst.rho_maps[(U, V)][TU.phi[t]]
                if len(img) != 1:
                    bad.append((U, V, t))
                    continue
                q = sysm.position(V, next(iter(img)))
                want = 0 if t < p else TV.length
                if q != want:
                    worst = max(worst, abs(q - want))
    R = inst.constants["R"]
    return {"R_s": worst, "ok": worst <= R and not bad, "bgi_whole_images": bad}


# collapsing ------------------------------------------------------------------

@dataclass
class CollapsedSystem:
    system: IntervalSystem
    r1: int
    r2: int
    thick: dict  # U -> Thickening
    q: dict  # U -> list of collapsed positions
    lengths: dict
    cluster_vertices: dict  # U -> set of collapsed cluster vertices
    hfi: HFI
    checks: dict = field(default_factory=dict)

    @property
    def inst(self):
        return self.system.inst

    def block_of(self, U, t):
        for lo, hi in self.thick[U].cluster_blocks:
            if lo <= t <= hi:
                return (lo, hi)
        return None


def _collapse_map(th, length):
    return [sum(min(max(x - s, 0), e - s) for s, e in th.edge_blocks) for x in range(length + 1)]


def collapse_system(sysm: IntervalSystem, r1=None, r2=None) -> CollapsedSystem:
    inst = sysm.inst
    c = inst.constants
    r1 = c["r1"] if r1 is None else r1
    r2 = c["r2"] if r2 is None else r2
    thick, q, lengths, cverts = {}, {}, {}, {}
    for U in sysm.domains:
        if U not in sysm.intervals:
            thick[U] = None
            q[U] = [0]
            lengths[U] = 0
            cverts[U] = {0}
            continue
        T = sysm.intervals[U].T
        th = thicken(T, r1, r2)
        # thickening along delta points and marked points must agree
        pts = [(0, 0), (T.length, T.length)]
        pts += [(p, p) for (V, W), p in sysm.delta.items() if W == U and V in sysm.relevant]
        alt = thicken_segments(T.length, pts, r1, r2)
        if alt.cluster_blocks != th.cluster_blocks:
            raise ThickeningCollision(U, f"cluster blocks {th.cluster_blocks} vs {alt.cluster_blocks}")
        thick[U] = th
        q[U] = _collapse_map(th, T.length)
        lengths[U] = q[U][-1]
        cverts[U] = {q[U][lo] for lo, hi in th.cluster_blocks}
    cluster = {}
    for (V, U), p in sysm.delta.items():
        val = q[U][p]
        if inst.rel(V, U) == "trans":
            if val not in (0, lengths[U]):
                raise ThickeningCollision(U, f"transverse point of {V} at {val}")
        elif val not in cverts[U]:
            raise ThickeningCollision(U, f"nested point of {V} not at a cluster vertex")
        cluster[(V, U)] = val
    doms = list(sysm.domains)
    nest = {(V, U) for V, U in inst.nest if V in doms and U in doms}
    orth = {p for p in inst.orth if p <= set(doms)}
    trans = {p for p in inst.trans if p <= set(doms)}
    h = HFI(doms, nest, orth, trans, lengths, cluster)
    cs = CollapsedSystem(sysm, r1, r2, thick, q, lengths, cverts, h)
    cs.checks = check_collapsed_control(cs)
    return cs


def collapse_system_auto(sysm: IntervalSystem, r2=None, cap=None) -> CollapsedSystem:
    """Loop r1 upward until the endpoint conditions pass."""
    c = sysm.inst.constants
    cap = cap if cap is not None else max(8 * c["E_S"], c["r1"]) + 8
    last = None
    for r1 in range(c["r1"], cap + 1):
        try:
            return collapse_system(sysm, r1, r2)
        except ThickeningCollision as e:
            last = e
    raise last


def check_collapsed_control(cs: CollapsedSystem) -> dict:
    inst = cs.inst
    sysm = cs.system
    out = {}
    rep = validate_hfi(cs.hfi)
    out["hfi_valid"] = rep.ok
    out["hfi_violations"] = rep.violations
    nonexp = True
    for U, qq in cs.q.items():
        if any(abs(qq[i + 1] - qq[i]) > 1 for i in range(len(qq) - 1)):
            nonexp = False
    out["q_nonexpanding"] = nonexp
    # transported maps agree with the rho maps pushed through the collapse
    mism = []
    for V, U in cs.hfi.nest:
        if U not in sysm.intervals or V not in sysm.intervals:
            continue
        TU = sysm.intervals[U].T
        tab = cs.hfi.maps[(U, V)]
        for t in range(TU.length + 1):
            img = inst.rho_maps[(U, V)][TU.phi[t]]
            want = tab[cs.q[U][t]]
            if len(img) != 1 or want is None:
                continue
            got = cs.q[V][sysm.position(V, next(iter(img)))]
            if got != want:
                mism.append((U, V, t))
    out["map_mismatches"] = mism
    minimal = [U for U in sysm.relevant
               if not any((V, U) in inst.nest for V in sysm.relevant)]
    K = sysm.K
    slack = max((max(0, K - 2 * cs.r1 - cs.lengths[U]) for U in minimal), default=0)
    out["minimal_width_slack"] = slack
    out["ok"] = rep.ok and nonexp and not mism
    return out


def check_item9(cs: CollapsedSystem, Q: QComplex) -> list:
    """Domains whose coordinate is an edge point must be pairwise orthogonal."""
    bad = []
    doms = cs.hfi.domains
    for q in Q.vertices:
        edge = [U for U, x in zip(doms, q) if x not in cs.cluster_vertices[U]]
        for U, V in itertools.combinations(edge, 2):
            if frozenset((U, V)) not in cs.hfi.orth:
                bad.append((q, U, V))
                break
    return bad


# maps between hull and Q -----------------------------------------------------

def project_psi_hat(cs: CollapsedSystem, x, H: Hull | None = None) -> tuple:
    sysm = cs.system
    inst = cs.inst
    if H is not None and tuple(x) not in H:
        raise NotInHull(x)
    if H is None:
        if not inst.consistent(x):
            raise NotInHull(x)
        for U, di in sysm.intervals.items():
            if x[inst.index[U]] not in di.T.phi:
                raise NotInHull(x)
    out = []
    for U in cs.hfi.domains:
        if U in sysm.intervals:
            out.append(cs.q[U][sysm.position(U, x[inst.index[U]])])
        else:
            out.append(0)
    out = tuple(out)
    if not cs.hfi.consistent(dict(zip(cs.hfi.domains, out))):
        raise AssertionError(f"psi-hat image {out} not 0-consistent")
    return out


def hone_omega(cs: CollapsedSystem, q) -> dict:
    """Lift q to positions in the uncollapsed intervals."""
    h = cs.hfi
    inst = cs.inst
    sysm = cs.system
    qd = dict(zip(h.domains, q))
    if not h.consistent(qd):
        from .hfi_cubulator import NotInQ
        raise NotInQ(q)
    rel = sorted(sysm.relevant, key=lambda U: (-inst.depth(U), inst.index[U]))
    lift = {}
    for U in rel:
        L = sysm.length(U)
        pre = [t for t in range(L + 1) if cs.q[U][t] == qd[U]]
        if len(pre) == 1:
            lift[U] = pre[0]
            continue
        lo, hi = pre[0], pre[-1]
        inside = [V for V in sysm.relevant if (V, U) in inst.nest and lo <= sysm.delta[(V, U)] <= hi]
        minimal = [V for V in inside if not any((W, V) in inst.nest for W in inside)]
        B = set(range(lo, hi + 1))
        for V in minimal:
            d = sysm.delta[(V, U)]
            pv = lift[V]
            if pv == 0:
                C = set(range(lo, d + 1))
            elif pv == sysm.length(V):
                C = set(range(d, hi + 1))
            else:
                C = {d}
            B &= C
        if not B:
            raise HoningFailure(f"empty intersection in {U} for {q}")
        if max(B) - min(B) > hi - lo:
            raise HoningFailure("diameter bound")
        if 0 in B:
            lift[U] = 0
        elif L in B:
            lift[U] = L
        else:
            lift[U] = min(B)
    for U in rel:
        assert cs.q[U][lift[U]] == qd[U]
    return lift


def lift_omega_hat(cs: CollapsedSystem, q, H: Hull) -> tuple:
    lift = hone_omega(cs, q)
    inst = cs.inst
    sysm = cs.system
    A = H.array
    cost = np.zeros(len(A), dtype=np.int64)
    for U, t in lift.items():
        k = inst.index[U]
        v = sysm.intervals[U].T.phi[t]
        cost += inst.trees[U].graph.dist[A[:, k], v]
    return H.points[int(np.argmin(cost))]


def omega_table(cs: CollapsedSystem, Q: QComplex, H: Hull) -> dict:
    return {q: lift_omega_hat(cs, q, H) for q in Q.vertices}


# audits --------------------------------------------------------------------

@dataclass
class MetricAuditReport:
    n_points: int
    n_pairs: int
    zero_together: bool
    zero_bound: int
    fits: dict
    dx_is_l1: bool
    M0: int | None = None
    witnesses: list = field(default_factory=list)

    def to_json(self):
        return {"n_points": self.n_points, "n_pairs": self.n_pairs,
                "zero_together": self.zero_together, "zero_bound": self.zero_bound,
                "fits": self.fits, "dx_is_l1": self.dx_is_l1, "M0": self.M0}


def fit_constants(A, B, max_lam=50):
    """Smallest lam + c with A <= lam * B + c over the samples (lam >= 1)."""
    A = np.asarray(A, dtype=np.int64)
    B = np.asarray(B, dtype=np.int64)
    if A.size == 0:
        return {"lam": 1, "c": 0}
    best = None
    for lam in range(1, max_lam + 1):
        c = int(max(0, (A - lam * B).max()))
        if best is None or lam + c < best[0] + best[1]:
            best = (lam, c)
    return {"lam": best[0], "c": best[1]}


def audit_metrics(inst, a, b, cs: CollapsedSystem, H: Hull | None = None, Q=None,
                  cap=400, seed=0) -> MetricAuditReport:
    H = H if H is not None else hull(inst, a, b)
    N = len(H.points)
    idx = np.arange(N)
    if N > cap:
        idx = np.sort(np.random.default_rng(seed).choice(N, cap, replace=False))
    dX = H.l1_distances(idx)
    dx_is_l1 = True
    if N <= 3000:
        full = H.graph_distances()
        dx_is_l1 = bool(np.array_equal(full[np.ix_(idx, idx)].astype(np.int64), dX))
    K = cs.system.K
    A = H.array[idx]
    thr = np.zeros_like(dX)
    for k, U in enumerate(inst.domains):
        dd = inst.trees[U].graph.dist[np.ix_(A[:, k], A[:, k])].astype(np.int64)
        thr += np.where(dd >= K, dd, 0)
    P = np.array([project_psi_hat(cs, H.points[i], H) for i in idx], dtype=np.int64)
    P = P.reshape(len(idx), -1)
    dQ = np.abs(P[:, None, :] - P[None, :, :]).sum(-1)
    # a priori bound on d_X when the projections agree: cluster blocks in
    # relevant domains plus the full spread of the others
    zb = 0
    for k, U in enumerate(inst.domains):
        if U in cs.system.intervals:
            zb += max((hi - lo for lo, hi in cs.thick[U].cluster_blocks), default=0)
        else:
            zb += inst.d(U, a[k], b[k])
    z1 = bool(np.all(dQ[dX == 0] == 0))
    z2 = bool(np.all(dX[dQ == 0] <= zb))
    iu = np.triu_indices(len(idx), 1)
    fits = {
        "dX<=dQ": fit_constants(dX[iu], dQ[iu]),
        "dQ<=dX": fit_constants(dQ[iu], dX[iu]),
        "dX<=DF": fit_constants(dX[iu], thr[iu]),
        "DF<=dX": fit_constants(thr[iu], dX[iu]),
        "dQ<=DF": fit_constants(dQ[iu], thr[iu]),
        "DF<=dQ": fit_constants(thr[iu], dQ[iu]),
    }
    rep = MetricAuditReport(len(idx), len(iu[0]), z1 and z2, zb, fits, dx_is_l1)
    if Q is not None:
        m0 = 0
        for qv in Q.vertices:
            x = lift_omega_hat(cs, qv, H)
            m0 = max(m0, Q.d(project_psi_hat(cs, x, H), qv))
        rep.M0 = m0
    return rep
