"""Finite hyperbolic graphs, epsilon-setups, clusters, shadows and stable intervals.

Graphs have vertices ``0..n-1`` and unit edges.  All distances are integers.
Positions along an abstract interval are integers ``0..L``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

BRUTE_DELTA_CAP = 70


class Disconnected(ValueError):
    pass


class PointTooFar(ValueError):
    def __init__(self, y, d):
        super().__init__(f"point {y} at distance {d} from the base geodesic")
        self.y, self.d = y, d


class NotAnInterval(ValueError):
    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


class InsufficientMorseConstant(ValueError):
    pass


class HypGraph:
    def __init__(self, n: int, edges):
        self.n = int(n)
        self.edges = sorted({(min(u, v), max(u, v)) for u, v in edges if u != v})
        self.adj = [[] for _ in range(self.n)]
        for u, v in self.edges:
            self.adj[u].append(v)
            self.adj[v].append(u)
        for a in self.adj:
            a.sort()

    @classmethod
    def from_networkx(cls, g: nx.Graph):
        nodes = sorted(g.nodes())
        idx = {v: k for k, v in enumerate(nodes)}
        return cls(len(nodes), [(idx[u], idx[v]) for u, v in g.edges()])

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    @cached_property
    def dist(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros((0, 0), dtype=np.int32)
        rows = [u for u, v in self.edges] + [v for u, v in self.edges]
        cols = [v for u, v in self.edges] + [u for u, v in self.edges]
        m = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n, self.n))
        d = shortest_path(m, method="D", unweighted=True, directed=False)
        if np.isinf(d).any():
            raise Disconnected("graph is not connected")
        return d.astype(np.int32)

    def d(self, u, v) -> int:
        return int(self.dist[u, v])

    def dset(self, S) -> np.ndarray:
        """Distance from every vertex to the vertex set S."""
        return self.dist[sorted(S)].min(axis=0)

    def set_distance(self, A, B) -> int:
        return int(self.dist[np.ix_(sorted(A), sorted(B))].min())

    @cached_property
    def delta(self) -> int:
        return compute_delta(self)


def four_point_defect_max(d: np.ndarray) -> int:
    """Max over quadruples of (largest - second largest) of the three pair sums."""
    n = d.shape[0]
    best = 0
    if n < 4:
        return 0
    for x, y in itertools.combinations(range(n), 2):
        dxy = d[x, y]
        # s1 = d(x,y) + d(z,w); s2 = d(x,z) + d(y,w); s3 = d(x,w) + d(y,z)
        s1 = dxy + d
        s2 = d[x][:, None] + d[y][None, :]
        s3 = d[y][:, None] + d[x][None, :]
        st = np.sort(np.stack([s1, s2, s3]), axis=0)
        best = max(best, int((st[2] - st[1]).max()))
    return best


def compute_delta_brute(d: np.ndarray) -> int:
    """Halved four-point defect, rounded up, scanning every quadruple."""
    m = four_point_defect_max(np.asarray(d, dtype=np.int64))
    return (m + 1) // 2


def compute_delta(g: HypGraph) -> int:
    """Four-point hyperbolicity; exact, using that it is attained inside a block."""
    d = g.dist
    if g.n <= BRUTE_DELTA_CAP:
        return compute_delta_brute(d)
    best = 0
    for comp in nx.biconnected_components(g.to_networkx()):
        if len(comp) < 4:
            continue
        idx = sorted(comp)
        if len(idx) > 400:
            raise ValueError("block too large for exact hyperbolicity")
        best = max(best, compute_delta_brute(d[np.ix_(idx, idx)]))
    return best


def choose_geodesic(g: HypGraph, C, Cp) -> list:
    """Canonical geodesic between vertex sets, oriented from C to Cp.

    The lexicographically smaller set is the BFS source; the path steps to the
    smallest-index neighbour that gets closer.  Reversing the arguments gives
    the reversed vertex list, so the underlying set is symmetric.
    """
    C, Cp = tuple(sorted(set(C))), tuple(sorted(set(Cp)))
    if C > Cp:
        return list(reversed(choose_geodesic(g, Cp, C)))
    to_target = g.dset(Cp)
    dd = int(to_target[list(C)].min())
    start = min(c for c in C if to_target[c] == dd)
    path = [start]
    cur = start
    while to_target[cur] > 0:
        cur = min(v for v in g.adj[cur] if to_target[v] == to_target[cur] - 1)
        path.append(cur)
    return path


def closest_positions(g: HypGraph, path, y) -> tuple:
    """Positions along ``path`` at minimal distance from y, and that distance."""
    ds = g.dist[y, path]
    m = int(ds.min())
    pos = [i for i, x in enumerate(ds) if x == m]
    return pos, m


@dataclass
class EpsilonSetup:
    g: HypGraph
    a: int
    b: int
    Y: frozenset
    eps: int
    lam: list
    eps_prime: int
    morse_measured: int
    E: int

    def points(self):
        return sorted(set(self.Y) | {self.a, self.b})

    def with_points(self, Y=None, a=None, b=None, eps=None):
        return build_setup(self.g, self.a if a is None else a, self.b if b is None else b,
                           self.Y if Y is None else Y, self.eps if eps is None else eps,
                           eps_prime=self.eps_prime, E=self.E)

    def key(self):
        return (self.a, self.b, tuple(sorted(self.Y)), self.E, self.eps_prime)


def measure_morse(g: HypGraph, lam, pts) -> int:
    """Worst Hausdorff distance between chosen geodesics among points and the
    matching sub-segment of the base geodesic."""
    proj = {}
    for p in pts:
        pos, _ = closest_positions(g, lam, p)
        proj[p] = pos[0]
    worst = 0
    for p, q in itertools.combinations(pts, 2):
        gam = choose_geodesic(g, [p], [q])
        i, j = sorted((proj[p], proj[q]))
        seg = lam[i:j + 1]
        sub = g.dist[np.ix_(gam, seg)]
        worst = max(worst, int(sub.min(axis=1).max()), int(sub.min(axis=0).max()))
    return worst


def default_E(eps: int) -> int:
    return 56 * eps + 1


def build_setup(g: HypGraph, a, b, Y, eps, eps_prime=None, check_morse=False, E=None) -> EpsilonSetup:
    for v in [a, b, *Y]:
        if not 0 <= v < g.n:
            raise ValueError(f"vertex {v} not in graph")
    lam = choose_geodesic(g, [a], [b])
    dl = g.dset(lam)
    for y in sorted(Y):
        if 2 * int(dl[y]) >= eps:
            raise PointTooFar(y, int(dl[y]))
    if eps_prime is None:
        eps_prime = eps + 8 * g.delta + 1
    measured = measure_morse(g, lam, sorted(set(Y) | {a, b})) if check_morse else -1
    if check_morse and measured > eps_prime:
        raise InsufficientMorseConstant(f"measured {measured} > eps' = {eps_prime}")
    if E is None:
        E = default_E(eps)
    return EpsilonSetup(g, int(a), int(b), frozenset(int(y) for y in Y), int(eps), lam,
                        int(eps_prime), measured, int(E))


@dataclass
class ClusterPartition:
    E: int
    clusters: list  # list of sorted tuples
    shadows: list  # (lo, hi) positions along lam

    def cluster_of(self, v):
        for k, c in enumerate(self.clusters):
            if v in c:
                return k
        raise KeyError(v)


def build_clusters(s: EpsilonSetup, E: int | None = None) -> ClusterPartition:
    E = s.E if E is None else E
    if E <= 0:
        raise ValueError("E must be positive")
    pts = s.points()
    g = s.g
    cg = nx.Graph()
    cg.add_nodes_from(pts)
    for p, q in itertools.combinations(pts, 2):
        if g.d(p, q) < E:
            cg.add_edge(p, q)
    clusters = sorted(tuple(sorted(c)) for c in nx.connected_components(cg))
    shadows = []
    for c in clusters:
        pos = []
        for y in c:
            pos += closest_positions(g, s.lam, y)[0]
        shadows.append((min(pos), max(pos)))
    return ClusterPartition(E, clusters, shadows)


def separates(g: HypGraph, C1, C2, C3, radius) -> bool:
    d1, d3 = g.dset(C1), g.dset(C3)
    tot = int(d1[list(C3)].min())
    on_geo = np.nonzero(d1 + d3 == tot)[0]
    return int(g.dset(C2)[on_geo].min()) <= radius


@dataclass
class ClusterSepGraph:
    partition: ClusterPartition
    order: list  # cluster indices from the a-end to the b-end
    edges: list


def cluster_separation_graph(s: EpsilonSetup, E: int | None = None, eps_prime=None) -> ClusterSepGraph:
    part = build_clusters(s, E)
    if eps_prime is None:
        eps_prime = s.eps_prime
    k = len(part.clusters)
    g = s.g
    radius = 2 * eps_prime
    sep = {}
    for i, j in itertools.combinations(range(k), 2):
        sep[(i, j)] = [m for m in range(k) if m not in (i, j)
                       and separates(g, part.clusters[i], part.clusters[m], part.clusters[j], radius)]
    edges = [(i, j) for (i, j), ms in sep.items() if not ms]
    ia, ib = part.cluster_of(s.a), part.cluster_of(s.b)
    if k == 1:
        return ClusterSepGraph(part, [0], [])
    gg = nx.Graph()
    gg.add_nodes_from(range(k))
    gg.add_edges_from(edges)
    degs = dict(gg.degree())
    if not nx.is_connected(gg) or gg.number_of_edges() != k - 1 or max(degs.values()) > 2:
        raise NotAnInterval("cluster separation graph is not a path", witness={"edges": edges})
    order = nx.shortest_path(gg, ia, ib)
    if len(order) != k:
        raise NotAnInterval("endpoint clusters are not the ends of the path",
                            witness={"order": order, "a": ia, "b": ib})
    lo = [part.shadows[c] for c in order]
    for x, y in zip(lo, lo[1:]):
        if not x[1] < y[0]:
            raise NotAnInterval("path order disagrees with shadow order",
                                witness={"shadows": lo})
    return ClusterSepGraph(part, order, edges)


@dataclass
class Component:
    kind: str  # "edge" or "cluster"
    start: int
    end: int
    label: int  # cluster index (in order) or edge index

    @property
    def length(self):
        return self.end - self.start


@dataclass
class StableInterval:
    setup: EpsilonSetup
    E: int
    clusters: list  # ordered, sorted tuples of vertices
    components: list  # Components in order along T
    phi: list  # vertex per integer position
    qi: dict = field(default_factory=dict)

    @property
    def length(self):
        return len(self.phi) - 1

    @property
    def edge_components(self):
        return [c for c in self.components if c.kind == "edge"]

    @property
    def cluster_components(self):
        return [c for c in self.components if c.kind == "cluster"]

    def cluster_index_of(self, v):
        for k, c in enumerate(self.clusters):
            if v in c:
                return k
        raise KeyError(v)

    def mu(self, k) -> Component:
        return self.cluster_components[k]

    def in_edge_interior(self, x: float) -> bool:
        return any(c.start < x < c.end for c in self.edge_components)


def build_stable_interval(s: EpsilonSetup, E: int | None = None, eps_prime=None) -> StableInterval:
    E = s.E if E is None else E
    sg = cluster_separation_graph(s, E, eps_prime)
    part = sg.partition
    g = s.g
    clusters = [part.clusters[i] for i in sg.order]
    k = len(clusters)
    edges = [choose_geodesic(g, clusters[i], clusters[i + 1]) for i in range(k - 1)]
    comps, phi = [], []
    pos = 0
    for i, c in enumerate(clusters):
        ends = []
        if i == 0:
            ends.append(s.a)
        else:
            ends.append(edges[i - 1][-1])
        if i == k - 1:
            ends.append(s.b)
        else:
            ends.append(edges[i][0])
        mu = choose_geodesic(g, [ends[0]], [ends[1]])
        if phi:
            assert phi[-1] == mu[0]
            phi += mu[1:]
        else:
            phi += mu
        comps.append(Component("cluster", pos, pos + len(mu) - 1, i))
        pos += len(mu) - 1
        if i < k - 1:
            e = edges[i]
            assert phi[-1] == e[0]
            phi += e[1:]
            comps.append(Component("edge", pos, pos + len(e) - 1, i))
            pos += len(e) - 1
    t = StableInterval(s, E, clusters, comps, phi)
    t.qi = measure_interval_qi(t)
    return t


def measure_interval_qi(t: StableInterval) -> dict:
    g = t.setup.g
    phi = np.array(t.phi)
    L = len(phi) - 1
    dz = g.dist[np.ix_(phi, phi)].astype(np.int64)
    idx = np.arange(L + 1)
    dt = np.abs(idx[:, None] - idx[None, :])
    # smallest integer L0 with dt <= L0*dz + L0 and dz <= L0*dt + L0
    l0 = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.max(np.ceil(dt / (dz + 1))) if L else 0
        r2 = np.max(np.ceil(dz / (dt + 1))) if L else 0
    l0 = int(max(r1, r2, 1))
    lam = t.setup.lam
    h1 = int(g.dist[np.ix_(phi, lam)].min(axis=1).max())
    h2 = int(g.dist[np.ix_(lam, phi)].min(axis=1).max())
    injective = all(len(set(t.phi[c.start:c.end + 1])) == c.length + 1 for c in t.components)
    return {"L0": l0, "hausdorff": max(h1, h2), "injective_components": injective,
            "endpoint_offset": max(g.d(t.phi[0], t.setup.a), g.d(t.phi[-1], t.setup.b))}


class DegenerateThickening(Warning):
    pass


@dataclass
class Thickening:
    r1: int
    r2: int
    length: int
    cluster_blocks: list  # closed (lo, hi) position intervals of the thickened cluster part
    edge_blocks: list  # closed (lo, hi) with lo < hi: the edge part
    degenerate: bool = False


def merge_blocks(blocks, r2):
    out = []
    for lo, hi in sorted(blocks):
        if out and lo - out[-1][1] <= r2:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def thicken_segments(length, segments, r1, r2) -> Thickening:
    if r1 <= 0 or r2 <= 0:
        raise ValueError("r1 and r2 must be positive integers")
    nb = [(max(0, lo - r1), min(length, hi + r1)) for lo, hi in segments]
    blocks = merge_blocks(nb, r2)
    edges = []
    prev = None
    for lo, hi in blocks:
        if prev is not None and lo > prev:
            edges.append((prev, lo))
        prev = hi
    if blocks and blocks[0][0] > 0:
        edges.insert(0, (0, blocks[0][0]))
    if blocks and blocks[-1][1] < length:
        edges.append((blocks[-1][1], length))
    if not blocks:
        edges = [(0, length)] if length > 0 else []
    return Thickening(r1, r2, length, blocks, edges, degenerate=not edges)


def thicken(t: StableInterval, r1: int, r2: int) -> Thickening:
    return thicken_segments(t.length, [(c.start, c.end) for c in t.cluster_components], r1, r2)


def path_graph(n: int) -> HypGraph:
    return HypGraph(n + 1, [(i, i + 1) for i in range(n)])


def random_tree(rng, n: int) -> HypGraph:
    edges = [(int(rng.integers(i)), i) for i in range(1, n)]
    return HypGraph(n, edges)


def random_near_tree(rng, spine: int, branches: int, extra: int, max_branch=4) -> HypGraph:
    """A long path with pendant branches and a few short cycles glued on."""
    edges = [(i, i + 1) for i in range(spine)]
    n = spine + 1
    for _ in range(branches):
        at = int(rng.integers(n))
        ln = int(rng.integers(1, max_branch + 1))
        prev = at
        for _ in range(ln):
            edges.append((prev, n))
            prev = n
            n += 1
    for _ in range(extra):
        # a short cycle: detour of length 2 or 3 around a spine edge
        at = int(rng.integers(spine))
        ln = int(rng.integers(1, 3))
        prev = at
        for _ in range(ln):
            edges.append((prev, n))
            prev = n
            n += 1
        edges.append((prev, at + 1))
    return HypGraph(n, edges)
