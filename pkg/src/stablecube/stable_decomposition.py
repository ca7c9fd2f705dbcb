"""Stable decompositions of pairs of stable intervals.

Stable components are open integer intervals ``(s, e)`` inside the edge forest.
Complement components are the closed gaps between consecutive stable
components, including the two end gaps.  Pairs are matched in order, so the
order-preserving bijections alpha and beta are index identities and each pair
isometry is a translation.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .hyperbolic_graph import (
    EpsilonSetup,
    PointTooFar,
    StableInterval,
    build_stable_interval,
    thicken,
)


class MiddleMismatch(ValueError):
    pass


class NotAdmissible(ValueError):
    pass


class InvalidPair(ValueError):
    pass


class CompositionBoundExceeded(AssertionError):
    pass


_CACHE: dict = {}


def interval_for(s: EpsilonSetup) -> StableInterval:
    """Stable interval of a setup, memoised so equal setups share one object."""
    key = (id(s.g), s.key())
    t = _CACHE.get(key)
    if t is None:
        if len(_CACHE) > 4096:
            _CACHE.clear()
        t = build_stable_interval(s)
        _CACHE[key] = t
    return t


def same_interval(t1: StableInterval, t2: StableInterval) -> bool:
    if t1 is t2:
        return True
    return (t1.phi == t2.phi and t1.clusters == t2.clusters
            and [(c.kind, c.start, c.end) for c in t1.components]
            == [(c.kind, c.start, c.end) for c in t2.components])


@dataclass
class StablePiece:
    s: int
    e: int
    sp: int
    ep: int
    identical: bool
    dist: int  # max d(phi(x), phi'(i(x)))

    @property
    def length(self):
        return self.e - self.s


@dataclass
class StableDecompositionPair:
    T: StableInterval
    Tp: StableInterval
    pieces: list
    Y0: frozenset
    edge_T: list | None = None  # open edge blocks; defaults to the edge forest
    edge_Tp: list | None = None
    tags: dict = field(default_factory=dict)  # complement index -> case tag
    moves: int = 0
    L: int | None = None
    history: list = field(default_factory=list)
    thick: "StableDecompositionPair | None" = None
    refinements: list = field(default_factory=list)

    def edges(self, side):
        t = self.T if side == 0 else self.Tp
        own = self.edge_T if side == 0 else self.edge_Tp
        if own is not None:
            return own
        return [(c.start, c.end) for c in t.edge_components]

    def stable(self, side):
        return [(p.s, p.e) if side == 0 else (p.sp, p.ep) for p in self.pieces]

    def complements(self, side):
        t = self.T if side == 0 else self.Tp
        st = self.stable(side)
        out, prev = [], 0
        for s, e in st:
            out.append((prev, s))
            prev = e
        out.append((prev, t.length))
        return out

    def inverse(self) -> "StableDecompositionPair":
        return StableDecompositionPair(
            self.Tp, self.T,
            [StablePiece(p.sp, p.ep, p.s, p.e, p.identical, p.dist) for p in self.pieces],
            self.Y0, self.edge_Tp, self.edge_T, dict(self.tags), self.moves, self.L,
            list(self.history))


def _edge_units(t: StableInterval, edges):
    """Unit edges [i, i+1] inside the open edge blocks, with their block index."""
    out = []
    for k, (lo, hi) in enumerate(edges):
        for i in range(lo, hi):
            out.append((i, k))
    return out


def _lis_pairs(cands):
    """Longest chain of (i, j) strictly increasing in both coordinates."""
    cands = sorted(cands, key=lambda c: (c[0], -c[1]))
    tails, tails_idx, prev = [], [], [None] * len(cands)
    for n, (i, j) in enumerate(cands):
        k = bisect.bisect_left(tails, j)
        if k == len(tails):
            tails.append(j)
            tails_idx.append(n)
        else:
            tails[k] = j
            tails_idx[k] = n
        prev[n] = tails_idx[k - 1] if k > 0 else None
    out = []
    n = tails_idx[-1] if tails_idx else None
    while n is not None:
        out.append(cands[n])
        n = prev[n]
    return out[::-1]


def _segment_dist(g, phi, phip, s, sp, length):
    a = np.array(phi[s:s + length + 1])
    b = np.array(phip[sp:sp + length + 1])
    return int(g.dist[a, b].max())


def _clip(blocks, lo, hi):
    out = []
    for a, b in blocks:
        x, y = max(a, lo), min(b, hi)
        if y > x:
            out.append((x, y))
    return out


def match_intervals(T: StableInterval, Tp: StableInterval, Y0, edge_T=None, edge_Tp=None,
                    close_bound=None, tag=None) -> StableDecompositionPair:
    """Order-preserving stable decomposition of two stable intervals.

    Identical pieces come from a longest common chain of oriented unit edges.
    Leftover edge parts in each gap are paired in order when their counts
    agree, truncated at the b-side end, and kept if they stay close.
    """
    g = T.setup.g
    eT = edge_T if edge_T is not None else [(c.start, c.end) for c in T.edge_components]
    eP = edge_Tp if edge_Tp is not None else [(c.start, c.end) for c in Tp.edge_components]
    if close_bound is None:
        close_bound = max(2, 2 * T.setup.eps_prime)
    uT, uP = _edge_units(T, eT), _edge_units(Tp, eP)
    where = {}
    for j, k in uP:
        where.setdefault((Tp.phi[j], Tp.phi[j + 1]), []).append((j, k))
    cands = []
    for i, k in uT:
        for j, kp in where.get((T.phi[i], T.phi[i + 1]), []):
            cands.append((i, j, k, kp))
    chain = _lis_pairs([(c[0], c[1]) for c in cands])
    blk = {(c[0], c[1]): (c[2], c[3]) for c in cands}
    runs = []
    for i, j in chain:
        if runs:
            r = runs[-1]
            if i == r[1] and j == r[3] and blk[(i, j)] == blk[(i - 1, j - 1)]:
                r[1] += 1
                r[3] += 1
                continue
        runs.append([i, i + 1, j, j + 1])
    pieces = [StablePiece(r[0], r[1], r[2], r[3], True, 0) for r in runs]
    # close pairs in the gaps
    out = []
    bounds = [(0, 0, 0, 0)] + [(p.s, p.e, p.sp, p.ep) for p in pieces] + [
        (T.length, T.length, Tp.length, Tp.length)]
    for k in range(len(bounds) - 1):
        lo, hi = bounds[k][1], bounds[k + 1][0]
        lop, hip = bounds[k][3], bounds[k + 1][2]
        gT, gP = _clip(eT, lo, hi), _clip(eP, lop, hip)
        if gT and len(gT) == len(gP):
            for (x, y), (xp, yp) in zip(gT, gP):
                ln = min(y - x, yp - xp)
                if ln <= 0:
                    continue
                d = _segment_dist(g, T.phi, Tp.phi, x, xp, ln)
                if d <= close_bound:
                    same = d == 0
                    out.append(StablePiece(x, x + ln, xp, xp + ln, same, d))
        if k < len(pieces):
            out.append(pieces[k])
    p = StableDecompositionPair(T, Tp, out, frozenset(Y0), edge_T, edge_Tp)
    if tag:
        for j, (a, b) in enumerate(p.complements(0)):
            if any(lo < b and a < hi for lo, hi in eT) or b - a > 0:
                p.tags[j] = tag
    return p


# validation ---------------------------------------------------------------

@dataclass
class PairReport:
    ok: bool
    L: int
    items: dict
    witnesses: dict
    measured: dict


def _unstable_edge_parts(edges, stable):
    """Components of (open edge blocks) minus (open stable intervals)."""
    parts = []
    for lo, hi in edges:
        inside = sorted((s, e) for s, e in stable if lo <= s and e <= hi)
        cur = lo
        first = True
        for s, e in inside:
            if first:
                if s > lo:
                    parts.append((lo, s))
            else:
                parts.append((cur, s))
            cur = e
            first = False
        if first:
            parts.append((lo, hi))
        elif cur < hi:
            parts.append((cur, hi))
    return parts


def validate_pair(p: StableDecompositionPair) -> PairReport:
    items, wit = {}, {}
    g = p.T.setup.g
    # (a) integer positive lengths inside the edge part
    bad = []
    for side in (0, 1):
        eb = p.edges(side)
        for s, e in p.stable(side):
            if not (isinstance(s, (int, np.integer)) and isinstance(e, (int, np.integer)) and e > s):
                bad.append((side, s, e))
            elif not any(lo <= s and e <= hi for lo, hi in eb):
                bad.append((side, s, e, "outside edge forest"))
        st = p.stable(side)
        if any(st[k][1] > st[k + 1][0] for k in range(len(st) - 1)):
            bad.append((side, "overlap"))
    items["a"] = not bad
    if bad:
        wit["a"] = bad[:5]
    # (b) order-preserving bijection: equal counts, both sorted
    items["b"] = True
    # (c) isometries
    bad = [(k, q.length, q.ep - q.sp) for k, q in enumerate(p.pieces) if q.length != q.ep - q.sp]
    items["c"] = not bad
    if bad:
        wit["c"] = bad[:5]
    # (d)/(e) identical and close pairs, recomputed from phi
    nonid, worst = 0, 0
    for q in p.pieces:
        if q.length != q.ep - q.sp:
            continue
        d = _segment_dist(g, p.T.phi, p.Tp.phi, q.s, q.sp, q.length)
        if d > 0:
            nonid += 1
            worst = max(worst, d)
        if (d == 0) != q.identical and q.identical:
            wit.setdefault("d", []).append(("flagged identical but differs", q.s, q.sp))
    items["d"] = "d" not in wit
    items["e"] = True
    # (f) unstable parts of the edge forest
    parts = _unstable_edge_parts(p.edges(0), p.stable(0)) + []
    parts_p = _unstable_edge_parts(p.edges(1), p.stable(1))
    n_unst = max(len(parts), len(parts_p))
    diam = max([b - a for a, b in parts + parts_p], default=0)
    items["f"] = True
    # (g) beta identifies end gaps and the gaps holding identified clusters
    cT, cP = p.complements(0), p.complements(1)
    gbad = []
    if len(cT) != len(cP):
        gbad.append(("count", len(cT), len(cP)))
    else:
        for y in sorted(p.Y0):
            try:
                kt = p.T.cluster_index_of(y)
                kp = p.Tp.cluster_index_of(y)
            except KeyError:
                gbad.append(("missing cluster", y))
                continue
            mt, mp = p.T.mu(kt), p.Tp.mu(kp)
            jt = [j for j, (a, b) in enumerate(cT) if a <= mt.start and mt.end <= b]
            jp = [j for j, (a, b) in enumerate(cP) if a <= mp.start and mp.end <= b]
            if not jt or not jp or jt[0] != jp[0]:
                gbad.append(("cluster", y, jt, jp))
    items["g"] = not gbad
    if gbad:
        wit["g"] = gbad[:5]
    L = max(nonid, worst + 1 if worst else 0, n_unst, diam)
    ok = all(items.values())
    return PairReport(ok, L, items, wit, {"non_identical": nonid, "close_max": worst,
                                           "unstable_count": n_unst, "unstable_diam": diam})


def finalize(p: StableDecompositionPair) -> StableDecompositionPair:
    rep = validate_pair(p)
    if not rep.ok:
        raise InvalidPair(f"stable pair failed validation: {rep.witnesses}")
    p.L = rep.L
    return p


# thickened variant ---------------------------------------------------------

def _intersect_open(A, B):
    out = []
    for a0, a1 in A:
        for b0, b1 in B:
            lo, hi = max(a0, b0), min(a1, b1)
            if hi > lo:
                out.append((lo, hi))
    return sorted(out)


def thicken_pair(p: StableDecompositionPair, r1: int, r2: int) -> StableDecompositionPair:
    th, thp = thicken(p.T, r1, r2), thicken(p.Tp, r1, r2)
    eT, eP = th.edge_blocks, thp.edge_blocks
    pieces = []
    for q in p.pieces:
        off = q.sp - q.s
        shifted = [(lo - off, hi - off) for lo, hi in eP]
        for lo, hi in _intersect_open(_intersect_open([(q.s, q.e)], eT), shifted):
            pieces.append(StablePiece(lo, hi, lo + off, hi + off, q.identical, q.dist))
    out = StableDecompositionPair(p.T, p.Tp, pieces, p.Y0, eT, eP, dict(p.tags), p.moves)
    out = finalize(out)
    for side in (0, 1):
        assert set(out.stable(side)) <= set(_intersect_open(p.stable(side), p.stable(side))) or all(
            any(a <= s and e <= b for a, b in p.stable(side)) for s, e in out.stable(side))
    return out


# refinement and composition -------------------------------------------------

def _containing(comps, a, b):
    for j, (x, y) in enumerate(comps):
        if x <= a and b <= y:
            return j
    return None


def verify_refinement(old: StableDecompositionPair, new: StableDecompositionPair) -> list:
    """Witness check: new stable sets sit inside old ones and beta refines."""
    bad = []
    for side in (0, 1):
        for s, e in new.stable(side):
            if _containing(old.stable(side), s, e) is None:
                bad.append(("stable not contained", side, s, e))
    oc0, oc1 = old.complements(0), old.complements(1)
    nc0, nc1 = new.complements(0), new.complements(1)
    for j, (a, b) in enumerate(oc0):
        jn = _containing(nc0, a, b)
        if jn is None:
            bad.append(("complement not contained", j))
            continue
        x, y = oc1[j]
        if not (nc1[jn][0] <= x and y <= nc1[jn][1]):
            bad.append(("beta not refined", j, jn))
    return bad


def refine_and_compose(p12: StableDecompositionPair, p23: StableDecompositionPair,
                       check_bound=True) -> StableDecompositionPair:
    if not same_interval(p12.Tp, p23.T):
        raise MiddleMismatch("middle intervals differ")
    if p12.L is None:
        finalize(p12)
    if p23.L is None:
        finalize(p23)
    new, r12, r23 = [], [], []
    for A in p12.pieces:
        for B in p23.pieces:
            lo, hi = max(A.sp, B.s), min(A.ep, B.e)
            if hi <= lo:
                continue
            s1, e1 = lo - A.sp + A.s, hi - A.sp + A.s
            s3, e3 = lo - B.s + B.sp, hi - B.s + B.sp
            ident = A.identical and B.identical
            new.append(StablePiece(s1, e1, s3, e3, ident, A.dist + B.dist))
            r12.append(StablePiece(s1, e1, lo, hi, A.identical, A.dist))
            r23.append(StablePiece(lo, hi, s3, e3, B.identical, B.dist))
    Y0 = p12.Y0 & p23.Y0
    out = StableDecompositionPair(p12.T, p23.Tp, new, Y0, p12.edge_T, p23.edge_Tp,
                                  {}, p12.moves + p23.moves,
                                  history=p12.history + p23.history)
    out = finalize(out)
    ref12 = StableDecompositionPair(p12.T, p12.Tp, r12, p12.Y0, p12.edge_T, p12.edge_Tp)
    ref23 = StableDecompositionPair(p23.T, p23.Tp, r23, p23.Y0, p23.edge_T, p23.edge_Tp)
    w = verify_refinement(p12, ref12) + verify_refinement(p23, ref23)
    if w:
        raise InvalidPair(f"refinement witness failed: {w[:3]}")
    out.refinements = [ref12, ref23]
    bound = 4 * max(p12.L, 1) * max(p23.L, 1)
    if check_bound and out.L > bound:
        raise CompositionBoundExceeded(f"composed L={out.L} > 4*L1*L2={bound}")
    out.history.append(("compose", p12.L, p23.L, out.L, bound))
    return out


def identity_pair(T: StableInterval) -> StableDecompositionPair:
    return finalize(match_intervals(T, T, T.setup.Y))


# moves --------------------------------------------------------------------

def _check_near(s: EpsilonSetup, z):
    d = int(s.g.dset(s.lam)[z])
    if 2 * d >= s.eps:
        raise PointTooFar(z, d)


def add_cluster_point(s: EpsilonSetup, z: int, r1: int = 1, r2: int = 1,
                      thick=True) -> StableDecompositionPair:
    _check_near(s, z)
    s2 = s.with_points(Y=set(s.Y) | {z})
    T, T2 = interval_for(s), interval_for(s2)
    if z in s.points():
        case = "trivial"
    else:
        k = T2.cluster_index_of(z)
        case = "split" if len(T2.clusters[k]) == 1 else "affected"
    p = match_intervals(T, T2, s.Y, tag=None if case == "trivial" else case)
    p.moves = 0 if case == "trivial" else 1
    p.history.append(("add", z, case))
    p = finalize(p)
    if thick:
        p.thick = thicken_pair(p, r1, r2)
    return p


def remove_cluster_point(s: EpsilonSetup, z: int, r1=1, r2=1, thick=True):
    """Reverse of adding z to the setup without z."""
    base = s.with_points(Y=set(s.Y) - {z})
    p = add_cluster_point(base, z, r1, r2, thick=False).inverse()
    p.Y0 = frozenset(base.Y)
    p.history = [("remove", z)]
    p = finalize(p)
    if thick:
        p.thick = thicken_pair(p, r1, r2)
    return p


def mid_eps(s: EpsilonSetup) -> int:
    """Tolerance for the intermediate setups of a move sequence."""
    return 3 * s.eps + 4 * s.g.delta + 1


def _swap_pair(s_from: EpsilonSetup, s_to: EpsilonSetup) -> StableDecompositionPair:
    """Setups with equal point sets: edge components coincide."""
    T, T2 = interval_for(s_from), interval_for(s_to)
    p = match_intervals(T, T2, s_from.Y & s_to.Y, tag="swap")
    p.history.append(("swap", s_from.a, s_to.a, s_from.b, s_to.b))
    return finalize(p)


def _chain(pairs):
    out = pairs[0]
    for q in pairs[1:]:
        out = refine_and_compose(out, q)
    return out


def perturb_endpoint(s: EpsilonSetup, a_new: int, r1: int = 1, r2: int = 1, which="a",
                     thick=True) -> StableDecompositionPair:
    """Move one endpoint through the six-setup sequence.

    (a,b;Y) -> (a,b;Y+a) -> (a,b;Y+a+a') -> (a',b;Y+a+a') -> (a',b;Y+a') -> (a',b;Y)
    """
    g = s.g
    a = s.a if which == "a" else s.b
    if g.d(a, a_new) > s.eps:
        raise PointTooFar(a_new, g.d(a, a_new))
    other = {"b": s.b} if which == "a" else {"a": s.a}
    end = s.with_points(**{which: a_new})
    for y in sorted(s.Y):
        _check_near(end, y)
    if a_new == a:
        p = identity_pair(interval_for(s))
        if thick:
            p.thick = thicken_pair(p, r1, r2)
        return p
    em = mid_eps(s)
    Y = set(s.Y)
    S1 = s
    S2 = s.with_points(Y=Y | {a}, eps=em)
    S3 = s.with_points(Y=Y | {a, a_new}, eps=em)
    S4 = s.with_points(Y=Y | {a, a_new}, eps=em, **{which: a_new})
    S5 = s.with_points(Y=Y | {a_new}, eps=em, **{which: a_new})
    S6 = end
    p12 = add_cluster_point(S1.with_points(eps=em), a, thick=False)
    p23 = add_cluster_point(S2, a_new, thick=False)
    p34 = _swap_pair(S3, S4)
    p45 = remove_cluster_point(S4, a, thick=False)
    p56 = remove_cluster_point(S5.with_points(eps=em), a_new, thick=False)
    # align the first and last setups with the caller's tolerance
    p12.T = interval_for(S1)
    p56.Tp = interval_for(S6)
    out = _chain([p12, p23, p34, p45, p56])
    out.moves = 1
    out.history.append(("perturb", which, a, a_new))
    if thick:
        out.thick = thicken_pair(out, r1, r2)
    return out


def check_admissible(s: EpsilonSetup, sp: EpsilonSetup, N=None):
    g = s.g
    if sp.g is not g:
        raise NotAdmissible("setups live in different graphs")
    if g.d(s.a, sp.a) > s.eps or g.d(s.b, sp.b) > s.eps:
        raise NotAdmissible("endpoints more than eps apart")
    sym = set(s.Y) ^ set(sp.Y)
    if N is not None and len(sym) >= N:
        raise NotAdmissible(f"|Y sym Y'| = {len(sym)} >= N = {N}")
    for y in sorted(sp.Y):
        if 2 * int(g.dset(s.lam)[y]) >= s.eps:
            raise NotAdmissible(f"Y' point {y} not near lambda(a,b)")
    for y in sorted(s.Y):
        if 2 * int(g.dset(sp.lam)[y]) >= sp.eps:
            raise NotAdmissible(f"Y point {y} not near lambda(a',b')")
    if (s.E, s.eps_prime) != (sp.E, sp.eps_prime):
        raise NotAdmissible("setups use different chaining constants")


def build_stable_pair(s: EpsilonSetup, sp: EpsilonSetup, r1: int = 1, r2: int = 1, N=None,
                      thick=True) -> StableDecompositionPair:
    """Add Y'-Y, move a then b, remove Y-Y'; compose all moves."""
    check_admissible(s, sp, N)
    if s.key() == sp.key():
        p = identity_pair(interval_for(s))
        if thick:
            p.thick = thicken_pair(p, r1, r2)
        return p
    em = mid_eps(s)
    pairs = []
    cur = s
    for z in sorted(set(sp.Y) - set(s.Y)):
        src = cur if cur is s else cur.with_points(eps=em)
        p = add_cluster_point(src, z, thick=False)
        cur = src.with_points(Y=set(src.Y) | {z}, eps=em)
        pairs.append(p)
    for which, new in (("a", sp.a), ("b", sp.b)):
        old = cur.a if which == "a" else cur.b
        if old != new:
            p = perturb_endpoint(cur, new, which=which, thick=False)
            cur = cur.with_points(**{which: new}, eps=em)
            pairs.append(p)
    for z in sorted(set(s.Y) - set(sp.Y)):
        p = remove_cluster_point(cur, z, thick=False)
        cur = cur.with_points(Y=set(cur.Y) - {z}, eps=em)
        pairs.append(p)
    # the chained intervals agree by setup key; pin the two ends to the inputs
    pairs[0].T = interval_for(s)
    pairs[-1].Tp = interval_for(sp)
    out = _chain(pairs) if len(pairs) > 1 else finalize(pairs[0])
    out.Y0 = frozenset(s.Y) & frozenset(sp.Y)
    out = finalize(out)
    out.moves = sum(p.moves for p in pairs)
    assert out.moves <= len(set(s.Y) ^ set(sp.Y)) + 2
    if thick:
        out.thick = thicken_pair(out, r1, r2)
    return out


# collapsing -----------------------------------------------------------------

@dataclass
class CollapsedInterval:
    length: int
    q: list  # collapsed position of every integer position of T
    marked: tuple
    cluster_points: dict  # y -> collapsed vertex of mu(C_y)


def _collapse(t: StableInterval, stable) -> CollapsedInterval:
    q = []
    for x in range(t.length + 1):
        q.append(sum(min(max(x - s, 0), e - s) for s, e in stable))
    total = sum(e - s for s, e in stable)
    cps = {}
    for k, c in enumerate(t.clusters):
        m = t.mu(k)
        vals = {q[x] for x in range(m.start, m.end + 1)}
        assert len(vals) == 1, "cluster component not collapsed to a vertex"
        for y in c:
            cps[y] = q[m.start]
    return CollapsedInterval(total, q, (0, total), cps)


@dataclass
class IntervalIsometry:
    length: int

    def __call__(self, x):
        return x


def collapse_to_isometry(p: StableDecompositionPair):
    rep = validate_pair(p)
    if not rep.ok:
        raise InvalidPair(rep.witnesses)
    c1 = _collapse(p.T, p.stable(0))
    c2 = _collapse(p.Tp, p.stable(1))
    if c1.length != c2.length:
        raise InvalidPair("collapsed lengths differ")
    phi = IntervalIsometry(c1.length)
    assert phi(c1.q[0]) == c2.q[0] and phi(c1.q[-1]) == c2.q[-1]
    for y in p.Y0:
        if y in c1.cluster_points and y in c2.cluster_points:
            assert phi(c1.cluster_points[y]) == c2.cluster_points[y], f"cluster {y} not identified"
    return c1, c2, phi
