"""Niblo-Reeves normal cube paths, transition indices and the stable-moves check."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .wallspace_core import (
    CubeComplex,
    delete_hyperplanes,
    distance,
    separating,
)


class NotSeparating(ValueError):
    pass


class NotAHullComplex(ValueError):
    pass


@dataclass
class NormalPath:
    vertices: list
    steps: list  # per step: frozenset of wall indices

    @property
    def n(self):
        return len(self.steps)

    def at(self, i):
        """Vertex at parameter i, extended constantly past the end."""
        return self.vertices[min(i, len(self.vertices) - 1)]


def _b_side(v, i):
    # half-space of wall i not containing v
    return 2 * i + (1 - v[i])


def transitional_set(cc: CubeComplex, p, b) -> frozenset:
    """Separating walls that are minimal: no other separating wall must be crossed first."""
    cc.check(p, b)
    sep = separating(p, b)
    po = cc.pocset
    out = []
    for i in sep:
        hi = _b_side(p, i)
        # i must wait for k if the far side of i lies inside the far side of k
        if not any(po.less(hi, _b_side(p, k)) for k in sep if k != i):
            out.append(i)
    return frozenset(out)


def nr_path(cc: CubeComplex, a, b) -> NormalPath:
    cc.check(a, b)
    verts = [tuple(a)]
    steps = []
    p = tuple(a)
    while p != tuple(b):
        t = transitional_set(cc, p, b)
        for i, j in itertools.combinations(sorted(t), 2):
            assert cc.pocset.transverse(i, j), "transitional walls must be transverse"
        q = list(p)
        for i in t:
            q[i] ^= 1
        p = tuple(q)
        assert p in cc.index, "normal cube path left the complex"
        verts.append(p)
        steps.append(t)
    return NormalPath(verts, steps)


def l1_completion(path: NormalPath) -> list:
    """Edge path through every normal-path vertex, flipping walls in index order."""
    out = [path.vertices[0]]
    for v, t in zip(path.vertices, path.steps):
        cur = list(v)
        for i in sorted(t):
            cur[i] ^= 1
            out.append(tuple(cur))
    return out


def transition_index(cc: CubeComplex, a, b, h: int) -> int:
    """Length of the longest chain of separating walls strictly before h."""
    cc.check(a, b)
    sep = separating(a, b)
    if h not in sep:
        raise NotSeparating(h)
    po = cc.pocset
    memo = {}

    def depth(i):
        if i not in memo:
            hi = _b_side(a, i)
            preds = [k for k in sep if k != i and po.less(hi, _b_side(a, k))]
            memo[i] = max((1 + depth(k) for k in preds), default=0)
        return memo[i]

    return depth(h)


def transition_table(cc, a, b) -> dict:
    return {i: transition_index(cc, a, b, i) for i in separating(a, b)}


@dataclass
class StableMovesReport:
    ok: bool
    n: int
    m: int
    checks: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)


def verify_stable_moves(cc: CubeComplex, a, b, h: int) -> StableMovesReport:
    cc.check(a, b)
    if len(separating(a, b)) != cc.n_walls:
        raise NotAHullComplex("some wall does not separate a from b")
    path = nr_path(cc, a, b)
    sub, delta = delete_hyperplanes(cc, [h])
    da, db = delta(a), delta(b)
    path2 = nr_path(sub, da, db)
    n, m = path.n, path2.n
    checks, wit = {}, {}
    checks["n<=m+1"] = n <= m + 1
    if not checks["n<=m+1"]:
        wit["n<=m+1"] = (n, m)
    worst = 0
    for i in range(max(n, m) + 1):
        d = distance(sub, delta(path.at(i)), path2.at(i), "LInf")
        if d > worst:
            worst = d
            if d > 1:
                wit["drift"] = (i, delta(path.at(i)), path2.at(i), d)
    checks["drift<=1"] = worst <= 1
    t1 = transition_table(cc, a, b)
    t2 = transition_table(sub, da, db)
    bad = []
    for k, i in enumerate(delta.keep):
        s = t1[i] - t2[k]
        if s not in (0, 1):
            bad.append((cc.pocset.walls[i], s))
    checks["shift in {0,1}"] = not bad
    if bad:
        wit["shift in {0,1}"] = bad
    return StableMovesReport(all(checks.values()), n, m, checks, wit)
