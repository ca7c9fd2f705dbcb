"""End-to-end cubical models, the stable diagram, bicombing paths and the CLI."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .hfi_cubulator import (
    SimplicialTrimmingSetup,
    build_q_complex,
    induce_isomorphism,
    minimal_budget,
    projection_is_geodesic,
    random_hfi,
    random_trim_setup,
    trim_hfi,
)
from .hyperbolic_graph import (
    build_setup,
    build_stable_interval,
    path_graph,
    random_near_tree,
    thicken,
)
from .normal_paths import nr_path, verify_stable_moves
from .stable_decomposition import build_stable_pair, collapse_to_isometry, validate_pair
from .toy_hhs import (
    HHSInstance,
    audit_metrics,
    build_interval_system,
    check_item9,
    collapse_system_auto,
    hull,
    lift_omega_hat,
    project_psi_hat,
    random_instance,
    random_point,
    validate_instance,
)
from .wallspace_core import (
    Pocset,
    delete_hyperplanes,
    distance,
    dual_complex,
    hull_complex,
    random_pocset,
    validate_pocset,
    width,
)

SCHEMA_VERSION = 1


class NotAPerturbation(ValueError):
    pass


class PreconditionFailed(ValueError):
    def __init__(self, report):
        super().__init__(f"controlled-domain precondition failed: {report}")
        self.report = report


# measuring -----------------------------------------------------------------

def qi_constant(dX, dQ, cap=10000) -> int:
    """Least B >= 1 with dX <= B dQ + B and dQ <= B dX + B^2."""
    dX = np.asarray(dX, dtype=np.int64)
    dQ = np.asarray(dQ, dtype=np.int64)
    if dX.size == 0:
        return 1
    for B in range(1, cap + 1):
        if np.all(dX <= B * dQ + B) and np.all(dQ <= B * dX + B * B):
            return B
    raise AssertionError("no quasi-isometry constant below cap")


def path_matrix(inst, pts):
    A = np.array(pts, dtype=np.int64).reshape(len(pts), len(inst.domains))
    out = np.zeros((len(pts), len(pts)), dtype=np.int64)
    for k, U in enumerate(inst.domains):
        dist = inst.trees[U].graph.dist
        out += dist[np.ix_(A[:, k], A[:, k])]
    return out


def bits_to_tuple(Q, bits):
    out = [0] * len(Q.hfi.domains)
    for (U, k), bit in zip(Q.walls, bits):
        out[Q.hfi.domains.index(U)] += bit
    return tuple(out)


def q_nr_path(Q) -> list:
    R = Q.realized
    p = nr_path(R, Q.bits(Q.xhat), Q.bits(Q.yhat))
    return [bits_to_tuple(Q, v) for v in p.vertices]


def _extend(path, t):
    return path[min(t, len(path) - 1)]


@dataclass
class CubicalModel:
    inst: HHSInstance
    a: tuple
    b: tuple
    H: object
    system: object
    cs: object
    Q: object
    omega: dict
    nr: list
    consts: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def B0(self):
        return self.consts["B0"]


def hierarchy_defect(inst, pts) -> int:
    """Worst backtracking of any domain projection along the path."""
    worst = 0
    for k, U in enumerate(inst.domains):
        dist = inst.trees[U].graph.dist
        xs = [p[k] for p in pts]
        for i in range(len(xs)):
            for j in range(i, len(xs)):
                dij = int(dist[xs[i], xs[j]])
                for m in range(j, len(xs)):
                    dd = dij + int(dist[xs[j], xs[m]]) - int(dist[xs[i], xs[m]])
                    worst = max(worst, dd)
    return worst


def build_cubical_model(inst: HHSInstance, a, b, K=None) -> CubicalModel:
    a, b = tuple(a), tuple(b)
    H = hull(inst, a, b)
    sysm = build_interval_system(inst, a, b, K)
    cs = collapse_system_auto(sysm)
    Q = build_q_complex(cs.hfi)
    omega = {q: lift_omega_hat(cs, q, H) for q in Q.vertices}
    nr = q_nr_path(Q)
    M = CubicalModel(inst, a, b, H, sysm, cs, Q, omega, nr)
    verts = Q.vertices
    dX = path_matrix(inst, [omega[q] for q in verts])
    A = Q.array
    dQ = np.abs(A[:, None, :] - A[None, :, :]).sum(-1)
    B_qi = qi_constant(dX, dQ)
    gam = [omega[q] for q in nr]
    idx = np.arange(len(gam))
    B_nr = qi_constant(path_matrix(inst, gam), np.abs(idx[:, None] - idx[None, :]))
    dim = width(Q.realized.pocset) if Q.walls else 0
    L_hp = 1 + hierarchy_defect(inst, gam)
    M.consts = {"B_qi": B_qi, "B_nr": B_nr, "dim": dim, "L_hp": L_hp,
                "B0": max(B_qi, B_nr, dim, 1), "r1": cs.r1, "r2": cs.r2, "K": sysm.K}
    M.checks = {
        "interval_system": sysm.checks["ok"],
        "collapsed_control": cs.checks["ok"],
        "item9": not check_item9(cs, Q),
        "omega_endpoints": omega[Q.xhat] == H.gate(a) and omega[Q.yhat] == H.gate(b),
        "projections_monotone": all(projection_is_geodesic(Q, nr, U) for U in cs.hfi.domains),
    }
    return M


# the stable diagram --------------------------------------------------------

@dataclass
class StableCubulationDiagram:
    M: CubicalModel
    M2: CubicalModel
    trim0: object
    trim1: object
    iso: object
    pairs: dict
    S0: int
    Sigma: int
    defects: dict
    consts: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    def omega0(self, q0):
        return self.M.omega[self.trim0.xi(q0)]

    def omega0p(self, q0):
        return self.M2.omega[self.trim1.xi(q0)]


def involved_domains(M, M2) -> list:
    inst = M.inst
    U1, U2 = M.system.relevant, M2.system.relevant
    out = []
    for V in sorted(U1 | U2, key=inst.index.get):
        k = inst.index[V]
        moved = (M.a[k], M.b[k]) != (M2.a[k], M2.b[k])
        below1 = {W for W in U1 if (W, V) in inst.nest}
        below2 = {W for W in U2 if (W, V) in inst.nest}
        if moved or below1 != below2:
            out.append(V)
    return out


def _unstable_segments(p, side, q, n):
    """Complement in the collapsed interval of the images of stable pieces."""
    stable = sorted((q[s], q[e]) for s, e in p.stable(side))
    segs, cur = [], 0
    for lo, hi in stable:
        if lo > cur:
            segs.append((cur, lo))
        cur = max(cur, hi)
    if cur < n:
        segs.append((cur, n))
    return segs


def _trim_setup(M, segs, drop):
    B = minimal_budget(segs)
    return SimplicialTrimmingSetup(segs, B, frozenset(drop))


def build_stable_diagram(inst, a, b, a2, b2, M=None, M2=None) -> StableCubulationDiagram:
    a, b, a2, b2 = map(tuple, (a, b, a2, b2))
    for p, p2 in ((a, a2), (b, b2)):
        if inst.d_X(p, p2) > 1 or not inst.consistent(p2):
            raise NotAPerturbation((p, p2))
    M = M or build_cubical_model(inst, a, b)
    M2 = M2 or build_cubical_model(inst, a2, b2)
    N0 = inst.constants["N0"]
    U1, U2 = M.system.relevant, M2.system.relevant
    sym = set(U1) ^ set(U2)
    inv = involved_domains(M, M2)
    pre = {"symdiff": sorted(sym), "involved": inv, "N0": N0}
    if len(sym) >= N0 or len(inv) > N0:
        raise PreconditionFailed(pre)
    if (M.cs.r1, M.cs.r2) != (M2.cs.r1, M2.cs.r2):
        raise PreconditionFailed({**pre, "r1": (M.cs.r1, M2.cs.r1)})
    r1, r2 = M.cs.r1, M.cs.r2
    segs0, segs1, pairs = {}, {}, {}
    for U in sorted(set(U1) & set(U2), key=inst.index.get):
        s = M.system.intervals[U].setup
        s2 = M2.system.intervals[U].setup
        p = build_stable_pair(s, s2, r1, r2)
        tp = p.thick
        rep = validate_pair(tp)
        if not rep.ok:
            raise AssertionError(f"thickened pair for {U} invalid: {rep.witnesses}")
        collapse_to_isometry(tp)
        pairs[U] = tp
        segs0[U] = _unstable_segments(tp, 0, M.cs.q[U], M.cs.lengths[U])
        segs1[U] = _unstable_segments(tp, 1, M2.cs.q[U], M2.cs.lengths[U])
    drop0 = [U for U in U1 - U2 if U != inst.S]
    drop1 = [U for U in U2 - U1 if U != inst.S]
    for U in U1 - U2:
        if M.cs.lengths[U]:
            segs0[U] = [(0, M.cs.lengths[U])]
    for U in U2 - U1:
        if M2.cs.lengths[U]:
            segs1[U] = [(0, M2.cs.lengths[U])]
    st0 = _trim_setup(M, segs0, drop0)
    st1 = _trim_setup(M2, segs1, drop1)
    S0 = max(st0.B, st1.B)
    t0 = trim_hfi(M.cs.hfi, st0, M.Q)
    t1 = trim_hfi(M2.cs.hfi, st1, M2.Q)
    h0, h1 = t0.hfi, t1.hfi
    ident = {U: list(range(h0.lengths[U] + 1)) for U in h0.domains}
    iso = induce_isomorphism(h0, h1, ident, t0.Qp, t1.Qp)
    # defects of the three triangles, in the metric of X
    top = max(M.inst.d_X(M.omega[q], M.omega[t0.xi(t0.delta(q))]) for q in M.Q.vertices)
    bot = max(M.inst.d_X(M2.omega[q], M2.omega[t1.xi(t1.delta(q))]) for q in M2.Q.vertices)
    mid = max(inst.d_X(M.omega[t0.xi(q0)], M2.omega[t1.xi(iso(q0))]) for q0 in t0.Qp.vertices)
    D = StableCubulationDiagram(M, M2, t0, t1, iso, pairs, S0, max(top, bot, mid),
                                {"top": top, "bottom": bot, "middle": mid})
    Bm = max(M.consts["B_qi"], M2.consts["B_qi"])
    D.consts = {"S0": S0, "Sigma": D.Sigma, "top_bound": Bm * S0 * S0 + Bm,
                "deleted": (t0.deleted, t1.deleted), "precondition": pre}
    nr0, nr1 = q_nr_path(t0.Qp), q_nr_path(t1.Qp)
    D.checks = {
        "iso_certified": iso.certified,
        "distinguished_preserved": t0.delta(M.Q.xhat) == t0.Qp.xhat
        and t0.delta(M.Q.yhat) == t0.Qp.yhat and t1.delta(M2.Q.xhat) == t1.Qp.xhat
        and t1.delta(M2.Q.yhat) == t1.Qp.yhat and iso(t0.Qp.xhat) == t1.Qp.xhat
        and iso(t0.Qp.yhat) == t1.Qp.yhat,
        "deletions<=S0^2": t0.deleted <= S0 * S0 and t1.deleted <= S0 * S0,
        "top<=bound": top <= D.consts["top_bound"] and bot <= D.consts["top_bound"],
        "nr_iso": [iso(v) for v in nr0] == nr1,
    }
    D.consts["moves"] = {U: p.moves for U, p in pairs.items()}
    D.consts["pair_L"] = {U: p.L for U, p in pairs.items()}
    D.consts["transfer"] = [stable_moves_transfer(M.Q, t0), stable_moves_transfer(M2.Q, t1)]
    D.checks["stable_moves_transfer"] = all(t["single_steps_ok"] for t in D.consts["transfer"])
    return D


def stable_moves_transfer(Q, tr) -> dict:
    """Delete the trimmed factor edges one at a time, checking each step."""
    R = Q.realized
    walls = []
    for U, segs in tr.delta.segments.items():
        for lo, hi in segs:
            walls += [Q.walls.index((U, k)) for k in range(lo, hi)]
    cc, a, b = R, Q.bits(Q.xhat), Q.bits(Q.yhat)
    names = list(range(R.n_walls))
    ok = True
    steps = 0
    for w in sorted(walls, reverse=True):
        i = names.index(w)
        rep = verify_stable_moves(cc, a, b, i)
        ok &= rep.ok
        steps += 1
        cc2, vm = delete_hyperplanes(cc, [i])
        a, b, cc = vm(a), vm(b), cc2
        names.pop(i)
    # composed drift against the path computed directly in the trimmed complex
    p = nr_path(R, Q.bits(Q.xhat), Q.bits(Q.yhat))
    _, vm = delete_hyperplanes(R, walls) if walls else (R, None)
    p0 = nr_path(cc, a, b)
    drift = 0
    for t in range(max(p.n, p0.n) + 1):
        u = vm(p.at(t)) if vm else p.at(t)
        drift = max(drift, distance(cc, u, p0.at(t), "LInf"))
    return {"deletions": steps, "single_steps_ok": bool(ok), "composed_drift": drift,
            "n": p.n, "m": p0.n, "composed_ok": drift <= max(1, steps) and p.n <= p0.n + steps}


# bicombing -----------------------------------------------------------------

@dataclass
class BicombingPath:
    points: list
    source: list
    zeta: int
    L_hp: int


def bicombing_path(model: CubicalModel) -> BicombingPath:
    pts = [model.omega[q] for q in model.nr]
    return BicombingPath(pts, model.nr, model.consts["B_nr"], model.consts["L_hp"])


@dataclass
class FellowTravelReport:
    sup: int
    B0: int
    ok: bool
    terms: dict
    bounds: dict
    distances: list
    diagram: StableCubulationDiagram
    checks: dict = field(default_factory=dict)

    def to_json(self):
        D = self.diagram
        return {"sup": self.sup, "B0": self.B0, "five_B0": 5 * self.B0, "ok": self.ok,
                "terms": self.terms, "bounds": self.bounds, "distances": self.distances,
                "Sigma": D.Sigma, "S0": D.S0, "defects": D.defects,
                "diagram_checks": D.checks, "checks": self.checks,
                "model_constants": [D.M.consts, D.M2.consts],
                "transfer": D.consts["transfer"], "pair_L": D.consts["pair_L"],
                "moves": D.consts["moves"], "deleted": list(D.consts["deleted"])}


def _omega_qi(M, tr):
    Qp = tr.Qp
    imgs = [M.omega[tr.xi(q)] for q in Qp.vertices]
    A = Qp.array
    dQ = np.abs(A[:, None, :] - A[None, :, :]).sum(-1)
    return qi_constant(path_matrix(M.inst, imgs), dQ)


def _union_graph_check(inst, H1, H2, pairs) -> bool:
    """d_X equals the l1 sum on the given pairs, measured in the union hull graph."""
    import networkx as nx
    pts = sorted(set(H1.points) | set(H2.points))
    idx = {p: i for i, p in enumerate(pts)}
    g = nx.Graph()
    g.add_nodes_from(range(len(pts)))
    for p in pts:
        for k, U in enumerate(inst.domains):
            for y in inst.trees[U].graph.adj[p[k]]:
                q = p[:k] + (int(y),) + p[k + 1:]
                if q in idx:
                    g.add_edge(idx[p], idx[q])
    for x, y in pairs:
        if nx.shortest_path_length(g, idx[x], idx[y]) != inst.d_X(x, y):
            return False
    return True


def fellow_traveling(inst, a, b, a2, b2) -> FellowTravelReport:
    D = build_stable_diagram(inst, a, b, a2, b2)
    M, M2, t0, t1 = D.M, D.M2, D.trim0, D.trim1
    p, p2 = M.nr, M2.nr
    p0, p0p = q_nr_path(t0.Qp), q_nr_path(t1.Qp)
    B00, B01 = _omega_qi(M, t0), _omega_qi(M2, t1)
    n = max(len(p), len(p2), len(p0), len(p0p))
    dist = inst.d_X
    terms = {f"T{i}": 0 for i in range(1, 6)}
    dq2 = dq4 = 0
    seq = []
    pairs = []
    for t in range(n):
        q, q2 = _extend(p, t), _extend(p2, t)
        P0 = M.omega[q]
        P1 = D.omega0(t0.delta(q))
        P2 = D.omega0(_extend(p0, t))
        P3 = D.omega0p(D.iso(_extend(p0, t)))
        P4 = D.omega0p(t1.delta(q2))
        P5 = M2.omega[q2]
        chain = [P0, P1, P2, P3, P4, P5]
        ts = [dist(chain[i], chain[i + 1]) for i in range(5)]
        d = dist(P0, P5)
        assert d <= sum(ts)
        for i, v in enumerate(ts):
            terms[f"T{i + 1}"] = max(terms[f"T{i + 1}"], v)
        dq2 = max(dq2, t0.Qp.d(t0.delta(q), _extend(p0, t)))
        dq4 = max(dq4, t1.Qp.d(_extend(p0p, t), t1.delta(q2)))
        seq.append(d)
        pairs.append((P0, P5))
    bounds = {"T1": D.defects["top"], "T2": B00 * dq2 + B00, "T3": D.defects["middle"],
              "T4": B01 * dq4 + B01, "T5": D.defects["bottom"]}
    B0 = max(M.B0, M2.B0, B00, B01, D.Sigma, *bounds.values(), 1)
    sup = max(seq)
    checks = {f"{k}<=bound": terms[k] <= bounds[k] for k in terms}
    checks["dX_certified"] = _union_graph_check(inst, M.H, M2.H, pairs)
    ok = sup <= 5 * B0 and all(checks.values()) and all(D.checks.values())
    return FellowTravelReport(sup, B0, ok, terms, bounds, seq, D, checks)


def unit_perturbation(inst, p, rng):
    nb = inst.neighbors(p)
    return nb[int(rng.integers(len(nb)))] if nb else p


# figures -------------------------------------------------------------------

def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def figure_path(out: Path, tag: str) -> Path:
    return out.with_name(f"{out.stem}_{tag}.png")


def fig_graph(out, tag, nodes, edges, highlight=(), title=""):
    import networkx as nx
    plt = _plt()
    g = nx.Graph()
    g.add_nodes_from(range(len(nodes)))
    g.add_edges_from(edges)
    pos = nx.kamada_kawai_layout(g) if len(nodes) > 1 else {0: (0, 0)}
    fig, ax = plt.subplots(figsize=(5, 5))
    nx.draw_networkx_edges(g, pos, ax=ax, alpha=0.4)
    col = ["tab:red" if i in set(highlight) else "tab:blue" for i in range(len(nodes))]
    nx.draw_networkx_nodes(g, pos, ax=ax, node_size=30, node_color=col)
    if len(highlight) > 1:
        hl = list(highlight)
        ax.plot([pos[i][0] for i in hl], [pos[i][1] for i in hl], color="tab:red", lw=1.5)
    ax.set_title(title)
    ax.axis("off")
    path = figure_path(out, tag)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path.name


def fig_intervals(out, tag, rows, title=""):
    """rows: (label, length, [(lo, hi, kind)])."""
    plt = _plt()
    colors = {"cluster": "tab:orange", "edge": "tab:blue", "stable": "tab:green",
              "unstable": "tab:gray"}
    fig, ax = plt.subplots(figsize=(7, 1 + 0.5 * len(rows)))
    for y, (label, length, segs) in enumerate(rows):
        ax.plot([0, length], [y, y], color="black", lw=0.5)
        for lo, hi, kind in segs:
            ax.plot([lo, hi], [y, y], color=colors.get(kind, "tab:purple"), lw=6,
                    solid_capstyle="butt")
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels([r[0] for r in rows])
    ax.set_title(title)
    path = figure_path(out, tag)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path.name


def fig_series(out, tag, series: dict, hline=None, xlabel="t", ylabel="", title=""):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, ys in series.items():
        ax.plot(range(len(ys)), ys, marker="o", ms=3, label=name)
    if hline is not None:
        ax.axhline(hline[1], color="tab:red", ls="--", label=hline[0])
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.set_title(title)
    path = figure_path(out, tag)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path.name


def fig_scatter(out, tag, x, y, xlabel, ylabel, title=""):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(x, y, s=8, alpha=0.4)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    path = figure_path(out, tag)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path.name


# CLI -------------------------------------------------------------------------

class Report:
    def __init__(self, command, seed, constants=None):
        self.doc = {"schema_version": SCHEMA_VERSION, "version": __version__,
                    "command": command, "seed": seed,
                    "constants_ledger": constants or {}, "checks": [], "measurements": {},
                    "figures": []}

    def check(self, name, ok, witness=None):
        c = {"name": name, "pass": bool(ok)}
        if witness is not None and not ok:
            c["witness"] = witness
        self.doc["checks"].append(c)

    def measure(self, **kw):
        self.doc["measurements"].update(kw)

    @property
    def ok(self):
        return all(c["pass"] for c in self.doc["checks"])

    def dumps(self):
        return json.dumps(_plain(self.doc), sort_keys=True, indent=1)

    def write_table(self, path: Path):
        """Flat kind,name,value rows: checks, then scalar measurements."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "name", "value"])
            for c in self.doc["checks"]:
                w.writerow(["check", c["name"], "pass" if c["pass"] else "fail"])
            for k, v in sorted(_plain(self.doc["measurements"]).items()):
                if isinstance(v, (int, float, str, bool)) or v is None:
                    w.writerow(["measurement", k, v])


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, set, frozenset)):
        items = [_plain(v) for v in x]
        return sorted(items, key=str) if isinstance(x, (set, frozenset)) else items
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _point(s):
    return tuple(int(v) for v in s.split(","))


def _bits(s):
    return tuple(int(c) for c in s.strip())


def _load_instance(args, rng):
    if args.inst:
        return HHSInstance.from_json(json.loads(Path(args.inst).read_text()))
    return random_instance(rng)


def _endpoints(inst, args, rng):
    a = _point(args.a) if args.a else random_point(inst, rng, "entry", 2)
    b = _point(args.b) if args.b else random_point(inst, rng, "exit", 2)
    return a, b


def _load_pocset(args, rng):
    if getattr(args, "pocset", None):
        return Pocset.from_json(json.loads(Path(args.pocset).read_text()))
    return random_pocset(rng, args.walls)


def cmd_gen(args, rng, rep):
    if args.kind == "pocset":
        p = random_pocset(rng, args.walls)
        doc = p.to_json()
        rep.check("pocset_valid", validate_pocset(p).ok)
    else:
        inst = random_instance(rng)
        doc = inst.to_json()
        v = validate_instance(inst)
        rep.check("instance_valid", v.ok, v.violations)
        rep.measure(domains=inst.domains, info=v.info)
    if args.file:
        Path(args.file).write_text(json.dumps(doc, sort_keys=True, indent=1))
        rep.measure(written=args.file)


def cmd_validate(args, rng, rep):
    if args.pocset:
        p = _load_pocset(args, rng)
        v = validate_pocset(p)
        rep.check("pocset_axioms", v.ok, v.violations)
        rep.measure(info=v.info)
        return
    inst = _load_instance(args, rng)
    v = validate_instance(inst)
    rep.check("hhs_axioms", v.ok, v.violations)
    rep.measure(info=v.info, constants=inst.constants.to_json())


def cmd_dual(args, rng, rep, out):
    p = _load_pocset(args, rng)
    cc = dual_complex(p)
    rep.measure(walls=p.n, vertices=len(cc.vertices), dimension=cc.dimension, width=width(p))
    rep.check("dimension==width", cc.dimension == width(p))
    if out:
        rep.doc["figures"].append(fig_graph(out, "dual", cc.vertices, cc.edges,
                                            title=f"dual complex, {len(cc.vertices)} vertices"))


def _hull_case(args, rng):
    p = _load_pocset(args, rng)
    cc = dual_complex(p)
    if args.a and args.b:
        return cc, _bits(args.a), _bits(args.b)
    i, j = rng.choice(len(cc.vertices), 2, replace=len(cc.vertices) < 2)
    hc, ha, hb = hull_complex(cc, cc.vertices[i], cc.vertices[j])
    return hc, ha, hb


def cmd_nr_path(args, rng, rep, out):
    cc, a, b = _hull_case(args, rng)
    path = nr_path(cc, a, b)
    rep.measure(n=path.n, vertices=["".join(map(str, v)) for v in path.vertices],
                steps=[sorted(s) for s in path.steps], LInf=distance(cc, a, b, "LInf"))
    rep.check("n==LInf", path.n == distance(cc, a, b, "LInf"))
    if out:
        rep.doc["figures"].append(fig_graph(
            out, "nr_path", cc.vertices, cc.edges,
            highlight=[cc.index[v] for v in path.vertices], title=f"normal path, n={path.n}"))


def cmd_stable_moves(args, rng, rep, out):
    fails, total, ns = 0, 0, []
    for trial in range(args.trials):
        p = random_pocset(rng, args.walls)
        cc = dual_complex(p)
        i, j = rng.choice(len(cc.vertices), 2, replace=len(cc.vertices) < 2)
        hc, a, b = hull_complex(cc, cc.vertices[i], cc.vertices[j])
        for h in range(hc.n_walls):
            r = verify_stable_moves(hc, a, b, h)
            total += 1
            ns.append(r.n - r.m)
            if not r.ok:
                fails += 1
                rep.check(f"trial{trial}/wall{h}", False, r.witnesses)
    rep.check("all_pairs", fails == 0, {"failures": fails})
    rep.measure(pairs=total, failures=fails)
    if out and ns:
        rep.doc["figures"].append(fig_series(out, "n_minus_m", {"n-m": ns}, hline=("bound", 1),
                                             xlabel="pair", title="path length change"))


def cmd_stable_interval(args, rng, rep, out):
    if args.near_tree:
        g = random_near_tree(rng, args.n, 3, 1)
    else:
        g = path_graph(args.n)
    a = args.start
    b = args.end if args.end is not None else args.n
    Y = {int(v) for v in args.Y.split(",")} if args.Y else set()
    s = build_setup(g, a, b, Y, args.eps, eps_prime=args.eps_prime, E=args.E)
    t = build_stable_interval(s)
    th = thicken(t, args.r1, args.r2)
    rep.measure(clusters=t.clusters, length=t.length,
                components=[(c.kind, c.start, c.end) for c in t.components], qi=t.qi,
                cluster_blocks=th.cluster_blocks, edge_blocks=th.edge_blocks,
                degenerate=th.degenerate, delta=g.delta)
    rep.check("hausdorff==0_on_trees", t.qi["hausdorff"] == 0 or g.delta > 0)
    if out:
        rows = [("T", t.length, [(c.start, c.end, c.kind) for c in t.components]),
                ("thick", t.length, [(lo, hi, "cluster") for lo, hi in th.cluster_blocks]
                 + [(lo, hi, "edge") for lo, hi in th.edge_blocks])]
        rep.doc["figures"].append(fig_intervals(out, "interval", rows, "stable interval"))


def cmd_decompose(args, rng, rep, out):
    g = path_graph(args.n)
    Y = {int(v) for v in args.Y.split(",")} if args.Y else set()
    Y2 = {int(v) for v in args.Y2.split(",")} if args.Y2 else set(Y)
    s = build_setup(g, args.start, args.end, Y, args.eps, eps_prime=args.eps_prime, E=args.E)
    s2 = build_setup(g, args.start2, args.end2, Y2, args.eps, eps_prime=args.eps_prime, E=args.E)
    p = build_stable_pair(s, s2, args.r1, args.r2)
    r = validate_pair(p)
    rep.check("pair_valid", r.ok, r.witnesses)
    rep.check("moves<=|sym|+2", p.moves <= len(Y ^ Y2) + 2)
    rep.measure(L=p.L, moves=p.moves, pieces=[(x.s, x.e, x.sp, x.ep) for x in p.pieces],
                history=p.history)
    if out:
        rows = [("T", p.T.length, [(a, b_, "stable") for a, b_ in p.stable(0)]),
                ("T'", p.Tp.length, [(a, b_, "stable") for a, b_ in p.stable(1)])]
        rep.doc["figures"].append(fig_intervals(out, "pair", rows, f"stable pair, L={p.L}"))


def cmd_hfi(args, rng, rep, out):
    inst = _load_instance(args, rng)
    a, b = _endpoints(inst, args, rng)
    M = build_cubical_model(inst, a, b)
    for k, v in M.checks.items():
        rep.check(k, v)
    rep.measure(a=a, b=b, relevant=sorted(M.system.relevant), lengths=M.cs.lengths,
                cluster_points={f"{V}->{U}": c for (V, U), c in M.cs.hfi.cluster.items()},
                q_vertices=len(M.Q.vertices), constants=M.consts)
    rep.doc["constants_ledger"] = inst.constants.to_json()
    if out:
        Q = M.Q
        edges = [(i, Q.index[v]) for i, q in enumerate(Q.vertices) for k in range(len(q))
                 for v in [q[:k] + (q[k] + 1,) + q[k + 1:]] if v in Q.index]
        rep.doc["figures"].append(fig_graph(out, "Q", Q.vertices, edges,
                                            highlight=[Q.index[v] for v in M.nr],
                                            title=f"Q, {len(Q.vertices)} vertices"))


def cmd_trim(args, rng, rep, out):
    h = random_hfi(rng, args.domains, args.max_len)
    st = random_trim_setup(rng, h)
    segs = st.segments
    r = trim_hfi(h, st)
    ok = all(r.delta(r.xi(q)) == q for q in r.Qp.vertices)
    rep.check("delta_xi_identity", ok)
    rep.check("deleted<=B^2", r.deleted <= st.B ** 2)
    rep.check("distortion<=B^2", r.distortion <= st.B ** 2)
    rep.measure(hfi=h.to_json(), segments={U: s for U, s in segs.items()}, B=st.B,
                deleted=r.deleted, distortion=r.distortion, dropped=r.dropped,
                q=len(r.Q.vertices), q_trimmed=len(r.Qp.vertices))
    if out:
        rows = []
        for U in h.domains:
            rows.append((U, h.lengths[U], [(lo, hi, "unstable") for lo, hi in segs.get(U, [])]))
        rep.doc["figures"].append(fig_intervals(out, "segments", rows, f"trim setup, B={st.B}"))


def cmd_bicomb(args, rng, rep, out):
    inst = _load_instance(args, rng)
    a, b = _endpoints(inst, args, rng)
    if args.perturb:
        a2, b2 = (_point(s) for s in args.perturb.split(":"))
    else:
        a2, b2 = unit_perturbation(inst, a, rng), unit_perturbation(inst, b, rng)
    fr = fellow_traveling(inst, a, b, a2, b2)
    rep.check("sup<=5B0", fr.sup <= 5 * fr.B0, {"sup": fr.sup, "B0": fr.B0})
    for k, v in {**fr.diagram.checks, **fr.checks}.items():
        rep.check(k, v)
    rep.measure(a=a, b=b, a2=a2, b2=b2, **fr.to_json())
    rep.doc["constants_ledger"] = inst.constants.to_json()
    if out:
        rep.doc["figures"].append(fig_series(out, "fellow", {"d_X(G(t),G'(t))": fr.distances},
                                             hline=("5 B0", 5 * fr.B0), ylabel="distance",
                                             title="fellow traveling"))


def cmd_audit(args, rng, rep, out):
    inst = _load_instance(args, rng)
    a, b = _endpoints(inst, args, rng)
    M = build_cubical_model(inst, a, b)
    ar = audit_metrics(inst, a, b, M.cs, M.H, M.Q, seed=args.seed)
    rep.check("zero_together", ar.zero_together)
    rep.check("dX_is_l1_on_hull", ar.dx_is_l1)
    rep.measure(**ar.to_json(), hull=len(M.H), relevant=sorted(M.system.relevant))
    rep.doc["constants_ledger"] = inst.constants.to_json()
    if out:
        pts = M.H.points
        dX = M.H.l1_distances()
        P = np.array([project_psi_hat(M.cs, x, M.H) for x in pts]).reshape(len(pts), -1)
        dQ = np.abs(P[:, None, :] - P[None, :, :]).sum(-1)
        iu = np.triu_indices(len(pts), 1)
        rep.doc["figures"].append(fig_scatter(out, "dx_dq", dX[iu], dQ[iu], "d_X", "d_Q",
                                              "hull pairs"))


def make_parser():
    ap = argparse.ArgumentParser(prog="stablecube", description="stable cubulation toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="report path; figures are written next to it")
        p.add_argument("--json", action="store_true", help="print the report to stdout")
        return p

    def inst_args(p):
        p.add_argument("--inst", help="instance JSON")
        p.add_argument("--a")
        p.add_argument("--b")

    def line_args(p):
        p.add_argument("--n", type=int, default=20)
        p.add_argument("--start", type=int, default=0)
        p.add_argument("--end", type=int, default=None)
        p.add_argument("--Y", default="")
        p.add_argument("--eps", type=int, default=2)
        p.add_argument("--eps-prime", dest="eps_prime", type=int, default=0)
        p.add_argument("--E", type=int, default=2)
        p.add_argument("--r1", type=int, default=1)
        p.add_argument("--r2", type=int, default=2)

    p = common(sub.add_parser("gen", help="generate an instance or pocset"))
    p.add_argument("--kind", choices=["hhs", "pocset"], default="hhs")
    p.add_argument("--walls", type=int, default=6)
    p.add_argument("--file", help="where to write the generated document")
    p = common(sub.add_parser("validate", help="validate an instance or pocset"))
    inst_args(p)
    p.add_argument("--pocset")
    p.add_argument("--walls", type=int, default=6)
    p = common(sub.add_parser("dual", help="dual cube complex of a pocset"))
    p.add_argument("--pocset")
    p.add_argument("--walls", type=int, default=6)
    p = common(sub.add_parser("nr-path", help="normal cube path"))
    p.add_argument("--pocset")
    p.add_argument("--walls", type=int, default=6)
    p.add_argument("--a")
    p.add_argument("--b")
    v = sub.add_parser("verify", help="batch verifications")
    vs = v.add_subparsers(dest="what", required=True)
    p = common(vs.add_parser("stable-moves"))
    p.add_argument("--walls", type=int, default=8)
    p.add_argument("--trials", type=int, default=20)
    p = common(sub.add_parser("stable-interval", help="stable interval on a line or near-tree"))
    line_args(p)
    p.add_argument("--near-tree", dest="near_tree", action="store_true")
    p = common(sub.add_parser("decompose", help="stable decomposition of two setups"))
    line_args(p)
    p.add_argument("--start2", type=int, default=1)
    p.add_argument("--end2", type=int, default=None)
    p.add_argument("--Y2", default="")
    p = common(sub.add_parser("hfi", help="cubical model of a hull"))
    inst_args(p)
    p = common(sub.add_parser("trim", help="random simplicial trimming"))
    p.add_argument("--domains", type=int, default=5)
    p.add_argument("--max-len", dest="max_len", type=int, default=5)
    p = common(sub.add_parser("bicomb", help="stable diagram and fellow traveling"))
    inst_args(p)
    p.add_argument("--perturb", help="a2:b2, comma-separated coordinates")
    p = common(sub.add_parser("audit", help="metric audits on a hull"))
    inst_args(p)
    return ap


COMMANDS = {
    "gen": lambda a, r, rep, out: cmd_gen(a, r, rep),
    "validate": lambda a, r, rep, out: cmd_validate(a, r, rep),
    "dual": cmd_dual,
    "nr-path": cmd_nr_path,
    "stable-moves": cmd_stable_moves,
    "stable-interval": cmd_stable_interval,
    "decompose": cmd_decompose,
    "hfi": cmd_hfi,
    "trim": cmd_trim,
    "bicomb": cmd_bicomb,
    "audit": cmd_audit,
}


def run_command(argv) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    name = args.what if args.command == "verify" else args.command
    if name in ("stable-interval", "decompose"):
        if args.end is None:
            args.end = args.n
        if name == "decompose" and args.end2 is None:
            args.end2 = args.end
    rng = np.random.default_rng(args.seed)
    rep = Report(name, args.seed)
    out = Path(args.out) if args.out else None
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[name](args, rng, rep, out)
    except (FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, AssertionError) as e:
        rep.check("run", False, f"{type(e).__name__}: {e}")
    text = rep.dumps()
    if out:
        out.write_text(text + "\n")
        rep.write_table(out.with_suffix(".csv"))
    if args.json or not out:
        print(text)
    return 0 if rep.ok else 1


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
