import json

import numpy as np
import pytest

from stablecube.hfi_cubulator import build_q_complex, validate_hfi
from stablecube.toy_hhs import (
    ConstantLedger,
    HHSInstance,
    InconsistentPoint,
    NotInHull,
    audit_metrics,
    build_interval_system,
    check_item9,
    collapse_system,
    collapse_system_auto,
    hone_omega,
    hull,
    lift_omega_hat,
    passing_up_table,
    prod_instance,
    project_psi_hat,
    random_instance,
    random_point,
    relevant_domains,
    validate_instance,
)

A, B = (0, 0, 0), (0, 5, 7)


@pytest.fixture(scope="module")
def prod():
    P = prod_instance()
    H = hull(P, A, B)
    cs = collapse_system_auto(build_interval_system(P, A, B))
    return P, H, cs


def test_ledger_defaults_and_roundtrip():
    led = ConstantLedger.defaults()
    assert led["K0"] == 4 and led["K"] > led["K0"] and not led.check()
    led.measure("M0", 3, source="unit")
    back = ConstantLedger.from_json(json.loads(json.dumps(led.to_json())))
    assert back.values == led.values and back.tags["M0"] == "measured"
    bad = led.copy()
    bad.configure("K", 2)
    assert bad.check()


def test_prod_valid(prod):
    P, _, _ = prod
    rep = validate_instance(P)
    assert rep.ok
    # colorability over the domains with nontrivial curve graphs
    assert rep.info["colors"] == 2


def test_prod_hull_is_full_grid(prod):
    _, H, _ = prod
    assert len(H) == 6 * 8
    assert {p[1:] for p in H.points} == {(u, v) for u in range(6) for v in range(8)}


def test_hull_rejects_inconsistent():
    P = prod_instance()
    with pytest.raises(InconsistentPoint):
        hull(P, (0, 0, 0), (0, 9, 0))
    # S has a single vertex
    with pytest.raises(InconsistentPoint):
        hull(P, (1, 0, 0), B)


def test_prod_relevant():
    P = prod_instance()
    assert set(relevant_domains(P, A, B, 3)) == {"U", "V"}


def test_prod_intervals(prod):
    P, _, cs = prod
    sysm = cs.system
    assert sysm.intervals["U"].T.phi == list(range(6))
    assert sysm.intervals["V"].T.phi == list(range(8))
    assert not sysm.intervals["U"].Y and not sysm.intervals["V"].Y
    assert cs.r1 == 1
    assert cs.hfi.lengths["U"] == 3 and cs.hfi.lengths["V"] == 5


def test_prod_projection(prod):
    _, H, cs = prod
    assert project_psi_hat(cs, (0, 2, 3), H) == (0, 1, 2)
    with pytest.raises(NotInHull):
        project_psi_hat(cs, (0, 9, 9), H)


def test_prod_lift_is_exact(prod):
    _, H, cs = prod
    Q = build_q_complex(cs.hfi)
    assert len(Q.vertices) == 24
    for q in Q.vertices:
        assert project_psi_hat(cs, lift_omega_hat(cs, q, H), H) == q


def test_prod_audit(prod):
    P, H, cs = prod
    Q = build_q_complex(cs.hfi)
    assert Q.d(Q.xhat, Q.yhat) == 8
    assert sum(P.d(U, A[k], B[k]) for k, U in enumerate(P.domains) if P.d(U, A[k], B[k]) >= 3) == 12
    rep = audit_metrics(P, A, B, cs, H, Q)
    assert rep.zero_together and rep.dx_is_l1 and rep.M0 == 0


def test_degenerate_hull_audit():
    P = prod_instance()
    sysm = build_interval_system(P, A, A)
    cs = collapse_system(sysm)
    rep = audit_metrics(P, A, A, cs)
    assert rep.n_points == 1 and rep.n_pairs == 0 and rep.zero_together


def test_random_instances_pipeline():
    rng = np.random.default_rng(11)
    for _ in range(8):
        inst = random_instance(rng)
        assert validate_instance(inst).ok
        a = random_point(inst, rng, "entry", 2)
        b = random_point(inst, rng, "exit", 2)
        assert inst.consistent(a) and inst.consistent(b)
        H = hull(inst, a, b)
        assert a in H and b in H
        sysm = build_interval_system(inst, a, b)
        assert sysm.checks["ok"]
        cs = collapse_system_auto(sysm)
        assert validate_hfi(cs.hfi).ok
        Q = build_q_complex(cs.hfi)
        assert not check_item9(cs, Q)
        # every q is hit by some hull point, and the honed lift collapses back to it
        image = {project_psi_hat(cs, x, H) for x in H.points}
        assert image == set(Q.vertices)
        for q in Q.vertices:
            lift = hone_omega(cs, q)
            assert all(cs.q[U][t] == q[cs.hfi.domains.index(U)] for U, t in lift.items())
        rep = audit_metrics(inst, a, b, cs, H, Q)
        assert rep.zero_together and rep.dx_is_l1 and rep.M0 is not None


def test_instance_json_roundtrip():
    inst = random_instance(np.random.default_rng(4))
    back = HHSInstance.from_json(json.loads(inst.dumps()))
    assert back.dumps() == inst.dumps()


def test_passing_up_table_monotone():
    rng = np.random.default_rng(6)
    inst = random_instance(rng)
    pairs = [(random_point(inst, rng, "entry", 2), random_point(inst, rng, "exit", 2)) for _ in range(5)]
    t = passing_up_table(inst, pairs, [1, 2, 4, 8])
    assert t[1] >= t[2] >= t[4] >= t[8]
