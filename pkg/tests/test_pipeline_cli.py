import json

import numpy as np
import pytest

from stablecube.pipeline_cli import (
    NotAPerturbation,
    bicombing_path,
    build_cubical_model,
    build_stable_diagram,
    fellow_traveling,
    qi_constant,
    run_command,
    unit_perturbation,
)
from stablecube.toy_hhs import prod_instance, random_instance, random_point

A, B = (0, 0, 0), (0, 5, 7)


@pytest.fixture(scope="module")
def prod():
    return prod_instance()


def test_qi_constant():
    assert qi_constant([], []) == 1
    assert qi_constant([0, 2, 4], [0, 1, 2]) == 2
    assert qi_constant([0, 1, 2], [0, 1, 2]) == 1


def test_trivial_model(prod):
    M = build_cubical_model(prod, A, A)
    assert len(M.Q.vertices) == 1
    bp = bicombing_path(M)
    assert bp.points == [A]


def test_prod_model(prod):
    M = build_cubical_model(prod, A, B)
    assert len(M.Q.vertices) == 24
    assert M.Q.xhat == (0, 0, 0) and M.Q.yhat == (0, 3, 5)
    assert all(M.checks.values())
    assert M.nr == [(0, 0, 0), (0, 1, 1), (0, 2, 2), (0, 3, 3), (0, 3, 4), (0, 3, 5)]
    bp = bicombing_path(M)
    assert len(bp.points) - 1 == 5
    assert bp.points[0] == A and bp.points[-1] == B


def test_generated_model_seed7():
    rng = np.random.default_rng(7)
    inst = random_instance(rng)
    a = random_point(inst, rng, "entry", 2)
    b = random_point(inst, rng, "exit", 2)
    M = build_cubical_model(inst, a, b)
    assert all(M.checks.values())
    pts = [M.omega[q] for q in M.nr]
    assert pts[0] == M.H.gate(a) and pts[-1] == M.H.gate(b)


def test_identity_diagram(prod):
    D = build_stable_diagram(prod, A, B, A, B)
    assert D.Sigma == 0
    assert D.trim0.deleted == D.trim1.deleted == 0
    assert all(D.iso(q) == q for q in D.trim0.Qp.vertices)


def test_prod_endpoint_move(prod):
    D = build_stable_diagram(prod, A, B, (0, 1, 0), B)
    assert all(D.checks.values())
    assert max(D.trim0.deleted, D.trim1.deleted) <= D.S0 ** 2
    fr = fellow_traveling(prod, A, B, (0, 1, 0), B)
    assert fr.ok and fr.sup <= 5 * fr.B0


def test_prod_shared_domain_move(prod):
    fr = fellow_traveling(prod, A, B, A, (0, 5, 6))
    assert fr.ok
    assert all(fr.diagram.checks.values())


def test_fellow_traveling_identical(prod):
    fr = fellow_traveling(prod, A, B, A, B)
    assert fr.sup == 0 and fr.ok


def test_not_a_perturbation(prod):
    with pytest.raises(NotAPerturbation):
        build_stable_diagram(prod, A, B, (0, 3, 0), B)


def test_generated_fellow_traveling():
    for s in range(6):
        rng = np.random.default_rng(1000 + s)
        inst = random_instance(rng)
        a = random_point(inst, rng, "entry", 2)
        b = random_point(inst, rng, "exit", 2)
        a2, b2 = unit_perturbation(inst, a, rng), unit_perturbation(inst, b, rng)
        fr = fellow_traveling(inst, a, b, a2, b2)
        assert fr.ok, fr.to_json()
        for k, v in fr.terms.items():
            assert v <= fr.bounds[k]


# CLI ------------------------------------------------------------------------

def test_cli_gen_and_validate(tmp_path):
    inst = tmp_path / "inst.json"
    rep = tmp_path / "gen.json"
    assert run_command(["gen", "--seed", "1", "--file", str(inst), "--out", str(rep)]) == 0
    assert inst.exists() and rep.exists()
    assert run_command(["validate", "--inst", str(inst), "--out", str(tmp_path / "v.json")]) == 0


def test_cli_usage_errors(tmp_path):
    assert run_command([]) == 2
    assert run_command(["nope"]) == 2
    assert run_command(["hfi", "--inst", str(tmp_path / "missing.json")]) == 2


def test_cli_reports_and_figures(tmp_path):
    cases = [
        ["dual", "--walls", "5"],
        ["nr-path", "--walls", "6"],
        ["verify", "stable-moves", "--walls", "6", "--trials", "5"],
        ["stable-interval", "--Y", "2,3,10"],
        ["decompose", "--Y", "2,3,10", "--Y2", "2,3,10,15", "--end2", "19"],
        ["hfi"],
        ["trim"],
        ["bicomb"],
        ["audit"],
    ]
    for argv in cases:
        out = tmp_path / f"{argv[0]}_{argv[-1]}.json"
        code = run_command([*argv, "--seed", "2", "--out", str(out)])
        assert code == 0, argv
        doc = json.loads(out.read_text())
        assert {"schema_version", "command", "seed", "constants_ledger", "checks",
                "measurements"} <= set(doc)
        assert all(c["pass"] for c in doc["checks"])
        assert out.with_suffix(".csv").exists()
        assert doc["figures"]
        for f in doc["figures"]:
            assert (out.parent / f).exists()


def test_cli_bicomb_prod(tmp_path):
    inst = tmp_path / "prod.json"
    inst.write_text(prod_instance().dumps())
    out = tmp_path / "b.json"
    code = run_command(["bicomb", "--inst", str(inst), "--a", "0,0,0", "--b", "0,5,7",
                        "--perturb", "0,1,0:0,5,7", "--out", str(out)])
    assert code == 0
    m = json.loads(out.read_text())["measurements"]
    assert {"Sigma", "B0", "sup"} <= set(m)
    assert m["sup"] <= 5 * m["B0"]


def test_cli_failure_exit_code(tmp_path):
    inst = tmp_path / "prod.json"
    inst.write_text(prod_instance().dumps())
    # not a unit perturbation: the run records a failed check
    code = run_command(["bicomb", "--inst", str(inst), "--a", "0,0,0", "--b", "0,5,7",
                        "--perturb", "0,3,0:0,5,7", "--out", str(tmp_path / "x.json")])
    assert code == 1


def test_cli_deterministic(tmp_path):
    for argv in (["bicomb"], ["audit"], ["trim"], ["verify", "stable-moves", "--trials", "4"]):
        texts = []
        for k in range(2):
            out = tmp_path / f"run{k}" / "det.json"
            assert run_command([*argv, "--seed", "5", "--out", str(out)]) == 0
            texts.append(out.read_bytes())
        assert texts[0] == texts[1], argv
