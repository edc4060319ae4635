import json
from pathlib import Path

import numpy as np
import pytest

from augpd.cli import (
    ScenarioError,
    main,
    parse_scenario,
    run_scenario,
)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def test_parse_standard_scenario():
    sc = parse_scenario(SCENARIOS / "threenode_standard.toml")
    assert sc.name == "threenode-standard"
    (algo,) = sc.algorithms
    assert algo.variant == "consensus"
    assert algo.profile.node_orders == (1, 1, 1)
    assert algo.profile.edge_orders == (1, 1, 1)
    np.testing.assert_array_equal(sc.theta0, [1.8, 1.4, 1.6])


def test_parse_auxiliary_scenario():
    sc = parse_scenario(SCENARIOS / "threenode_auxiliary.toml")
    (algo,) = sc.algorithms
    p = algo.profile
    assert p.node_orders == (2, 2, 2)
    assert p.node_b == ((0.5, 0.5),) * 3
    assert p.node_a == ((2.0,),) * 3
    assert p.edge_b == ((1.0,),) * 3


def test_parse_compare_and_coupling():
    sc = parse_scenario(SCENARIOS / "threenode_compare.toml")
    assert {a.name for a in sc.algorithms} == {"standard", "auxiliary", "feedforward"}
    ff = next(a for a in sc.algorithms if a.name == "feedforward")
    assert ff.profile.edge_d == (1.0, 1.0, 1.0)

    sq = parse_scenario(SCENARIOS / "link2_coupling.toml")
    (algo,) = sq.algorithms
    assert algo.variant == "coupling_inequality"
    assert algo.profile.dual_orders == (2,)
    assert sq.problem.routing.shape == (1, 2)


def _write(tmp_path, text):
    p = tmp_path / "scenario.toml"
    p.write_text(text)
    return p


MINIMAL = """
name = "mini"
[integration]
dt = 0.002
t_end = {t_end}
equilibrium_window = 2.0
csv_stride = 50
[graph]
nodes = ["a", "b"]
edges = [["a", "b"]]
[objectives]
a = {{ kind = "quadratic", center = 0.0 }}
b = {{ kind = "quadratic", center = 1.0 }}
[initial]
theta = {{ a = 1.5, b = -0.5 }}
[algorithms.aux]
variant = "consensus"
[algorithms.aux.nodes]
default = {{ rho = 2, b = [0.5, 0.5], a = [2.0] }}
[verify]
identities = true

"""


def test_validation_errors(tmp_path):
    bad = MINIMAL.format(t_end=50.0).replace("b = [0.5, 0.5]", "b = [-0.5, 0.5]")
    with pytest.raises(Exception):
        parse_scenario(_write(tmp_path, bad))

    unknown = MINIMAL.format(t_end=50.0) + "\n[bogus]\nx = 1\n"
    with pytest.raises(ScenarioError):
        parse_scenario(_write(tmp_path, unknown))

    badvariant = MINIMAL.format(t_end=50.0).replace('variant = "consensus"', 'variant = "nope"')
    with pytest.raises(ScenarioError):
        parse_scenario(_write(tmp_path, badvariant))

    negative_lambda = MINIMAL.format(t_end=50.0).replace(
        'theta = { a = 1.5, b = -0.5 }',
        'theta = { a = 1.5, b = -0.5 }\nlambda = { default = -1.0 }',
    )
    with pytest.raises(ScenarioError):
        parse_scenario(_write(tmp_path, negative_lambda))

    with pytest.raises(ScenarioError):
        parse_scenario(_write(tmp_path, "not [valid toml"))

    coupling_missing = """
[graph]
nodes = ["a"]
[objectives]
a = { kind = "quadratic" }
[algorithms.q]
variant = "coupling_inequality"
"""
    with pytest.raises(ScenarioError):
        parse_scenario(_write(tmp_path, coupling_missing))


def test_run_scenario_outputs(tmp_path):
    sc = parse_scenario(_write(tmp_path, MINIMAL.format(t_end=50.0)))
    out = tmp_path / "out"
    summary = run_scenario(sc, out)
    assert summary["all_passed"]
    report = json.loads((out / "aux_report.json").read_text())
    assert report["converged"] and report["passed"]
    assert report["identities"]["passed"]
    # Equilibrium at the centroid of the two quadratics.
    np.testing.assert_allclose(report["equilibrium"]["theta"], 0.5, atol=1e-6)
    assert report["reference_check"]["max_theta_gap"] < 1e-6

    csv = (out / "aux_trajectory.csv").read_text().splitlines()
    assert csv[0] == "t,entity,quantity,value"
    quantities = {line.split(",")[2] for line in csv[1:]}
    assert {"theta", "mu", "xi_1", "xi_2", "zeta_1", "u_2"} <= quantities
    entities = {line.split(",")[1] for line in csv[1:]}
    assert entities == {"a", "b", "e1"}


def test_run_scenario_deterministic(tmp_path):
    sc = parse_scenario(_write(tmp_path, MINIMAL.format(t_end=50.0)))
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    run_scenario(sc, out1)
    run_scenario(sc, out2)
    for name in ("aux_trajectory.csv", "aux_report.json", "summary.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_unsettled_scenario_fails(tmp_path):
    sc = parse_scenario(_write(tmp_path, MINIMAL.format(t_end=2.0)))
    out = tmp_path / "short"
    summary = run_scenario(sc, out)
    assert not summary["all_passed"]
    report = json.loads((out / "aux_report.json").read_text())
    assert not report["converged"] or not report["transient"]["settled"]


def test_cli_main_run_and_verify(tmp_path):
    scenario = _write(tmp_path, MINIMAL.format(t_end=50.0))
    out = tmp_path / "cli-out"
    assert main(["run", str(scenario), "--out", str(out)]) == 0
    assert (out / "aux_trajectory.csv").exists()
    assert (out / "summary.json").exists()

    out2 = tmp_path / "cli-verify"
    assert main(["verify", str(scenario), "--out", str(out2)]) == 0
    assert not (out2 / "aux_trajectory.csv").exists()
    report = json.loads((out2 / "aux_report.json").read_text())
    assert "optimality" in report  # verify mode forces the optimality suite on

    assert main(["run", str(tmp_path / "missing.toml"), "--out", str(out)]) == 2


def test_cli_out_env_var(tmp_path, monkeypatch):
    scenario = _write(tmp_path, MINIMAL.format(t_end=50.0))
    env_out = tmp_path / "env-out"
    monkeypatch.setenv("AUGPD_OUT", str(env_out))
    monkeypatch.chdir(tmp_path)
    assert main(["run", str(scenario)]) == 0
    assert (env_out / "summary.json").exists()


def test_comparison_summary(tmp_path):
    sc = parse_scenario(SCENARIOS / "threenode_compare.toml")
    out = tmp_path / "cmp"
    summary = run_scenario(sc, out, mode="verify")
    assert summary["all_passed"]
    comp = summary["comparison"]
    assert comp["oscillation_count_ranking"][-1] == "standard"
    assert comp["settling_time_ranking"][-1] == "standard"
