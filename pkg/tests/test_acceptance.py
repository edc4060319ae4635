"""Acceptance suite: every criterion prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from augpd import (
    build_closed_loop,
    closed_loop,
    initial_state,
    integrate,
    perturbation_excess_check,
    reference_from_trajectory,
    transient_metrics,
    uniform_profile,
    value_identity_check,
    verify_identities,
)
from augpd.cli import parse_scenario, run_scenario
from tests.conftest import THREE_NODE_OPT
from tests.test_convex import grid_refinement_qp_oracle
from tests.test_dynamics import constrained_profile
from tests.test_cost import tree_profile

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
THETA0_3 = np.array([1.8, 1.4, 1.6])
THETA0_4 = np.array([2.0, -1.0, 0.5, 3.0])
DT, T_END = 1e-3, 100.0


def _report(criterion: str, passed: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")
    assert passed, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def threenode_runs(three_node_problem):
    """The three-variant comparison at the mandated step and horizon."""
    runs = {}
    specs = {
        "standard": ("consensus", uniform_profile(3, 3)),
        "auxiliary": (
            "consensus",
            uniform_profile(3, 3, node_rho=2, node_b=(0.5, 0.5), node_a=(2.0,)),
        ),
        "feedforward": ("feedforward", uniform_profile(3, 3, edge_d=1.0)),
    }
    for name, (variant, profile) in specs.items():
        loop = build_closed_loop(three_node_problem, profile, variant)
        s0 = initial_state(profile, THETA0_3)
        start = time.perf_counter()
        traj = integrate(loop, s0, DT, T_END)
        elapsed = time.perf_counter() - start
        ref, converged = reference_from_trajectory(
            traj, three_node_problem, profile, 5000
        )
        metrics = transient_metrics(traj, ref.theta_star)
        runs[name] = dict(
            profile=profile, variant=variant, traj=traj, ref=ref,
            converged=converged, metrics=metrics, seconds=elapsed,
        )
    return runs


@pytest.fixture(scope="module")
def tree_nominal(tree_problem):
    profile = tree_profile()
    s0 = initial_state(profile, THETA0_4)
    loop = build_closed_loop(tree_problem, profile, "consensus")
    traj = integrate(loop, s0, DT, T_END)
    ref, converged = reference_from_trajectory(traj, tree_problem, profile, 5000)
    assert converged
    return profile, s0, traj, ref


def test_criterion_1_reproduction(threenode_runs):
    details = []
    ok = True
    for name, run in threenode_runs.items():
        gap = float(np.max(np.abs(run["traj"].outputs.theta[-1] - THREE_NODE_OPT)))
        ok &= run["converged"] and gap < 1e-5 and run["seconds"] < 10.0
        details.append(f"{name}: gap={gap:.2e} t={run['seconds']:.2f}s")
    _report("1 (three-node reproduction)", ok, "; ".join(details))


def test_criterion_2_transient_ordering(threenode_runs):
    m = {name: run["metrics"] for name, run in threenode_runs.items()}
    osc_ok = (
        m["standard"].oscillation_count > m["auxiliary"].oscillation_count
        and m["standard"].oscillation_count > m["feedforward"].oscillation_count
    )
    settle_ok = (
        m["standard"].settling_time > m["auxiliary"].settling_time
        and m["standard"].settling_time > m["feedforward"].settling_time
    )
    detail = ", ".join(
        f"{k}: osc={v.oscillation_count} settle={v.settling_time:.2f}"
        for k, v in m.items()
    )
    _report("2 (oscillation and settling ordering)", osc_ok and settle_ok, detail)


def test_criterion_3_value_identity(tree_nominal, tree_problem):
    profile, s0, traj, ref = tree_nominal
    rep = value_identity_check(traj, ref, profile, "consensus", tree_problem, tol=1e-4)
    _report(
        "3 (nominal cost equals initial storage)",
        rep.passed,
        f"J={rep.cost:.8f} V0={rep.storage:.8f} rel={rep.rel_error:.2e} < 1e-4",
    )


def test_criterion_4_perturbation_excess(tree_problem):
    profile = tree_profile()
    s0 = initial_state(profile, THETA0_4)
    rep = perturbation_excess_check(
        tree_problem, profile, "consensus", s0, DT, T_END,
        n_samples=20, seed=0, tol=1e-3,
    )
    _report(
        "4 (perturbation cost excess)",
        rep.passed and rep.n_not_applicable == 0,
        f"20 samples, max rel err={rep.max_rel_error:.2e} < 1e-3, "
        f"all excesses nonnegative={rep.all_nonnegative}",
    )


def test_criterion_5_feedforward(tree_problem):
    profile = replace(tree_profile(), edge_d=(1.0, 1.0, 1.0))
    s0 = initial_state(profile, THETA0_4)
    loop = build_closed_loop(tree_problem, profile, "feedforward")
    traj = integrate(loop, s0, DT, T_END)
    ref, converged = reference_from_trajectory(traj, tree_problem, profile, 5000)
    val = value_identity_check(traj, ref, profile, "feedforward", tree_problem, tol=1e-4)
    alt = integrate(closed_loop(profile, tree_problem), s0, DT, T_END)
    sup = float(np.max(np.abs(alt.outputs.theta - traj.outputs.theta)))
    pert = perturbation_excess_check(
        tree_problem, profile, "feedforward", s0, DT, T_END,
        n_samples=20, seed=1, tol=1e-3,
    )
    ok = converged and val.passed and sup < 1e-6 and pert.passed
    _report(
        "5 (feed-forward cost identity and form agreement)",
        ok,
        f"rel={val.rel_error:.2e} < 1e-4, form sup-gap={sup:.2e} < 1e-6, "
        f"excess max rel={pert.max_rel_error:.2e}",
    )


def test_criterion_6_coupling(one_link_problem):
    profile = uniform_profile(
        2, 0, node_rho=2, node_b=(0.5, 0.5), node_a=(2.0,),
        dual_count=1, dual_rho=2, dual_b=(1.0, 1.0), dual_a=(1.0,),
    )
    s0 = initial_state(profile, np.zeros(2), lam0=np.zeros(1))
    loop = build_closed_loop(one_link_problem, profile, "coupling_inequality")
    traj = integrate(loop, s0, DT, T_END)
    ref, converged = reference_from_trajectory(traj, one_link_problem, profile, 5000)
    val = value_identity_check(
        traj, ref, profile, "coupling_inequality", one_link_problem, tol=1e-4
    )
    oracle = grid_refinement_qp_oracle(one_link_problem)
    gap = float(np.max(np.abs(ref.theta_star - oracle)))
    pert = perturbation_excess_check(
        one_link_problem, profile, "coupling_inequality", s0, DT, T_END,
        n_samples=20, seed=2, tol=1e-3,
    )
    ok = converged and val.passed and gap < 1e-4 and pert.passed
    _report(
        "6 (coupled-inequality identity and oracle agreement)",
        ok,
        f"rel={val.rel_error:.2e} < 1e-4, oracle gap={gap:.2e} < 1e-4, "
        f"excess max rel={pert.max_rel_error:.2e}",
    )


def test_criterion_7_identity_suite():
    files = sorted(SCENARIOS.glob("*.toml"))
    assert files, "no bundled scenarios found"
    worst: dict[str, float] = {}
    ok = True
    for path in files:
        sc = parse_scenario(path)
        for spec in sc.algorithms:
            loop = build_closed_loop(sc.problem, spec.profile, spec.variant)
            s0 = initial_state(
                spec.profile,
                sc.theta0,
                sc.lam0 if spec.profile.n_duals else None,
                sc.mu0 if spec.profile.n_edges else None,
            )
            traj = integrate(loop, s0, sc.integration.dt, sc.integration.t_end)
            ref, converged = reference_from_trajectory(
                traj, sc.problem, spec.profile, sc.integration.window_samples
            )
            rep = verify_identities(traj, ref, spec.profile, spec.variant, sc.problem)
            ok &= converged and rep.passed
            key = f"{path.stem}/{spec.name}"
            if rep.interconnection_max_residual is not None:
                worst["coupling"] = max(worst.get("coupling", 0.0), rep.interconnection_max_residual)
                ok &= rep.interconnection_max_residual < 1e-10
            worst["bregman_eq"] = max(
                worst.get("bregman_eq", 0.0), rep.bregman_equality_max_residual
            )
            ok &= rep.bregman_equality_max_residual < 1e-10
            if rep.dual_bound_min_slack is not None:
                worst["bound_slack"] = min(
                    worst.get("bound_slack", math.inf), rep.dual_bound_min_slack
                )
                ok &= rep.dual_bound_min_slack >= -1e-8
            worst["integrand_min"] = min(
                worst.get("integrand_min", math.inf), rep.integrand_min
            )
            ok &= rep.integrand_min >= -1e-8
            assert converged, f"{key} did not converge"
    detail = (
        f"{len(files)} scenarios; interconnection max={worst.get('coupling', 0):.1e}, "
        f"gradient-gap eq max={worst['bregman_eq']:.1e}, "
        f"min bound slack={worst.get('bound_slack', 0):.1e}, "
        f"min integrand={worst['integrand_min']:.1e}"
    )
    _report("7 (identity and bound suite)", ok, detail)


def test_criterion_8_numerical_hygiene(three_node_problem, three_node_constrained, tmp_path):
    # Gradient finite differences (per kind, 100 points each).
    from tests.test_convex import KINDS, in_domain_points

    rng = np.random.default_rng(123)
    fd_ok = True
    h = 1e-6
    for f in KINDS:
        for p in in_domain_points(f, rng, 100):
            if math.isfinite(f.domain_lo) and p - h <= f.domain_lo + 1e-12:
                continue
            fd = (f.value(p + h) - f.value(p - h)) / (2 * h)
            g = f.grad(p)
            fd_ok &= abs(fd - g) <= 1e-6 * max(1.0, abs(g))

    # Observed integrator order on the three-node scenario.
    profile = uniform_profile(3, 3, node_rho=2, node_b=(0.5, 0.5), node_a=(2.0,))
    loop = closed_loop(profile, three_node_problem)
    s0 = initial_state(profile, THETA0_3)
    ends = {dt: integrate(loop, s0, dt, 4.0).states[-1] for dt in (0.032, 0.016, 0.008)}
    e1 = np.linalg.norm(ends[0.032] - ends[0.016])
    e2 = np.linalg.norm(ends[0.016] - ends[0.008])
    order = math.log2(e1 / e2)

    # Dual states never dip below the projection guard.
    cprof = constrained_profile()
    cloop = closed_loop(cprof, three_node_constrained)
    ctraj = integrate(
        cloop, initial_state(cprof, THETA0_3, lam0=np.array([0.2, 0.0, 0.0])), DT, T_END
    )
    tau_min = float(ctraj.states[:, cloop.nonneg_slice].min())

    # Byte-identical reruns of a bundled scenario.
    sc = parse_scenario(SCENARIOS / "threenode_auxiliary.toml")
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    run_scenario(sc, out1)
    run_scenario(sc, out2)
    identical = all(
        (out1 / n).read_bytes() == (out2 / n).read_bytes()
        for n in ("auxiliary_trajectory.csv", "auxiliary_report.json", "summary.json")
    )

    ok = fd_ok and order >= 3.0 and tau_min >= -1e-12 and identical
    _report(
        "8 (numerical hygiene)",
        ok,
        f"finite-diff ok={fd_ok}, observed order={order:.2f} >= 3, "
        f"min dual state={tau_min:.1e} >= -1e-12, reruns byte-identical={identical}",
    )
