import math

import numpy as np
import pytest

from augpd import (
    AugmentationProfile,
    EquilibriumMismatchError,
    NominalController,
    PerturbedController,
    ReferenceSolution,
    SinePerturbation,
    SystemState,
    UnsupportedVariantError,
    build_closed_loop,
    control_cost_matrix,
    equilibrium_state,
    evaluate_cost,
    initial_state,
    integrate,
    outputs_of,
    perturbation_excess_check,
    reference_from_trajectory,
    reference_solution,
    sample_perturbation,
    state_cost,
    storage_value,
    uniform_profile,
    value_identity_check,
    verify_identities,
)
from tests.test_dynamics import constrained_profile, coupling_profile

THETA0 = np.array([1.8, 1.4, 1.6])


def tree_profile():
    return AugmentationProfile(
        node_orders=(2,) * 4, node_b=((0.5, 0.5),) * 4, node_a=((2.0,),) * 4,
        node_d=(0.0,) * 4,
        edge_orders=(2,) * 3, edge_b=((1.0, 1.0),) * 3, edge_a=((1.5,),) * 3,
        edge_d=(0.0,) * 3,
    )


@pytest.fixture(scope="module")
def tree_run(tree_problem):
    profile = tree_profile()
    s0 = initial_state(profile, np.array([2.0, -1.0, 0.5, 3.0]))
    loop = build_closed_loop(tree_problem, profile, "consensus")
    traj = integrate(loop, s0, 2e-3, 80.0)
    ref, converged = reference_from_trajectory(traj, tree_problem, profile, 2500)
    assert converged
    return profile, s0, traj, ref


# ---------------------------------------------------------------------------
# Control cost matrix


def test_control_cost_entries():
    profile = uniform_profile(1, 0, node_rho=2, node_b=(0.5, 0.5), node_a=(2.0,))
    r = control_cost_matrix(profile, "consensus")
    np.testing.assert_array_equal(r.block("node", 0), [0.5])  # 1/(2*2*0.5)

    trivial = uniform_profile(2, 1)
    r0 = control_cost_matrix(trivial, "consensus")
    assert r0.diagonal.size == 0
    assert r0.block("node", 0).size == 0


def test_control_cost_feedforward_blocks():
    profile = uniform_profile(
        2, 1, node_rho=2, node_b=(1.0, 1.0), node_a=(2.0,), edge_d=1.0
    )
    r = control_cost_matrix(profile, "feedforward")
    np.testing.assert_array_equal(r.block("node", 0), [0.25])  # b/(2a)
    np.testing.assert_array_equal(r.block("feedforward", 0), [0.5])  # 1/(2d)

    # Zero-gain edges carry no feed-forward channel at all.
    mixed = AugmentationProfile(
        node_orders=(1, 1, 1), node_b=((1.0,),) * 3, node_a=((),) * 3,
        node_d=(0.0,) * 3,
        edge_orders=(1, 1, 1), edge_b=((1.0,),) * 3, edge_a=((),) * 3,
        edge_d=(1.0, 0.0, 2.0),
    )
    rm = control_cost_matrix(mixed, "feedforward")
    assert ("feedforward", 1) not in rm.blocks
    np.testing.assert_array_equal(rm.diagonal, [0.5, 0.25])


def test_control_cost_rejects_misuse():
    ff = uniform_profile(2, 1, edge_d=1.0)
    with pytest.raises(UnsupportedVariantError):
        control_cost_matrix(ff, "consensus")
    with pytest.raises(ValueError):
        control_cost_matrix(ff, "bogus")
    constrained = constrained_profile()
    with pytest.raises(UnsupportedVariantError):
        control_cost_matrix(constrained, "feedforward")


# ---------------------------------------------------------------------------
# State cost and storage


def test_state_cost_zero_at_equilibrium(three_node_constrained):
    profile = constrained_profile()
    ref = reference_solution(three_node_constrained)
    state = equilibrium_state(ref, profile)
    out = outputs_of(state, profile, three_node_constrained)
    terms = state_cost(state, out, ref, profile, "consensus", three_node_constrained)
    for name, vals in terms.items():
        np.testing.assert_allclose(vals, 0.0, atol=1e-12, err_msg=name)


def test_sigma1_quadratic_shift(tree_problem):
    profile = tree_profile()
    ref = reference_solution(tree_problem)
    delta = 0.7
    state = equilibrium_state(ref, profile)
    shifted = SystemState(state.xi.copy(), state.tau, state.zeta)
    for s in profile.xi_starts:
        shifted.xi[s] += delta
    out = outputs_of(shifted, profile, tree_problem)
    terms = state_cost(shifted, out, ref, profile, "consensus", tree_problem)
    # Unit quadratic: gradient difference 2*delta times deviation delta.
    np.testing.assert_allclose(terms["sigma1"], 2 * delta**2, atol=1e-12)


def test_storage_examples(tree_problem):
    profile = tree_profile()
    ref = reference_solution(tree_problem)
    assert storage_value(equilibrium_state(ref, profile), ref, profile) == 0.0

    one = uniform_profile(1, 0, node_b=(0.5,))
    ref1 = ReferenceSolution(np.array([0.0]), np.zeros(1), np.zeros(0), 0.0, 1e-12)
    assert storage_value(SystemState(np.array([1.0]), np.zeros(0), np.zeros(0)), ref1, one) == 1.0


# ---------------------------------------------------------------------------
# Cost evaluation


def test_value_identity_tree(tree_run, tree_problem):
    profile, s0, traj, ref = tree_run
    report = value_identity_check(traj, ref, profile, "consensus", tree_problem)
    assert report.passed and report.rel_error < 1e-4
    # Total is the exact sum of its parts.
    b = report.breakdown
    resum = b.control_cost + sum(sum(v) for v in b.sigma_integrals.values())
    assert b.total == resum
    assert b.tail_estimate < 1e-10


def test_equilibrium_mismatch_raises(tree_run, tree_problem):
    profile, s0, traj, ref = tree_run
    bad = ReferenceSolution(
        ref.theta_star + 1.0, ref.lambda_star, ref.mu_star, math.inf, math.nan
    )
    with pytest.raises(EquilibriumMismatchError):
        evaluate_cost(traj, bad, profile, "consensus", tree_problem)


def test_zero_perturbation_identical_breakdown(tree_run, tree_problem):
    profile, s0, traj, ref = tree_run
    r = control_cost_matrix(profile, "consensus")
    v0 = SinePerturbation(np.zeros(r.diagonal.size), np.ones(r.diagonal.size), 10.0)
    ctrl = PerturbedController(NominalController(profile), v0)
    loop = build_closed_loop(tree_problem, profile, "consensus", ctrl)
    traj0 = integrate(loop, s0, 2e-3, 80.0)
    b0 = evaluate_cost(traj0, ref, profile, "consensus", tree_problem)
    b = evaluate_cost(traj, ref, profile, "consensus", tree_problem)
    assert b0.total == b.total and b0.control_cost == b.control_cost
    assert b0.sigma_integrals == b.sigma_integrals


def test_perturbation_excess_small_batch(tree_problem):
    profile = tree_profile()
    s0 = initial_state(profile, np.array([2.0, -1.0, 0.5, 3.0]))
    report = perturbation_excess_check(
        tree_problem, profile, "consensus", s0, 2e-3, 80.0, n_samples=3, seed=5
    )
    assert report.passed
    assert report.max_rel_error < 1e-3
    assert report.all_nonnegative and report.n_not_applicable == 0


def test_sample_perturbation_properties():
    rng = np.random.default_rng(0)
    v = sample_perturbation(rng, 5, 1e-3, 100.0)
    assert v.t_off == 25.0
    assert np.all((v.amplitudes >= 0.01) & (v.amplitudes <= 0.5))
    assert np.all((v.frequencies >= 0.5) & (v.frequencies <= 5.0))
    # Integer periods: the signal vanishes at switch-off.
    np.testing.assert_allclose(np.sin(v.frequencies * v.t_off), 0.0, atol=1e-9)
    # Closed-form energy matches a fine quadrature.
    r_diag = np.linspace(0.5, 1.5, 5)
    t = np.linspace(0, 100.0, 2_000_001)
    num = np.trapezoid((v.batch(t) ** 2 * r_diag).sum(axis=1), t)
    assert abs(num - v.weighted_energy(r_diag)) < 1e-7 * v.weighted_energy(r_diag)
    # Determinism under the same seed.
    v2 = sample_perturbation(np.random.default_rng(0), 5, 1e-3, 100.0)
    np.testing.assert_array_equal(v.amplitudes, v2.amplitudes)

    with pytest.raises(ValueError):
        sample_perturbation(rng, 2, 1e-3, 1.0)  # horizon too short


# ---------------------------------------------------------------------------
# Identities on the remaining variants (small horizons; acceptance runs the
# full-tolerance versions)


def test_identities_constrained(three_node_constrained):
    profile = constrained_profile()
    s0 = initial_state(profile, THETA0, lam0=np.array([0.2, 0.0, 0.0]))
    loop = build_closed_loop(three_node_constrained, profile, "consensus")
    traj = integrate(loop, s0, 1e-3, 80.0)
    ref, converged = reference_from_trajectory(traj, three_node_constrained, profile, 5000)
    assert converged
    # The settled fixed point satisfies the optimality conditions.
    assert ref.kkt_residual < 1e-8
    rep = verify_identities(traj, ref, profile, "consensus", three_node_constrained)
    assert rep.passed
    assert rep.dual_bound_min_slack >= -1e-8
    assert rep.integrand_min >= -1e-8
    val = value_identity_check(traj, ref, profile, "consensus", three_node_constrained)
    assert val.passed


def test_identities_unconstrained_have_no_dual_terms(tree_run, tree_problem):
    profile, s0, traj, ref = tree_run
    rep = verify_identities(traj, ref, profile, "consensus", tree_problem)
    assert rep.passed
    assert rep.dual_bound_min_slack is None
    assert rep.storage_gradient_max_residual is None


def test_sigma_integral_signs(three_node_constrained, one_link_problem):
    """Unpaired state cost terms integrate non-negative; the dual coupling
    term is only sign-definite jointly with the constraint-drive term."""
    runs = [
        (
            three_node_constrained, constrained_profile(), "consensus",
            initial_state(constrained_profile(), THETA0, lam0=np.array([0.2, 0, 0])),
        ),
        (
            one_link_problem, coupling_profile(), "coupling_inequality",
            initial_state(coupling_profile(), np.zeros(2), lam0=np.zeros(1)),
        ),
    ]
    for problem, profile, variant, s0 in runs:
        loop = build_closed_loop(problem, profile, variant)
        traj = integrate(loop, s0, 1e-3, 80.0)
        ref, _ = reference_from_trajectory(traj, problem, profile, 5000)
        b = evaluate_cost(traj, ref, profile, variant, problem)
        for name in ("sigma1", "sigma3", "sigma5", "sigma_edge", "laplacian"):
            if name in b.sigma_integrals:
                assert min(b.sigma_integrals[name]) >= -1e-8, name
        paired = sum(b.sigma_integrals["sigma2"]) + sum(b.sigma_integrals["sigma4"])
        assert paired >= -1e-8


def test_coupling_value_identity(one_link_problem):
    profile = coupling_profile()
    s0 = initial_state(profile, np.zeros(2), lam0=np.zeros(1))
    loop = build_closed_loop(one_link_problem, profile, "coupling_inequality")
    traj = integrate(loop, s0, 1e-3, 80.0)
    ref, converged = reference_from_trajectory(traj, one_link_problem, profile, 5000)
    assert converged
    assert ref.kkt_residual < 1e-8
    rep = verify_identities(traj, ref, profile, "coupling_inequality", one_link_problem)
    assert rep.passed
    assert rep.interconnection_max_residual is None  # no consensus interconnection
    val = value_identity_check(traj, ref, profile, "coupling_inequality", one_link_problem)
    assert val.passed
