"""Scenario runner: parse a TOML config, build problem and profiles,
simulate the requested algorithm variants, evaluate transient metrics,
costs, and identity verifiers, and write CSV trajectories plus JSON reports.

Usage:
    augpd run scenario.toml [--out DIR] [--seed N] [--dt X] [--t-end Y]
    augpd verify scenario.toml [...]

``verify`` forces all applicable verifier suites on and skips the CSV
export. The output directory defaults to $AUGPD_OUT or ./augpd-out/<name>.
Outputs are byte-identical across reruns with the same config and seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import cost as costmod
from .convex import (
    ConsensusProblem,
    CouplingProblem,
    SolverError,
    function_from_spec,
    reference_solution,
)
from .dynamics import (
    AugmentationProfile,
    SystemState,
    closed_loop,
    initial_state,
)
from .graph import Graph, incidence_matrix, validate_incidence, validate_routing
from .simulate import integrate, transient_metrics

__all__ = ["ScenarioError", "Scenario", "parse_scenario", "run_scenario", "main"]


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


def _strict(table: dict, allowed: set[str], where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ScenarioError(f"unknown keys {sorted(unknown)} in {where}")


@dataclass(frozen=True)
class IntegrationParams:
    dt: float = 1e-3
    t_end: float = 100.0
    equilibrium_window: float = 5.0
    csv_stride: int = 100

    @property
    def window_samples(self) -> int:
        return max(2, int(round(self.equilibrium_window / self.dt)))


@dataclass(frozen=True)
class VerifyOptions:
    """Which verifier suites run after each nominal simulation.

    ``identities`` covers the exact algebraic relations and bound slacks
    along the trajectory; ``optimality`` runs the cost-equals-storage check
    and the seeded perturbation-excess experiment for the algorithm's
    variant.
    """

    identities: bool = True
    optimality: bool = False
    perturbations: int = 20
    value_tol: float = 1e-4
    excess_tol: float = 1e-3


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    variant: str
    profile: AugmentationProfile


@dataclass(frozen=True)
class Scenario:
    """Fully validated run description."""

    name: str
    seed: int
    integration: IntegrationParams
    verify: VerifyOptions
    graph: Graph | None
    problem: ConsensusProblem | CouplingProblem
    node_ids: tuple[str, ...]
    coupling_ids: tuple[str, ...]  # edge ids (consensus) or link ids (coupling)
    algorithms: tuple[AlgorithmSpec, ...]
    theta0: np.ndarray
    lam0: np.ndarray
    mu0: np.ndarray


# ---------------------------------------------------------------------------
# Parsing


def _parse_per_entity(table: dict, ids: tuple[str, ...], default, where: str, cast=float):
    """Resolve {default = x, <id> = y} tables into one value per entity."""
    if not isinstance(table, dict):
        raise ScenarioError(f"{where} must be a table")
    _strict(table, set(ids) | {"default"}, where)
    base = table.get("default", default)
    out = []
    for e in ids:
        val = table.get(e, base)
        if val is None:
            raise ScenarioError(f"{where}: no value for {e!r} and no default")
        out.append(cast(val))
    return out


_STACK_KEYS = {"rho", "b", "a", "d"}


def _parse_stack(spec: dict, where: str, allow_d: bool):
    _strict(spec, _STACK_KEYS if allow_d else _STACK_KEYS - {"d"}, where)
    rho = int(spec.get("rho", 1))
    b = tuple(float(v) for v in spec.get("b", (1.0,) * max(rho, 0)))
    a = tuple(float(v) for v in spec.get("a", ()))
    d = float(spec.get("d", 0.0))
    return rho, b, a, d


def _parse_stacks(table: dict, ids, where, allow_d, default_rho=1):
    """Per-entity (rho, b, a, d) with a 'default' entry and id overrides."""
    table = dict(table or {})
    _strict(table, set(ids) | {"default"}, where)
    base = table.pop("default", {"rho": default_rho})
    rho0, b0, a0, d0 = _parse_stack(base, f"{where}.default", allow_d)
    rhos, bs, as_, ds = [], [], [], []
    for e in ids:
        if e in table:
            r, b, a, d = _parse_stack(table[e], f"{where}.{e}", allow_d)
        else:
            r, b, a, d = rho0, b0, a0, d0
        rhos.append(r)
        bs.append(b)
        as_.append(a)
        ds.append(d)
    return tuple(rhos), tuple(bs), tuple(as_), tuple(ds)


def _build_profile(
    algo_table: dict, name: str, variant: str, scenario_ctx: dict
) -> AugmentationProfile:
    node_ids = scenario_ctx["node_ids"]
    coupling_ids = scenario_ctx["coupling_ids"]
    constrained = scenario_ctx["constrained_nodes"]
    where = f"algorithms.{name}"
    _strict(algo_table, {"variant", "nodes", "duals", "edges"}, where)

    n_rho, n_b, n_a, _ = _parse_stacks(
        algo_table.get("nodes"), node_ids, f"{where}.nodes", allow_d=False
    )
    if variant == "coupling_inequality":
        if "edges" in algo_table:
            raise ScenarioError(f"{where}: coupling variant carries no edge stacks")
        d_rho, d_b, d_a, _ = _parse_stacks(
            algo_table.get("duals"), coupling_ids, f"{where}.duals", allow_d=False
        )
        return AugmentationProfile(
            node_orders=n_rho, node_b=n_b, node_a=n_a, node_d=(0.0,) * len(node_ids),
            dual_orders=d_rho, dual_b=d_b, dual_a=d_a, dual_d=(0.0,) * len(coupling_ids),
        )

    e_rho, e_b, e_a, e_d = _parse_stacks(
        algo_table.get("edges"), coupling_ids, f"{where}.edges", allow_d=True
    )
    if variant == "consensus" and any(d != 0 for d in e_d):
        raise ScenarioError(
            f"{where}: nonzero edge feed-forward needs variant = 'feedforward'"
        )
    if variant == "feedforward" and constrained:
        raise ScenarioError(
            f"{where}: the feedforward variant requires an unconstrained problem"
        )
    if constrained:
        dual_table = dict(algo_table.get("duals") or {})
        _strict(dual_table, set(constrained) | {"default"}, f"{where}.duals")
        filled = {"default": dual_table.get("default", {"rho": 1})}
        filled.update({k: v for k, v in dual_table.items() if k != "default"})
        d_rho_c, d_b_c, d_a_c, _ = _parse_stacks(
            filled, tuple(constrained), f"{where}.duals", allow_d=False
        )
        by_id = dict(zip(constrained, zip(d_rho_c, d_b_c, d_a_c)))
        d_rho, d_b, d_a = [], [], []
        for nid in node_ids:
            if nid in by_id:
                r, b, a = by_id[nid]
                d_rho.append(r)
                d_b.append(b)
                d_a.append(a)
            else:
                d_rho.append(0)
                d_b.append(())
                d_a.append(())
        dual = dict(
            dual_orders=tuple(d_rho), dual_b=tuple(d_b), dual_a=tuple(d_a),
            dual_d=(0.0,) * len(node_ids),
        )
    else:
        if algo_table.get("duals"):
            raise ScenarioError(f"{where}: dual stacks need local constraints")
        dual = dict(dual_orders=(), dual_b=(), dual_a=(), dual_d=())
    return AugmentationProfile(
        node_orders=n_rho, node_b=n_b, node_a=n_a, node_d=(0.0,) * len(node_ids),
        edge_orders=e_rho, edge_b=e_b, edge_a=e_a, edge_d=e_d, **dual,
    )


_TOP_KEYS = {
    "name", "seed", "integration", "graph", "links", "objectives",
    "constraints", "link_constraints", "initial", "algorithms", "verify",
}


def parse_scenario(path: str | Path) -> Scenario:
    """Parse and fully validate a scenario file; unknown keys are rejected."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: TOML syntax error: {exc}") from exc
    _strict(raw, _TOP_KEYS, str(path))

    name = str(raw.get("name", path.stem))
    seed = int(raw.get("seed", 0))

    integ_raw = raw.get("integration", {})
    _strict(integ_raw, {"dt", "t_end", "equilibrium_window", "csv_stride"}, "integration")
    integration = IntegrationParams(
        dt=float(integ_raw.get("dt", 1e-3)),
        t_end=float(integ_raw.get("t_end", 100.0)),
        equilibrium_window=float(integ_raw.get("equilibrium_window", 5.0)),
        csv_stride=int(integ_raw.get("csv_stride", 100)),
    )
    if integration.dt <= 0 or integration.t_end <= 0 or integration.csv_stride < 1:
        raise ScenarioError("integration parameters must be positive")

    verify_raw = raw.get("verify", {})
    _strict(
        verify_raw,
        {"identities", "optimality", "perturbations", "value_tol", "excess_tol"},
        "verify",
    )
    verify = VerifyOptions(
        identities=bool(verify_raw.get("identities", True)),
        optimality=bool(verify_raw.get("optimality", False)),
        perturbations=int(verify_raw.get("perturbations", 20)),
        value_tol=float(verify_raw.get("value_tol", 1e-4)),
        excess_tol=float(verify_raw.get("excess_tol", 1e-3)),
    )

    algo_raw = raw.get("algorithms")
    if not algo_raw or not isinstance(algo_raw, dict):
        raise ScenarioError("scenario needs at least one [algorithms.<name>] table")
    variants = {
        a: str(t.get("variant", "consensus")) for a, t in algo_raw.items()
    }
    for a, v in variants.items():
        if v not in costmod.VARIANTS:
            raise ScenarioError(f"algorithms.{a}: unknown variant {v!r}")
    coupling_mode = any(v == "coupling_inequality" for v in variants.values())
    if coupling_mode and not all(v == "coupling_inequality" for v in variants.values()):
        raise ScenarioError("coupling_inequality cannot be mixed with graph variants")

    graph = None
    if coupling_mode:
        graph_raw = raw.get("graph", {})
        _strict(graph_raw, {"nodes"}, "graph")
        node_ids = tuple(str(n) for n in graph_raw.get("nodes", ()))
        if not node_ids:
            raise ScenarioError("coupling scenarios need [graph] nodes")
        links_raw = raw.get("links")
        if not links_raw:
            raise ScenarioError("coupling scenarios need a [links] table")
        _strict(links_raw, {"ids", "routing"}, "links")
        coupling_ids = tuple(str(l) for l in links_raw.get("ids", ()))
        routing = validate_routing(
            np.asarray(links_raw.get("routing", ()), dtype=float), len(node_ids)
        )
        if routing.shape[0] != len(coupling_ids):
            raise ScenarioError("links.routing must have one row per link id")
        if "constraints" in raw:
            raise ScenarioError("coupling scenarios use [link_constraints], not [constraints]")
        lc_raw = raw.get("link_constraints")
        if not lc_raw:
            raise ScenarioError("coupling scenarios need [link_constraints]")
        _strict(lc_raw, set(coupling_ids), "link_constraints")
        missing = [l for l in coupling_ids if l not in lc_raw]
        if missing:
            raise ScenarioError(f"link_constraints missing for {missing}")
        objectives = _parse_objectives(raw, node_ids)
        problem = CouplingProblem(
            objectives, routing,
            tuple(function_from_spec(lc_raw[l]) for l in coupling_ids),
        )
        constrained_nodes: tuple[str, ...] = ()
    else:
        graph_raw = raw.get("graph")
        if not graph_raw:
            raise ScenarioError("scenario needs a [graph] table")
        _strict(graph_raw, {"nodes", "edges", "edge_ids", "incidence"}, "graph")
        node_ids = tuple(str(n) for n in graph_raw.get("nodes", ()))
        edges = tuple((str(e[0]), str(e[1])) for e in graph_raw.get("edges", ()))
        graph = Graph(node_ids, edges, tuple(graph_raw.get("edge_ids", ())))
        coupling_ids = graph.edge_ids
        if "incidence" in graph_raw:
            a = validate_incidence(
                np.asarray(graph_raw["incidence"], dtype=float), len(node_ids)
            )
            if a.shape[1] != len(coupling_ids):
                raise ScenarioError("incidence override must have one column per edge")
        else:
            a = incidence_matrix(graph)
        if "link_constraints" in raw:
            raise ScenarioError("graph scenarios use [constraints], not [link_constraints]")
        objectives = _parse_objectives(raw, node_ids)
        cons_raw = raw.get("constraints", {})
        _strict(cons_raw, set(node_ids), "constraints")
        constraints = tuple(
            function_from_spec(cons_raw[n]) if n in cons_raw else None for n in node_ids
        )
        problem = ConsensusProblem(objectives, a, constraints)
        constrained_nodes = tuple(n for n in node_ids if n in cons_raw)

    ctx = {
        "node_ids": node_ids,
        "coupling_ids": coupling_ids,
        "constrained_nodes": constrained_nodes,
    }
    algorithms = []
    for aname, table in algo_raw.items():
        profile = _build_profile(table, aname, variants[aname], ctx)
        algorithms.append(AlgorithmSpec(aname, variants[aname], profile))

    init_raw = raw.get("initial", {})
    _strict(init_raw, {"theta", "lambda", "mu"}, "initial")
    theta0 = np.asarray(
        _parse_per_entity(init_raw.get("theta", {"default": 0.0}), node_ids, None, "initial.theta")
    )
    dual_ids = coupling_ids if coupling_mode else node_ids
    lam0 = np.asarray(
        _parse_per_entity(init_raw.get("lambda", {"default": 0.0}), dual_ids, 0.0, "initial.lambda")
    )
    if np.any(lam0 < 0):
        raise ScenarioError("initial.lambda entries must be non-negative")
    if coupling_mode:
        if "mu" in init_raw:
            raise ScenarioError("coupling scenarios have no mu states")
        mu0 = np.zeros(0)
    else:
        mu0 = np.asarray(
            _parse_per_entity(init_raw.get("mu", {"default": 0.0}), coupling_ids, 0.0, "initial.mu")
        )
    return Scenario(
        name=name, seed=seed, integration=integration, verify=verify, graph=graph,
        problem=problem, node_ids=node_ids, coupling_ids=coupling_ids,
        algorithms=tuple(algorithms), theta0=theta0, lam0=lam0, mu0=mu0,
    )


def _parse_objectives(raw, node_ids):
    obj_raw = raw.get("objectives")
    if not obj_raw:
        raise ScenarioError("scenario needs an [objectives] table")
    _strict(obj_raw, set(node_ids), "objectives")
    missing = [n for n in node_ids if n not in obj_raw]
    if missing:
        raise ScenarioError(f"objectives missing for nodes {missing}")
    return tuple(function_from_spec(obj_raw[n]) for n in node_ids)


# ---------------------------------------------------------------------------
# Running


def _initial_state_for(scenario: Scenario, spec: AlgorithmSpec) -> SystemState:
    p = spec.profile
    lam0 = scenario.lam0
    if p.n_duals == 0:
        lam0 = None
    mu0 = scenario.mu0 if p.n_edges else None
    return initial_state(p, scenario.theta0, lam0, mu0)


def _csv_rows(scenario, spec, traj, loop):
    p = spec.profile
    stride = scenario.integration.csv_stride
    idx = range(0, len(traj.times), stride)
    out = traj.outputs
    states = traj.states
    controls = traj.controls
    node_ids = scenario.node_ids
    cids = scenario.coupling_ids
    off_tau = p.xi_dim
    off_zeta = p.xi_dim + p.tau_dim

    # Control channel labels aligned with the control vector layout.
    chan_entity: list[str] = []
    chan_label: list[str] = []
    if spec.variant == "feedforward":
        for i, r in enumerate(p.node_orders):
            for k in range(2, r + 1):
                chan_entity.append(node_ids[i])
                chan_label.append(f"u_{k}")
        for j, d in enumerate(p.edge_d):
            if d > 0:
                chan_entity.append(cids[j])
                chan_label.append("uff")
        for j, r in enumerate(p.edge_orders):
            for k in range(2, r + 1):
                chan_entity.append(cids[j])
                chan_label.append(f"ucheck_{k}")
    else:
        for i, r in enumerate(p.node_orders):
            for k in range(2, r + 1):
                chan_entity.append(node_ids[i])
                chan_label.append(f"u_{k}")
        dual_ids = cids if spec.variant == "coupling_inequality" else node_ids
        for i, r in enumerate(p.dual_orders):
            for k in range(2, r + 1):
                chan_entity.append(dual_ids[i])
                chan_label.append(f"uhat_{k}")
        for j, r in enumerate(p.edge_orders):
            for k in range(2, r + 1):
                chan_entity.append(cids[j])
                chan_label.append(f"ucheck_{k}")

    rows = ["t,entity,quantity,value"]
    coupling = spec.variant == "coupling_inequality"
    for s in idx:
        t = float(traj.times[s])
        for i, nid in enumerate(node_ids):
            rows.append(f"{t!r},{nid},theta,{float(out.theta[s, i])!r}")
            if not coupling and p.n_duals and p.dual_orders[i]:
                rows.append(f"{t!r},{nid},lambda,{float(out.lam[s, i])!r}")
            st = p.xi_starts[i]
            for k in range(p.node_orders[i]):
                rows.append(f"{t!r},{nid},xi_{k + 1},{float(states[s, st + k])!r}")
            if not coupling and p.n_duals and p.dual_orders[i]:
                ts_ = p.tau_starts[i]
                for k in range(p.dual_orders[i]):
                    rows.append(
                        f"{t!r},{nid},tau_{k + 1},{float(states[s, off_tau + ts_ + k])!r}"
                    )
        for j, cid in enumerate(cids):
            if coupling:
                rows.append(f"{t!r},{cid},lambda,{float(out.lam[s, j])!r}")
                ts_ = p.tau_starts[j]
                for k in range(p.dual_orders[j]):
                    rows.append(
                        f"{t!r},{cid},tau_{k + 1},{float(states[s, off_tau + ts_ + k])!r}"
                    )
            else:
                rows.append(f"{t!r},{cid},mu,{float(out.mu[s, j])!r}")
                zs = p.zeta_starts[j]
                for k in range(p.edge_orders[j]):
                    rows.append(
                        f"{t!r},{cid},zeta_{k + 1},{float(states[s, off_zeta + zs + k])!r}"
                    )
        for c, (ent, lab) in enumerate(zip(chan_entity, chan_label)):
            rows.append(f"{t!r},{ent},{lab},{float(controls[s, c])!r}")
    return "\n".join(rows) + "\n"


def _run_algorithm(scenario: Scenario, spec: AlgorithmSpec, mode: str, out_dir: Path):
    integ = scenario.integration
    verify = scenario.verify
    problem = scenario.problem
    result: dict = {
        "scenario": scenario.name,
        "algorithm": spec.name,
        "variant": spec.variant,
        "seed": scenario.seed,
        "integration": {"dt": integ.dt, "t_end": integ.t_end},
    }
    ok = True
    loop = costmod.build_closed_loop(problem, spec.profile, spec.variant)
    state0 = _initial_state_for(scenario, spec)
    traj = integrate(loop, state0, integ.dt, integ.t_end)
    window = min(integ.window_samples, len(traj) - 1)
    reference, converged = costmod.reference_from_trajectory(
        traj, problem, spec.profile, window
    )
    result["converged"] = bool(converged)
    result["equilibrium"] = {
        "theta": [float(v) for v in reference.theta_star],
        "lambda": [float(v) for v in reference.lambda_star],
        "mu": [float(v) for v in reference.mu_star],
        "kkt_residual": reference.kkt_residual,
    }
    ok &= converged

    try:
        oracle = reference_solution(problem)
        result["reference_check"] = {
            "theta_star_oracle": [float(v) for v in oracle.theta_star],
            "max_theta_gap": float(
                np.max(np.abs(oracle.theta_star - reference.theta_star))
            ),
        }
    except SolverError as exc:
        result["reference_check"] = {"error": str(exc)}

    metrics = transient_metrics(traj, reference.theta_star)
    result["transient"] = {
        "settling_time": metrics.settling_time,
        "overshoot": metrics.overshoot,
        "oscillation_count": metrics.oscillation_count,
        "settled": metrics.settled,
        "band": metrics.band,
        "degenerate": metrics.degenerate,
    }
    ok &= metrics.settled or metrics.degenerate

    if converged:
        breakdown = costmod.evaluate_cost(
            traj, reference, spec.profile, spec.variant, problem
        )
        result["cost"] = breakdown.to_json_dict()
        if verify.identities:
            report = costmod.verify_identities(
                traj, reference, spec.profile, spec.variant, problem
            )
            result["identities"] = report.to_json_dict()
            ok &= report.passed
        if verify.optimality:
            value = costmod.value_identity_check(
                traj, reference, spec.profile, spec.variant, problem,
                tol=verify.value_tol,
            )
            pert = costmod.perturbation_excess_check(
                problem, spec.profile, spec.variant, state0, integ.dt, integ.t_end,
                n_samples=verify.perturbations, seed=scenario.seed,
                tol=verify.excess_tol, window=window,
            )
            opt: dict = {
                "value": value.to_json_dict(),
                "perturbations": pert.to_json_dict(),
            }
            ok &= value.passed and pert.passed
            if spec.variant == "feedforward":
                # Cross-check the feed-forward and Laplacian-feedback forms.
                alt = integrate(
                    closed_loop(spec.profile, problem), state0, integ.dt, integ.t_end
                )
                sup = float(np.max(np.abs(alt.outputs.theta - traj.outputs.theta)))
                opt["form_agreement_sup"] = sup
                ok &= sup < 1e-6
            result["optimality"] = opt

    result["passed"] = bool(ok)
    if mode == "run":
        csv_path = out_dir / f"{spec.name}_trajectory.csv"
        csv_path.write_text(_csv_rows(scenario, spec, traj, loop))
    (out_dir / f"{spec.name}_report.json").write_text(
        json.dumps(result, indent=2, sort_keys=True) + "\n"
    )
    return result


def run_scenario(scenario: Scenario, out_dir: str | Path, mode: str = "run") -> dict:
    """Run every algorithm in the scenario; returns the summary dict.

    Exit status convention: summary["all_passed"] is True only when every
    algorithm converged and every enabled verification passed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    if len(scenario.algorithms) == 1:
        spec = scenario.algorithms[0]
        results[spec.name] = _run_algorithm(scenario, spec, mode, out)
    else:
        with ThreadPoolExecutor(max_workers=len(scenario.algorithms)) as pool:
            futures = {
                spec.name: pool.submit(_run_algorithm, scenario, spec, mode, out)
                for spec in scenario.algorithms
            }
            results = {name: f.result() for name, f in futures.items()}

    summary: dict = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "algorithms": {
            name: {
                "variant": r["variant"],
                "converged": r["converged"],
                "settling_time": r["transient"]["settling_time"],
                "overshoot": r["transient"]["overshoot"],
                "oscillation_count": r["transient"]["oscillation_count"],
                "passed": r["passed"],
            }
            for name, r in results.items()
        },
        "all_passed": all(r["passed"] for r in results.values()),
    }
    if len(results) > 1:
        by_settling = sorted(results, key=lambda n: results[n]["transient"]["settling_time"])
        by_osc = sorted(results, key=lambda n: results[n]["transient"]["oscillation_count"])
        summary["comparison"] = {
            "settling_time_ranking": by_settling,
            "oscillation_count_ranking": by_osc,
        }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------------------
# Entry point


def _resolve_out(args, scenario_name: str) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("AUGPD_OUT")
    if env:
        return Path(env)
    return Path("augpd-out") / scenario_name


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="augpd",
        description="Simulate augmented primal-dual optimization dynamics and "
        "verify their transient-cost identities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, desc in (
        ("run", "simulate, export trajectories, and report"),
        ("verify", "run only the verifier suites (no CSV export)"),
    ):
        p = sub.add_parser(cmd, help=desc)
        p.add_argument("scenario", help="path to a scenario TOML file")
        p.add_argument("--out", help="output directory (default: $AUGPD_OUT or ./augpd-out/<name>)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--dt", type=float, help="override the integration step")
        p.add_argument("--t-end", type=float, help="override the horizon")

    args = parser.parse_args(argv)
    try:
        scenario = parse_scenario(args.scenario)
    except (ScenarioError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    integ = scenario.integration
    if args.dt is not None:
        integ = replace(integ, dt=args.dt)
    if args.t_end is not None:
        integ = replace(integ, t_end=args.t_end)
    scenario = replace(scenario, integration=integ)
    if args.command == "verify":
        verify = replace(scenario.verify, identities=True, optimality=True)
        scenario = replace(scenario, verify=verify)

    out_dir = _resolve_out(args, scenario.name)
    try:
        summary = run_scenario(scenario, out_dir, mode=args.command)
    except Exception as exc:  # structured diagnostic, nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name, info in summary["algorithms"].items():
        status = "ok" if info["passed"] else "FAIL"
        print(
            f"{name:>16s} [{info['variant']}] settling={info['settling_time']:.3f} "
            f"oscillations={info['oscillation_count']} {status}"
        )
    print(f"reports written to {out_dir}")
    return 0 if summary["all_passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
