"""Scalar convex function catalog, Bregman divergence, KKT residuals, and
centralized reference solvers that produce ground-truth optimal points.

Every function exposes closed-form value and derivative and accepts floats or
ndarrays (elementwise). Domains are open half-lines ``p > lo``; evaluating at
or below ``lo`` raises :class:`DomainError` instead of silently returning
inf/nan, so trajectory integration can fail loudly when it leaves the domain.

The reference solvers are deliberately independent of the dynamical-system
code: consensus problems reduce to a one-dimensional problem solved by
bisection on the summed gradient, and coupled-inequality problems are solved
by projected gradient descent with a Dykstra projection onto the feasible
slab intersection. Their outputs feed the test oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "InfeasibleProblemError",
    "SolverError",
    "ScalarConvexFunction",
    "Quadratic",
    "Exponential",
    "NegLog",
    "Affine",
    "FunctionSum",
    "function_from_spec",
    "eval_and_grad",
    "bregman",
    "ConsensusProblem",
    "CouplingProblem",
    "kkt_residual",
    "ReferenceSolution",
    "reference_solution",
]

# Open-domain guard: evaluation requires p > lo + margin.
DOMAIN_MARGIN = 1e-12


class DomainError(ValueError):
    """Evaluation outside a function's domain."""

    def __init__(self, message: str, boundary: float):
        super().__init__(message)
        self.boundary = boundary


class InfeasibleProblemError(ValueError):
    """No strictly feasible point was found."""


class SolverError(RuntimeError):
    """A reference solver failed to converge."""

    def __init__(self, message: str, iterates: list | None = None):
        super().__init__(message)
        self.iterates = iterates or []


class ScalarConvexFunction:
    """Base class: convex, continuously differentiable scalar function."""

    @property
    def domain_lo(self) -> float:
        return -math.inf

    def value(self, p):
        raise NotImplementedError

    def grad(self, p):
        raise NotImplementedError

    def _check_domain(self, p):
        lo = self.domain_lo
        if lo > -math.inf and np.min(p) <= lo + DOMAIN_MARGIN:
            raise DomainError(
                f"{type(self).__name__} evaluated at {np.min(p)!r}, "
                f"domain requires p > {lo!r}",
                boundary=lo,
            )


@dataclass(frozen=True)
class Quadratic(ScalarConvexFunction):
    """w (p - c)^2"""

    center: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("quadratic weight must be non-negative for convexity")

    def value(self, p):
        return self.weight * (p - self.center) ** 2

    def grad(self, p):
        return 2.0 * self.weight * (p - self.center)


@dataclass(frozen=True)
class Exponential(ScalarConvexFunction):
    """w exp(s p)"""

    rate: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("exponential weight must be non-negative for convexity")

    def value(self, p):
        return self.weight * np.exp(self.rate * p)

    def grad(self, p):
        return self.weight * self.rate * np.exp(self.rate * p)


@dataclass(frozen=True)
class NegLog(ScalarConvexFunction):
    """-w log(p - c), defined for p > c"""

    shift: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("neg-log weight must be non-negative for convexity")

    @property
    def domain_lo(self) -> float:
        return self.shift

    def value(self, p):
        self._check_domain(p)
        return -self.weight * np.log(p - self.shift)

    def grad(self, p):
        self._check_domain(p)
        return -self.weight / (p - self.shift)


@dataclass(frozen=True)
class Affine(ScalarConvexFunction):
    """m p + k"""

    slope: float = 1.0
    intercept: float = 0.0

    def value(self, p):
        return self.slope * p + self.intercept

    def grad(self, p):
        return self.slope * np.ones_like(np.asarray(p, dtype=float)) if np.ndim(p) else self.slope


@dataclass(frozen=True)
class FunctionSum(ScalarConvexFunction):
    """Sum of catalog functions (itself convex)."""

    terms: tuple[ScalarConvexFunction, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ValueError("FunctionSum needs at least one term")

    @property
    def domain_lo(self) -> float:
        return max(t.domain_lo for t in self.terms)

    def value(self, p):
        return sum(t.value(p) for t in self.terms)

    def grad(self, p):
        return sum(t.grad(p) for t in self.terms)


_KINDS = {
    "quadratic": (Quadratic, {"center", "weight"}),
    "exponential": (Exponential, {"rate", "weight"}),
    "neglog": (NegLog, {"shift", "weight"}),
    "affine": (Affine, {"slope", "intercept"}),
}


def function_from_spec(spec: dict) -> ScalarConvexFunction:
    """Build a function from a plain dict, e.g. parsed from a config file.

    ``{"kind": "quadratic", "center": 0.5}``; a ``sum`` kind takes a list of
    sub-specs under ``terms``. Unknown kinds or parameters are rejected.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"function spec must be a table with a 'kind' key: {spec!r}")
    kind = spec["kind"]
    if kind == "sum":
        extra = set(spec) - {"kind", "terms"}
        if extra:
            raise ValueError(f"unknown keys {sorted(extra)} in sum function spec")
        return FunctionSum(tuple(function_from_spec(t) for t in spec.get("terms", ())))
    if kind not in _KINDS:
        raise ValueError(f"unknown function kind {kind!r}")
    cls, allowed = _KINDS[kind]
    extra = set(spec) - allowed - {"kind"}
    if extra:
        raise ValueError(f"unknown keys {sorted(extra)} in {kind} function spec")
    return cls(**{k: float(v) for k, v in spec.items() if k != "kind"})


def eval_and_grad(f: ScalarConvexFunction, p):
    """Closed-form (value, gradient) at ``p``."""
    return f.value(p), f.grad(p)


def bregman(f: ScalarConvexFunction, p, q):
    """Bregman divergence ``f(p) - f(q) - f'(q) (p - q)``; non-negative."""
    return f.value(p) - f.value(q) - f.grad(q) * (p - q)


# ---------------------------------------------------------------------------
# Problem containers


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ConsensusProblem:
    """min sum_i F_i(theta_i)  s.t.  G_i(theta_i) <= 0,  A^T theta = 0.

    ``incidence`` couples the per-node estimates through the edges; its
    columns must sum to zero. ``constraints`` holds one optional scalar
    inequality per node (None means unconstrained at that node).
    """

    objectives: tuple[ScalarConvexFunction, ...]
    incidence: np.ndarray
    constraints: tuple[ScalarConvexFunction | None, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "incidence", _frozen(self.incidence))
        n = len(self.objectives)
        if not self.constraints:
            object.__setattr__(self, "constraints", (None,) * n)
        else:
            object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.incidence.shape[0] != n:
            raise ValueError(
                f"incidence has {self.incidence.shape[0]} rows for {n} objectives"
            )
        if len(self.constraints) != n:
            raise ValueError("need one constraint slot per node (None allowed)")

    @property
    def n_nodes(self) -> int:
        return len(self.objectives)

    @property
    def n_edges(self) -> int:
        return self.incidence.shape[1]

    @property
    def constrained_nodes(self) -> tuple[int, ...]:
        return tuple(i for i, g in enumerate(self.constraints) if g is not None)

    def objective_grad(self, theta: np.ndarray) -> np.ndarray:
        return np.array([f.grad(theta[i]) for i, f in enumerate(self.objectives)])

    def constraint_values(self, theta: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_nodes)
        for i, g in enumerate(self.constraints):
            if g is not None:
                out[i] = g.value(theta[i])
        return out

    def constraint_grads(self, theta: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_nodes)
        for i, g in enumerate(self.constraints):
            if g is not None:
                out[i] = g.grad(theta[i])
        return out


@dataclass(frozen=True)
class CouplingProblem:
    """min sum_i F_i(theta_i)  s.t.  H_j((R theta)_j) <= 0 per link j.

    ``routing`` is the |E| x |V| non-negative matrix mapping node variables
    to link loads; each link carries one scalar convex constraint.
    """

    objectives: tuple[ScalarConvexFunction, ...]
    routing: np.ndarray
    link_constraints: tuple[ScalarConvexFunction, ...]

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "link_constraints", tuple(self.link_constraints))
        object.__setattr__(self, "routing", _frozen(self.routing))
        if self.routing.shape != (len(self.link_constraints), len(self.objectives)):
            raise ValueError(
                f"routing shape {self.routing.shape} does not match "
                f"{len(self.link_constraints)} links x {len(self.objectives)} nodes"
            )

    @property
    def n_nodes(self) -> int:
        return len(self.objectives)

    @property
    def n_links(self) -> int:
        return len(self.link_constraints)

    def objective_grad(self, theta: np.ndarray) -> np.ndarray:
        return np.array([f.grad(theta[i]) for i, f in enumerate(self.objectives)])

    def link_values(self, omega: np.ndarray) -> np.ndarray:
        return np.array([h.value(omega[j]) for j, h in enumerate(self.link_constraints)])

    def link_grads(self, omega: np.ndarray) -> np.ndarray:
        return np.array([h.grad(omega[j]) for j, h in enumerate(self.link_constraints)])


Problem = ConsensusProblem | CouplingProblem


# ---------------------------------------------------------------------------
# KKT residual


def kkt_residual(problem: Problem, theta, lam=None, mu=None) -> float:
    """Max-norm KKT violation at a candidate primal/dual point.

    Collects stationarity, complementary slackness, primal feasibility, and
    dual feasibility; negative multipliers contribute to the residual rather
    than being rejected.
    """
    theta = np.asarray(theta, dtype=float)
    if isinstance(problem, ConsensusProblem):
        if theta.shape != (problem.n_nodes,):
            raise ValueError(f"theta shape {theta.shape}, expected ({problem.n_nodes},)")
        lam = np.zeros(problem.n_nodes) if lam is None else np.asarray(lam, dtype=float)
        mu = np.zeros(problem.n_edges) if mu is None else np.asarray(mu, dtype=float)
        if lam.shape != (problem.n_nodes,) or mu.shape != (problem.n_edges,):
            raise ValueError("multiplier dimensions do not match problem")
        a = problem.incidence
        stat = problem.objective_grad(theta) + problem.constraint_grads(theta) * lam + a @ mu
        parts = [np.abs(stat).max(initial=0.0)]
        cons = problem.constrained_nodes
        if cons:
            gvals = problem.constraint_values(theta)[list(cons)]
            lcons = lam[list(cons)]
            parts.append(np.abs(lcons * gvals).max())      # complementary slackness
            parts.append(np.maximum(gvals, 0.0).max())     # primal feasibility (local)
            parts.append(np.maximum(-lcons, 0.0).max())    # dual feasibility
        if problem.n_edges:
            parts.append(np.abs(a.T @ theta).max())        # consensus feasibility
        return float(max(parts))

    if isinstance(problem, CouplingProblem):
        if theta.shape != (problem.n_nodes,):
            raise ValueError(f"theta shape {theta.shape}, expected ({problem.n_nodes},)")
        lam = np.zeros(problem.n_links) if lam is None else np.asarray(lam, dtype=float)
        if lam.shape != (problem.n_links,):
            raise ValueError("multiplier dimensions do not match problem")
        omega = problem.routing @ theta
        hvals = problem.link_values(omega)
        stat = problem.objective_grad(theta) + problem.routing.T @ (
            problem.link_grads(omega) * lam
        )
        parts = [
            np.abs(stat).max(initial=0.0),
            np.abs(lam * hvals).max(initial=0.0),
            np.maximum(hvals, 0.0).max(initial=0.0),
            np.maximum(-lam, 0.0).max(initial=0.0),
        ]
        return float(max(parts))

    raise TypeError(f"unsupported problem type {type(problem).__name__}")


# ---------------------------------------------------------------------------
# Reference solvers


@dataclass(frozen=True)
class ReferenceSolution:
    """Centralized optimum used as a ground-truth oracle.

    ``weak_complementarity`` flags entities whose constraint is active with a
    zero multiplier (the bound interpretation of the dual terms degenerates
    there).
    """

    theta_star: np.ndarray
    lambda_star: np.ndarray
    mu_star: np.ndarray
    kkt_residual: float
    tolerance: float
    weak_complementarity: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "theta_star", _frozen(self.theta_star))
        object.__setattr__(self, "lambda_star", _frozen(self.lambda_star))
        object.__setattr__(self, "mu_star", _frozen(self.mu_star))
        if np.any(self.lambda_star < 0):
            raise ValueError("lambda_star must be componentwise non-negative")


_SEARCH_LIMIT = 1e12


def _bisect(fn, lo: float, hi: float, iters: int = 200) -> float:
    """Bisection for the sign change of fn with fn(lo) <= 0 <= fn(hi).

    Valid whenever {t : fn(t) <= 0} restricted to [lo, hi] is an interval
    containing lo (true for nondecreasing fn, and for convex fn bracketed
    from inside its sublevel set).
    """
    flo = fn(lo)
    if flo > 0:
        raise SolverError(f"bisection bracket invalid: fn({lo}) = {flo} > 0")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _expand_bracket(fn, start: float, lo_limit: float):
    """Find [lo, hi] with fn(lo) <= 0 <= fn(hi) for a nondecreasing fn.

    Expands geometrically from ``start``; on a bounded domain the left end
    approaches ``lo_limit`` geometrically instead of stepping past it.
    """
    hi = start
    step = 1.0
    while fn(hi) < 0:
        hi += step
        step *= 2.0
        if hi > _SEARCH_LIMIT:
            raise SolverError(
                "no stationary point found; objective may be unbounded below"
            )
    lo = start
    step = 1.0
    while fn(lo) > 0:
        nxt = lo - step
        step *= 2.0
        if nxt <= lo_limit + DOMAIN_MARGIN:
            nxt = lo_limit + 0.5 * (lo - lo_limit)
            if not (nxt > lo_limit) or lo - nxt < 1e-300:
                raise SolverError(
                    "no stationary point found above the domain boundary"
                )
        if nxt < -_SEARCH_LIMIT:
            raise SolverError(
                "no stationary point found; objective may be unbounded below"
            )
        lo = nxt
    return lo, hi


def _probe_points(lo_limit: float) -> list[float]:
    """Geometric probe grid covering the (half-)line above ``lo_limit``."""
    if math.isfinite(lo_limit):
        pts = [lo_limit + 2.0**k for k in range(-14, 42)]
    else:
        pts = [0.0]
        for k in range(-14, 42):
            pts += [2.0**k, -(2.0**k)]
    return sorted(t for t in pts if t > lo_limit + DOMAIN_MARGIN)


def _golden_min(fn, lo: float, hi: float, iters: int = 200) -> float:
    """Golden-section minimum of a unimodal function on [lo, hi]."""
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = fn(d)
        if b - a < 1e-13 * max(1.0, abs(a), abs(b)):
            break
    return 0.5 * (a + b)


def _sublevel_interval(g: ScalarConvexFunction, lo_limit: float):
    """The interval {t : g(t) <= 0} of a scalar convex function.

    Returns (lo, hi) where either end may be infinite; raises
    InfeasibleProblemError when the sublevel set is empty (probed on a
    geometric grid plus a golden-section refinement, not certified).
    """
    lo_limit = max(lo_limit, g.domain_lo)
    pts = _probe_points(lo_limit)
    vals = [g.value(t) for t in pts]
    best = int(np.argmin(vals))
    t_feas = pts[best]
    if vals[best] > 0:
        a = pts[max(best - 1, 0)]
        b = pts[min(best + 1, len(pts) - 1)]
        t_feas = _golden_min(g.value, a, b)
        if g.value(t_feas) > 0:
            raise InfeasibleProblemError(
                f"constraint {g!r} appears to have an empty sublevel set "
                f"(best probed value {g.value(t_feas):.3e})"
            )

    # Right boundary: first sign change beyond t_feas, if any.
    right = math.inf
    probe, step = t_feas, 1.0
    while probe <= _SEARCH_LIMIT:
        nxt = probe + step
        step *= 2.0
        if g.value(nxt) > 0:
            right = _bisect(g.value, probe, nxt)
            break
        probe = nxt

    # Left boundary: sign change or the domain edge.
    left = -math.inf if not math.isfinite(lo_limit) else lo_limit
    probe, step = t_feas, 1.0
    while probe >= -_SEARCH_LIMIT:
        nxt = probe - step
        step *= 2.0
        if nxt <= lo_limit + DOMAIN_MARGIN:
            nxt = lo_limit + 0.5 * (probe - lo_limit)
            if not (nxt > lo_limit) or probe - nxt < 1e-300:
                break
        if g.value(nxt) > 0:
            left = -_bisect(lambda t: g.value(-t), -probe, -nxt)
            break
        probe = nxt
    return left, right


def _consensus_reference(problem: ConsensusProblem, tol: float) -> ReferenceSolution:
    funcs = problem.objectives
    lo_dom = max(f.domain_lo for f in funcs)
    for g in problem.constraints:
        if g is not None:
            lo_dom = max(lo_dom, g.domain_lo)

    # Feasible interval for the common value t (all estimates equal).
    left, right = lo_dom, math.inf
    for g in problem.constraints:
        if g is None:
            continue
        g_lo, g_hi = _sublevel_interval(g, lo_dom)
        left, right = max(left, g_lo), min(right, g_hi)
    if left >= right - 1e-9:
        raise InfeasibleProblemError(
            f"no strictly feasible common value: interval [{left}, {right}]"
        )

    def sum_grad(t: float) -> float:
        return float(sum(f.grad(t) for f in funcs))

    lo_eff = max(left, lo_dom)
    if math.isfinite(lo_eff) and math.isfinite(right):
        start = 0.5 * (lo_eff + right)
    elif math.isfinite(lo_eff):
        start = lo_eff + 1.0
    elif math.isfinite(right):
        start = right - 1.0
    else:
        start = 0.0
    blo, bhi = _expand_bracket(sum_grad, max(start, lo_dom + 1e-6), lo_dom)
    t_star = _bisect(sum_grad, blo, bhi)

    lam = np.zeros(problem.n_nodes)
    weak: list[int] = []
    eps_active = 1e-9
    if t_star < left + eps_active or t_star > right - eps_active:
        t_star = min(max(t_star, left), right)
        active = [
            i
            for i, g in enumerate(problem.constraints)
            if g is not None and abs(g.value(t_star)) < 1e-7
        ]
        residual_grad = -sum_grad(t_star)
        if active and abs(residual_grad) > 0:
            grads = np.array([problem.constraints[i].grad(t_star) for i in active])
            # Minimum-norm distribution over the single summed stationarity
            # equation; clips to zero when the geometry makes a sign flip.
            coeff = residual_grad / float(grads @ grads)
            vals = np.maximum(coeff * grads, 0.0)
            for i, v in zip(active, vals):
                lam[i] = v
        weak = [i for i in active if lam[i] == 0.0]

    grad_total = problem.objective_grad(np.full(problem.n_nodes, t_star))
    grad_total += problem.constraint_grads(np.full(problem.n_nodes, t_star)) * lam
    a = problem.incidence
    if problem.n_edges:
        mu, *_ = np.linalg.lstsq(a, -grad_total, rcond=None)
    else:
        mu = np.zeros(0)

    theta = np.full(problem.n_nodes, t_star)
    res = kkt_residual(problem, theta, lam, mu)
    if res > 1e-8:
        raise SolverError(f"consensus reference solve left KKT residual {res:.3e}")
    return ReferenceSolution(theta, lam, mu, res, tol, tuple(weak))


def _project_slabs(y: np.ndarray, rows: np.ndarray, intervals, iters: int = 20000):
    """Dykstra projection onto the intersection of slabs lo_j <= r_j.x <= hi_j."""
    m = rows.shape[0]
    if m == 1:
        r = rows[0]
        s = float(r @ y)
        s_clip = min(max(s, intervals[0][0]), intervals[0][1])
        return y + (s_clip - s) / float(r @ r) * r
    x = y.copy()
    corrections = np.zeros((m, y.size))
    for _ in range(iters):
        shift = 0.0
        for j in range(m):
            r = rows[j]
            z = x + corrections[j]
            s = float(r @ z)
            s_clip = min(max(s, intervals[j][0]), intervals[j][1])
            x_new = z + (s_clip - s) / float(r @ r) * r
            corrections[j] = z - x_new
            shift = max(shift, float(np.max(np.abs(x_new - x))))
            x = x_new
        if shift < 1e-14:
            break
    return x


def _coupling_reference(problem: CouplingProblem, tol: float) -> ReferenceSolution:
    rows = np.asarray(problem.routing)
    intervals = [
        _sublevel_interval(h, -math.inf) for h in problem.link_constraints
    ]

    # Strict feasibility probe: aim for the interior of each load interval.
    targets = []
    for (lo, hi) in intervals:
        if math.isfinite(lo) and math.isfinite(hi):
            targets.append(0.5 * (lo + hi))
        elif math.isfinite(hi):
            targets.append(hi - 1.0)
        elif math.isfinite(lo):
            targets.append(lo + 1.0)
        else:
            targets.append(0.0)
    theta0, *_ = np.linalg.lstsq(rows, np.asarray(targets), rcond=None)
    loads = rows @ theta0
    slack = min(
        min(hi - loads[j], loads[j] - lo)
        for j, (lo, hi) in enumerate(intervals)
    )
    if slack <= 1e-9:
        raise InfeasibleProblemError(
            "no strictly feasible point found for the coupled constraints"
        )

    def f_value(x):
        return float(sum(f.value(x[i]) for i, f in enumerate(problem.objectives)))

    x = _project_slabs(theta0, rows, intervals)
    iterates = []
    step = 1.0
    converged = False
    for it in range(200_000):
        g = problem.objective_grad(x)
        # Backtracking projected gradient step.
        while step > 1e-18:
            cand = _project_slabs(x - step * g, rows, intervals)
            if f_value(cand) <= f_value(x) - 0.25 / step * float(
                np.sum((cand - x) ** 2)
            ):
                break
            step *= 0.5
        move = float(np.max(np.abs(cand - x)))
        x = cand
        if it % 1000 == 0:
            iterates.append((it, x.copy(), move))
        if move < 1e-12 * max(1.0, float(np.max(np.abs(x)))):
            converged = True
            break
        step = min(step * 2.0, 1e6)
    if not converged:
        raise SolverError(
            "projected gradient failed to reach tolerance", iterates=iterates
        )

    omega = rows @ x
    hvals = problem.link_values(omega)
    active = [j for j in range(problem.n_links) if hvals[j] > -1e-7]
    lam = np.zeros(problem.n_links)
    weak: list[int] = []
    if active:
        grads_h = problem.link_grads(omega)
        while active:
            cols = rows[active].T * grads_h[active]
            sol, *_ = np.linalg.lstsq(cols, -problem.objective_grad(x), rcond=None)
            if np.all(sol >= -1e-12):
                for j, v in zip(active, sol):
                    lam[j] = max(float(v), 0.0)
                break
            active = [j for j, v in zip(active, sol) if v > 0]
        weak = [j for j in range(problem.n_links) if hvals[j] > -1e-7 and lam[j] == 0.0]

    res = kkt_residual(problem, x, lam)
    if res > 1e-8:
        raise SolverError(f"coupling reference solve left KKT residual {res:.3e}")
    return ReferenceSolution(x, lam, np.zeros(0), res, tol, tuple(weak))


def reference_solution(problem: Problem, tol: float = 1e-12) -> ReferenceSolution:
    """Ground-truth optimum for the supported problem families."""
    if isinstance(problem, ConsensusProblem):
        return _consensus_reference(problem, tol)
    if isinstance(problem, CouplingProblem):
        return _coupling_reference(problem, tol)
    raise TypeError(f"unsupported problem type {type(problem).__name__}")
