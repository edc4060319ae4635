"""Closed-loop assembly of the projected primal-dual vector fields.

Three interconnection layouts are covered by one state convention
``x = [xi; tau; zeta]``:

* consensus: per-node integrator stacks ``xi_i`` driven by the force
  ``phi_i``, optional per-node dual stacks ``tau_i`` (projected to stay
  non-negative) driven by the local constraint value, and per-edge stacks
  ``zeta_j`` driven by the disagreement ``omega_j``. Edge outputs may add a
  feed-forward multiple of ``omega_j``.
* coupling-inequality: dual stacks live on the links and respond to the
  link constraint values; there are no edge integrator stacks.
* feed-forward normal form: the edge feed-forward is re-expressed as
  weighted-Laplacian feedback on the nodes, which makes the whole loop
  affine in the state apart from the objective gradients.

Controllers inject into the k >= 2 components of each stack only; the
first component of every stack is an uncontrolled integrator. The nominal
controller is the linear feedback that recovers the augmented algorithm,
and for it (plus open-loop perturbations) the assembly folds all linear
terms into a single matrix so a field evaluation is a handful of BLAS
calls.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .convex import (
    Affine,
    ConsensusProblem,
    CouplingProblem,
    DomainError,
    Exponential,
    NegLog,
    Quadratic,
    ReferenceSolution,
    ScalarConvexFunction,
)
from .graph import weighted_laplacian

__all__ = [
    "ProfileError",
    "StateCorruptionError",
    "UnsupportedVariantError",
    "AugmentationProfile",
    "uniform_profile",
    "SystemState",
    "OutputSnapshot",
    "positive_projection",
    "outputs_of",
    "vector_field",
    "NominalController",
    "FeedforwardNominalController",
    "PerturbedController",
    "nominal_controller",
    "ClosedLoop",
    "closed_loop",
    "FeedforwardForm",
    "feedforward_transform",
    "equilibrium_state",
    "initial_state",
]


class ProfileError(ValueError):
    """Invalid augmentation parameters."""


class UnsupportedVariantError(ValueError):
    """Requested a combination the implementation excludes."""


class StateCorruptionError(RuntimeError):
    """A non-negative dual state was found negative."""


def _check_stack(label, orders, bs, as_, ds, min_order):
    if not (len(orders) == len(bs) == len(as_) == len(ds)):
        raise ProfileError(f"{label}: parameter tuples have mismatched lengths")
    for k, (rho, b, a, d) in enumerate(zip(orders, bs, as_, ds)):
        if rho < min_order:
            raise ProfileError(f"{label}[{k}]: order {rho} < {min_order}")
        if len(b) != rho:
            raise ProfileError(f"{label}[{k}]: need {rho} gains, got {len(b)}")
        if any(v <= 0 for v in b):
            raise ProfileError(f"{label}[{k}]: gains must be strictly positive")
        if len(a) != max(rho - 1, 0):
            raise ProfileError(
                f"{label}[{k}]: need {max(rho - 1, 0)} leak rates, got {len(a)}"
            )
        if any(v <= 0 for v in a):
            raise ProfileError(f"{label}[{k}]: leak rates must be strictly positive")
        if any(a[i + 1] <= a[i] for i in range(len(a) - 1)):
            raise ProfileError(f"{label}[{k}]: leak rates must be strictly increasing")
        if d < 0:
            raise ProfileError(f"{label}[{k}]: feed-forward gain must be >= 0")


@dataclass(frozen=True)
class AugmentationProfile:
    """Per-stack augmentation parameters.

    Node stacks (``node_*``) shape the primal estimates, dual stacks
    (``dual_*``) the inequality multipliers (per node for local constraints,
    per link for coupled ones; order 0 means no stack), and edge stacks
    (``edge_*``) the consensus multipliers. Each stack of order ``rho`` has
    ``rho`` input gains ``b`` and ``rho - 1`` strictly increasing leak rates
    ``a`` on its k >= 2 components. ``d`` entries are output feed-forward
    gains; only the edge ones may be nonzero (a nonzero node or dual
    feed-forward would make the corresponding output implicit and is
    rejected).
    """

    node_orders: tuple[int, ...]
    node_b: tuple[tuple[float, ...], ...]
    node_a: tuple[tuple[float, ...], ...]
    node_d: tuple[float, ...]
    dual_orders: tuple[int, ...] = ()
    dual_b: tuple[tuple[float, ...], ...] = ()
    dual_a: tuple[tuple[float, ...], ...] = ()
    dual_d: tuple[float, ...] = ()
    edge_orders: tuple[int, ...] = ()
    edge_b: tuple[tuple[float, ...], ...] = ()
    edge_a: tuple[tuple[float, ...], ...] = ()
    edge_d: tuple[float, ...] = ()

    def __post_init__(self):
        norm = lambda tt: tuple(tuple(float(v) for v in t) for t in tt)
        object.__setattr__(self, "node_orders", tuple(int(r) for r in self.node_orders))
        object.__setattr__(self, "node_b", norm(self.node_b))
        object.__setattr__(self, "node_a", norm(self.node_a))
        object.__setattr__(self, "node_d", tuple(float(v) for v in self.node_d))
        object.__setattr__(self, "dual_orders", tuple(int(r) for r in self.dual_orders))
        object.__setattr__(self, "dual_b", norm(self.dual_b))
        object.__setattr__(self, "dual_a", norm(self.dual_a))
        object.__setattr__(self, "dual_d", tuple(float(v) for v in self.dual_d))
        object.__setattr__(self, "edge_orders", tuple(int(r) for r in self.edge_orders))
        object.__setattr__(self, "edge_b", norm(self.edge_b))
        object.__setattr__(self, "edge_a", norm(self.edge_a))
        object.__setattr__(self, "edge_d", tuple(float(v) for v in self.edge_d))
        _check_stack("node", self.node_orders, self.node_b, self.node_a, self.node_d, 1)
        _check_stack("dual", self.dual_orders, self.dual_b, self.dual_a, self.dual_d, 0)
        _check_stack("edge", self.edge_orders, self.edge_b, self.edge_a, self.edge_d, 1)
        if any(d != 0 for d in self.node_d):
            raise UnsupportedVariantError(
                "node output feed-forward makes the primal output implicit; "
                "it is not supported"
            )
        if any(d != 0 for d in self.dual_d):
            raise UnsupportedVariantError(
                "dual output feed-forward makes the multiplier output implicit; "
                "it is not supported"
            )

    # -- layout -------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.node_orders)

    @property
    def n_duals(self) -> int:
        return len(self.dual_orders)

    @property
    def n_edges(self) -> int:
        return len(self.edge_orders)

    @cached_property
    def xi_dim(self) -> int:
        return sum(self.node_orders)

    @cached_property
    def tau_dim(self) -> int:
        return sum(self.dual_orders)

    @cached_property
    def zeta_dim(self) -> int:
        return sum(self.edge_orders)

    @cached_property
    def dim(self) -> int:
        return self.xi_dim + self.tau_dim + self.zeta_dim

    @cached_property
    def xi_starts(self) -> tuple[int, ...]:
        out, acc = [], 0
        for r in self.node_orders:
            out.append(acc)
            acc += r
        return tuple(out)

    @cached_property
    def tau_starts(self) -> tuple[int, ...]:
        out, acc = [], 0
        for r in self.dual_orders:
            out.append(acc)
            acc += r
        return tuple(out)

    @cached_property
    def zeta_starts(self) -> tuple[int, ...]:
        out, acc = [], 0
        for r in self.edge_orders:
            out.append(acc)
            acc += r
        return tuple(out)

    @property
    def n_node_controls(self) -> int:
        return sum(r - 1 for r in self.node_orders)

    @property
    def n_dual_controls(self) -> int:
        return sum(max(r - 1, 0) for r in self.dual_orders)

    @property
    def n_edge_controls(self) -> int:
        return sum(r - 1 for r in self.edge_orders)


def uniform_profile(
    n_nodes: int,
    n_edges: int,
    *,
    node_rho: int = 1,
    node_b: tuple[float, ...] = (1.0,),
    node_a: tuple[float, ...] = (),
    dual_count: int = 0,
    dual_rho: int = 1,
    dual_b: tuple[float, ...] = (1.0,),
    dual_a: tuple[float, ...] = (),
    edge_rho: int = 1,
    edge_b: tuple[float, ...] = (1.0,),
    edge_a: tuple[float, ...] = (),
    edge_d: float = 0.0,
) -> AugmentationProfile:
    """Profile with identical parameters at every node/dual/edge."""
    return AugmentationProfile(
        node_orders=(node_rho,) * n_nodes,
        node_b=(tuple(node_b),) * n_nodes,
        node_a=(tuple(node_a),) * n_nodes,
        node_d=(0.0,) * n_nodes,
        dual_orders=(dual_rho,) * dual_count,
        dual_b=(tuple(dual_b),) * dual_count,
        dual_a=(tuple(dual_a),) * dual_count,
        dual_d=(0.0,) * dual_count,
        edge_orders=(edge_rho,) * n_edges,
        edge_b=(tuple(edge_b),) * n_edges,
        edge_a=(tuple(edge_a),) * n_edges,
        edge_d=(edge_d,) * n_edges,
    )


@dataclass(frozen=True)
class SystemState:
    """Concatenated auxiliary states (xi, tau, zeta); tau >= 0 componentwise."""

    xi: np.ndarray
    tau: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))
        object.__setattr__(self, "zeta", np.asarray(self.zeta, dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.xi, self.tau, self.zeta])

    @classmethod
    def from_vector(cls, vec: np.ndarray, profile: AugmentationProfile) -> "SystemState":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (profile.dim,):
            raise ValueError(f"state vector shape {vec.shape}, expected ({profile.dim},)")
        nx, nt = profile.xi_dim, profile.tau_dim
        return cls(vec[:nx], vec[nx : nx + nt], vec[nx + nt :])


@dataclass(frozen=True)
class OutputSnapshot:
    """Subsystem outputs and interconnection signals at one state."""

    theta: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    omega: np.ndarray
    eta: np.ndarray
    psi: np.ndarray
    phi: np.ndarray


def positive_projection(sigma: np.ndarray, epsilon: np.ndarray) -> np.ndarray:
    """Zero the components of ``sigma`` that would push ``epsilon`` negative.

    Componentwise: sigma_k when epsilon_k > 0; sigma_k when epsilon_k == 0
    and sigma_k >= 0; else 0.
    """
    sigma = np.asarray(sigma, dtype=float)
    epsilon = np.asarray(epsilon, dtype=float)
    if sigma.shape != epsilon.shape:
        raise ValueError("sigma and epsilon must have equal shapes")
    if np.any(epsilon < 0):
        raise StateCorruptionError(
            f"non-negative state invariant broken: min epsilon = {epsilon.min()}"
        )
    return np.where((epsilon > 0) | (sigma >= 0), sigma, 0.0)


# ---------------------------------------------------------------------------
# Vectorized gradient tables


_FAR_SHIFT = -1e300  # keeps the fused log/ratio terms finite where they are unused


class _FunctionTable:
    """Groups scalar functions by kind for vectorized evaluation.

    Evaluation semantics (including domain guards) match the per-function
    closed forms. When every entry is a plain catalog kind, value and
    gradient evaluate as one fused masked expression (entries of other kinds
    contribute zero coefficients); otherwise the per-kind index groups are
    used, with a scalar fallback for compound functions.
    """

    def __init__(self, funcs: tuple[ScalarConvexFunction, ...]):
        self.funcs = funcs
        self.n = len(funcs)
        quad, expo, nlog, aff, other = [], [], [], [], []
        for i, f in enumerate(funcs):
            if type(f) is Quadratic:
                quad.append(i)
            elif type(f) is Exponential:
                expo.append(i)
            elif type(f) is NegLog:
                nlog.append(i)
            elif type(f) is Affine:
                aff.append(i)
            else:
                other.append(i)
        self._quad = (
            np.array(quad, dtype=int),
            np.array([funcs[i].weight for i in quad]),
            np.array([funcs[i].center for i in quad]),
        )
        self._expo = (
            np.array(expo, dtype=int),
            np.array([funcs[i].weight for i in expo]),
            np.array([funcs[i].rate for i in expo]),
        )
        self._nlog = (
            np.array(nlog, dtype=int),
            np.array([funcs[i].weight for i in nlog]),
            np.array([funcs[i].shift for i in nlog]),
        )
        self._aff = (
            np.array(aff, dtype=int),
            np.array([funcs[i].slope for i in aff]),
            np.array([funcs[i].intercept for i in aff]),
        )
        self._other = tuple(other)
        self._fused = None
        if not other:
            qw = np.zeros(self.n)
            qc = np.zeros(self.n)
            ew = np.zeros(self.n)
            es = np.zeros(self.n)
            nw = np.zeros(self.n)
            nc = np.full(self.n, _FAR_SHIFT)
            am = np.zeros(self.n)
            ak = np.zeros(self.n)
            for i in quad:
                qw[i], qc[i] = funcs[i].weight, funcs[i].center
            for i in expo:
                ew[i], es[i] = funcs[i].weight, funcs[i].rate
            for i in nlog:
                nw[i], nc[i] = funcs[i].weight, funcs[i].shift
            for i in aff:
                am[i], ak[i] = funcs[i].slope, funcs[i].intercept
            self._fused = (qw, qc, ew, es, nw, nc, am, ak)

    def _guard(self, p):
        idx, _, shift = self._nlog
        if idx.size:
            margins = p[..., idx] - shift
            if np.min(margins) <= 1e-12:
                flat = margins.reshape(-1, idx.size)
                col = int(np.argmin(np.min(flat, axis=0)))
                bad = int(idx[col])
                raise DomainError(
                    f"log-domain violation at entry {bad}: value "
                    f"{float(np.min(np.asarray(p)[..., bad]))!r} <= boundary "
                    f"{float(shift[col])!r}",
                    boundary=float(shift[col]),
                )

    def grad(self, p: np.ndarray) -> np.ndarray:
        self._guard(p)
        if self._fused is not None:
            qw, qc, ew, es, nw, nc, am, _ = self._fused
            return 2.0 * qw * (p - qc) + (ew * es) * np.exp(es * p) - nw / (p - nc) + am
        out = np.empty_like(p)
        idx, w, c = self._quad
        if idx.size:
            out[..., idx] = 2.0 * w * (p[..., idx] - c)
        idx, w, s = self._expo
        if idx.size:
            out[..., idx] = w * s * np.exp(s * p[..., idx])
        idx, w, c = self._nlog
        if idx.size:
            out[..., idx] = -w / (p[..., idx] - c)
        idx, m, _ = self._aff
        if idx.size:
            out[..., idx] = m
        for i in self._other:
            out[..., i] = self.funcs[i].grad(p[..., i])
        return out

    def value(self, p: np.ndarray) -> np.ndarray:
        self._guard(p)
        if self._fused is not None:
            qw, qc, ew, es, nw, nc, am, ak = self._fused
            return (
                qw * (p - qc) ** 2
                + ew * np.exp(es * p)
                - nw * np.log(p - nc)
                + am * p
                + ak
            )
        out = np.empty_like(p)
        idx, w, c = self._quad
        if idx.size:
            out[..., idx] = w * (p[..., idx] - c) ** 2
        idx, w, s = self._expo
        if idx.size:
            out[..., idx] = w * np.exp(s * p[..., idx])
        idx, w, c = self._nlog
        if idx.size:
            out[..., idx] = -w * np.log(p[..., idx] - c)
        idx, m, k = self._aff
        if idx.size:
            out[..., idx] = m * p[..., idx] + k
        for i in self._other:
            out[..., i] = self.funcs[i].value(p[..., i])
        return out


# ---------------------------------------------------------------------------
# Reference (readable) output map and vector field


def _block_sums(vec: np.ndarray, starts: tuple[int, ...], orders: tuple[int, ...]):
    return np.array([vec[s : s + r].sum() for s, r in zip(starts, orders)])


def outputs_of(
    state: SystemState,
    profile: AugmentationProfile,
    problem: ConsensusProblem | CouplingProblem,
) -> OutputSnapshot:
    """Subsystem outputs and interconnection signals at ``state``."""
    theta = _block_sums(state.xi, profile.xi_starts, profile.node_orders)
    lam = _block_sums(state.tau, profile.tau_starts, profile.dual_orders)
    if isinstance(problem, ConsensusProblem):
        if profile.n_duals not in (0, problem.n_nodes):
            raise ValueError("dual stack count must be 0 or one per node")
        a = problem.incidence
        omega = a.T @ theta
        mu = _block_sums(state.zeta, profile.zeta_starts, profile.edge_orders)
        mu = mu + np.asarray(profile.edge_d) * omega
        psi = a @ mu
        lam_full = np.zeros(problem.n_nodes) if profile.n_duals == 0 else lam
        eta = problem.constraint_grads(theta) * lam_full
        phi = -problem.objective_grad(theta) - eta - psi
        return OutputSnapshot(theta, lam_full, mu, omega, eta, psi, phi)
    if isinstance(problem, CouplingProblem):
        if profile.n_duals != problem.n_links:
            raise ValueError("coupling problems need one dual stack per link")
        if profile.zeta_dim:
            raise ValueError("coupling problems carry no edge integrator stacks")
        omega = problem.routing @ theta
        eta = problem.routing.T @ (problem.link_grads(omega) * lam)
        phi = -problem.objective_grad(theta) - eta
        return OutputSnapshot(
            theta, lam, np.zeros(0), omega, eta, np.zeros(problem.n_nodes), phi
        )
    raise TypeError(f"unsupported problem type {type(problem).__name__}")


@dataclass(frozen=True)
class NominalController:
    """Linear state feedback ``-a_k (stack state k)`` on every k >= 2 channel.

    Closing the loop with it recovers the augmented algorithm from the
    controlled form.
    """

    profile: AugmentationProfile

    def __call__(self, t, state: SystemState, outputs: OutputSnapshot) -> np.ndarray:
        p = self.profile
        u = [
            -np.asarray(a) * state.xi[s + 1 : s + r]
            for s, r, a in zip(p.xi_starts, p.node_orders, p.node_a)
        ]
        uhat = [
            -np.asarray(a) * state.tau[s + 1 : s + r]
            for s, r, a in zip(p.tau_starts, p.dual_orders, p.dual_a)
        ]
        ucheck = [
            -np.asarray(a) * state.zeta[s + 1 : s + r]
            for s, r, a in zip(p.zeta_starts, p.edge_orders, p.edge_a)
        ]
        return np.concatenate([np.concatenate(g) if g else np.zeros(0) for g in (u, uhat, ucheck)])


@dataclass(frozen=True)
class FeedforwardNominalController:
    """Nominal feedback in the aggregate layout of the normal form.

    Channels: gain-scaled node stack feedback, one disagreement channel per
    feed-forward edge, then gain-scaled edge stack feedback.
    """

    profile: AugmentationProfile

    def __call__(self, t, state: SystemState, outputs: OutputSnapshot) -> np.ndarray:
        p = self.profile
        u1 = [
            -(np.asarray(a) / np.asarray(b[1:])) * state.xi[s + 1 : s + r]
            for s, r, a, b in zip(p.xi_starts, p.node_orders, p.node_a, p.node_b)
        ]
        uff = [-p.edge_d[e] * outputs.omega[e] for e, d in enumerate(p.edge_d) if d > 0]
        ue = [
            -(np.asarray(a) / np.asarray(b[1:])) * state.zeta[s + 1 : s + r]
            for s, r, a, b in zip(p.zeta_starts, p.edge_orders, p.edge_a, p.edge_b)
        ]
        parts = [np.concatenate(u1) if u1 else np.zeros(0), np.asarray(uff),
                 np.concatenate(ue) if ue else np.zeros(0)]
        return np.concatenate(parts)


@dataclass(frozen=True)
class PerturbedController:
    """Nominal feedback plus an open-loop perturbation ``v(t)``."""

    nominal: NominalController | FeedforwardNominalController
    perturbation: object  # callable t -> control-sized vector

    def __call__(self, t, state: SystemState, outputs: OutputSnapshot) -> np.ndarray:
        return self.nominal(t, state, outputs) + self.perturbation(t)


def nominal_controller(profile: AugmentationProfile) -> NominalController:
    return NominalController(profile)


def vector_field(
    state: SystemState,
    t: float,
    profile: AugmentationProfile,
    problem: ConsensusProblem | CouplingProblem,
    controller=None,
) -> SystemState:
    """Projected closed-loop derivative at ``state``.

    Readable reference implementation; :class:`ClosedLoop` computes the same
    field with the linear terms folded for speed.
    """
    controller = controller or NominalController(profile)
    out = outputs_of(state, profile, problem)
    control = np.asarray(controller(t, state, out), dtype=float)
    nu, nd = profile.n_node_controls, profile.n_dual_controls
    u, uhat, ucheck = control[:nu], control[nu : nu + nd], control[nu + nd :]

    xi_dot = np.zeros_like(state.xi)
    pos = 0
    for i, (s, r, b) in enumerate(zip(profile.xi_starts, profile.node_orders, profile.node_b)):
        xi_dot[s : s + r] = np.asarray(b) * out.phi[i]
        xi_dot[s + 1 : s + r] += u[pos : pos + r - 1]
        pos += r - 1

    if isinstance(problem, ConsensusProblem):
        drive = problem.constraint_values(out.theta)
    else:
        drive = problem.link_values(out.omega)
    tau_raw = np.zeros_like(state.tau)
    pos = 0
    for i, (s, r, b) in enumerate(zip(profile.tau_starts, profile.dual_orders, profile.dual_b)):
        tau_raw[s : s + r] = np.asarray(b) * drive[i]
        tau_raw[s + 1 : s + r] += uhat[pos : pos + max(r - 1, 0)]
        pos += max(r - 1, 0)
    tau_dot = positive_projection(tau_raw, state.tau)

    zeta_dot = np.zeros_like(state.zeta)
    pos = 0
    for j, (s, r, b) in enumerate(zip(profile.zeta_starts, profile.edge_orders, profile.edge_b)):
        zeta_dot[s : s + r] = np.asarray(b) * out.omega[j]
        zeta_dot[s + 1 : s + r] += ucheck[pos : pos + r - 1]
        pos += r - 1
    return SystemState(xi_dot, tau_dot, zeta_dot)


# ---------------------------------------------------------------------------
# Folded assemblies


@dataclass(frozen=True)
class TrajectoryOutputs:
    """Per-sample outputs over a whole trajectory (arrays shaped (T, .))."""

    theta: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    omega: np.ndarray
    eta: np.ndarray
    psi: np.ndarray
    phi: np.ndarray


def _scatter(dim: int, starts, orders, values_per_block, offset: int = 0) -> np.ndarray:
    """dim x n_blocks matrix placing values_per_block[i] into block i."""
    m = np.zeros((dim, len(starts)))
    for i, (s, r) in enumerate(zip(starts, orders)):
        m[offset + s : offset + s + r, i] = values_per_block[i]
    return m


class ClosedLoop:
    """Fast projected vector field with the linear terms folded.

    ``mode`` is one of consensus / coupling / feedforward. For the nominal
    controller (optionally plus an open-loop perturbation) a field
    evaluation is ``K x`` plus the objective-gradient and constraint terms;
    a generic controller callback falls back to snapshot evaluation.
    """

    def __init__(self, profile, problem, controller=None, *, mode=None):
        if mode is None:
            mode = "coupling" if isinstance(problem, CouplingProblem) else "consensus"
        self.mode = mode
        self.profile = profile
        self.problem = problem
        p = profile
        nxi, ntau, nzeta = p.xi_dim, p.tau_dim, p.zeta_dim
        dim = p.dim
        self.dim = dim
        self.nonneg_slice = slice(nxi, nxi + ntau)

        self._f_table = _FunctionTable(problem.objectives)
        self.n_controls = p.n_node_controls + p.n_dual_controls + p.n_edge_controls

        # Output selectors: block sums are transposes of all-ones scatters.
        self.S_theta = _scatter(dim, p.xi_starts, p.node_orders, [1.0] * p.n_nodes).T
        self.S_lam = _scatter(dim, p.tau_starts, p.dual_orders, [1.0] * p.n_duals, offset=nxi).T
        self.S_mut = _scatter(dim, p.zeta_starts, p.edge_orders, [1.0] * p.n_edges, offset=nxi + ntau).T

        # Drive scatters carrying the stack input gains.
        self.P_xi = _scatter(nxi, p.xi_starts, p.node_orders, [np.asarray(b) for b in p.node_b])
        self.P_tau = _scatter(ntau, p.tau_starts, p.dual_orders, [np.asarray(b) for b in p.dual_b])
        self.P_zeta = _scatter(
            nzeta, p.zeta_starts, p.edge_orders, [np.asarray(b) for b in p.edge_b]
        )

        if mode == "feedforward":
            if isinstance(problem, CouplingProblem) or ntau:
                raise UnsupportedVariantError(
                    "the feed-forward normal form requires an unconstrained "
                    "consensus problem"
                )
            self._init_feedforward()
        elif mode == "consensus":
            if not isinstance(problem, ConsensusProblem):
                raise TypeError("consensus mode needs a ConsensusProblem")
            if p.n_duals not in (0, problem.n_nodes):
                raise ValueError("dual stack count must be 0 or one per node")
            self._init_consensus()
        elif mode == "coupling":
            if not isinstance(problem, CouplingProblem):
                raise TypeError("coupling mode needs a CouplingProblem")
            if p.n_duals != problem.n_links or nzeta:
                raise ValueError("coupling layout: one dual stack per link, no edge stacks")
            self._init_coupling()
        else:
            raise ValueError(f"unknown mode {mode!r}")

        # Controller folding.
        self._v = None
        self._generic = None
        base = controller.nominal if isinstance(controller, PerturbedController) else controller
        nominal_types = (
            FeedforwardNominalController if mode == "feedforward" else NominalController,
            type(None),
        )
        if base is not None and isinstance(base, (NominalController, FeedforwardNominalController)):
            if not isinstance(base, nominal_types):
                raise TypeError(
                    f"{type(base).__name__} does not match the {mode} control layout"
                )
            if base.profile != profile:
                raise ValueError("controller was built for a different profile")
        if controller is None or isinstance(controller, nominal_types):
            self.K = self._K_open + self.B_u @ self.K_nominal
        elif isinstance(controller, PerturbedController):
            self.K = self._K_open + self.B_u @ self.K_nominal
            self._v = controller.perturbation
        elif callable(controller):
            self.K = self._K_open
            self._generic = controller
        else:
            raise TypeError("controller must be nominal, perturbed, or callable")

        self._nxi, self._ntau = nxi, ntau
        # One stacked matmul per evaluation yields the folded linear part,
        # the primal outputs, and the multipliers the nonlinear terms need.
        rows = [self.K, self.S_theta]
        if mode == "coupling":
            rows.append(self.S_lam)
        elif self._cons_idx.size:
            rows.append(self.S_lam[self._cons_idx])
        self._KS = np.vstack(rows)
        self._P_xi_neg = -self.P_xi
        self._P_tau_cons = (
            self.P_tau[:, self._cons_idx]
            if self.mode != "coupling" and self._cons_idx.size
            else self.P_tau
        )

    # -- per-mode assembly ---------------------------------------------------

    def _nominal_gain(self) -> np.ndarray:
        """Control = K_nominal @ x for the augmented algorithm."""
        p = self.profile
        k = np.zeros((self.n_controls, self.dim))
        row = 0
        for s, r, a in zip(p.xi_starts, p.node_orders, p.node_a):
            for j, ak in enumerate(a):
                k[row, s + 1 + j] = -ak
                row += 1
        for s, r, a in zip(p.tau_starts, p.dual_orders, p.dual_a):
            for j, ak in enumerate(a):
                k[row, self._off_tau + s + 1 + j] = -ak
                row += 1
        for s, r, a in zip(p.zeta_starts, p.edge_orders, p.edge_a):
            for j, ak in enumerate(a):
                k[row, self._off_zeta + s + 1 + j] = -ak
                row += 1
        return k

    def _input_map(self) -> np.ndarray:
        """x-dot += B_u @ control (the k >= 2 channels of every stack)."""
        p = self.profile
        b = np.zeros((self.dim, self.n_controls))
        col = 0
        for s, r in zip(p.xi_starts, p.node_orders):
            for j in range(r - 1):
                b[s + 1 + j, col] = 1.0
                col += 1
        for s, r in zip(p.tau_starts, p.dual_orders):
            for j in range(max(r - 1, 0)):
                b[self._off_tau + s + 1 + j, col] = 1.0
                col += 1
        for s, r in zip(p.zeta_starts, p.edge_orders):
            for j in range(r - 1):
                b[self._off_zeta + s + 1 + j, col] = 1.0
                col += 1
        return b

    def _init_consensus(self):
        p, prob = self.profile, self.problem
        nxi, ntau = p.xi_dim, p.tau_dim
        self._off_tau, self._off_zeta = nxi, nxi + ntau
        a = np.asarray(prob.incidence)
        self.A = a
        self.edge_d = np.asarray(p.edge_d)
        # mu = M_mu @ x (includes the edge feed-forward through omega).
        self.M_mu = self.S_mut + (self.edge_d[:, None] * (a.T @ self.S_theta))
        self._cons_idx = np.array(prob.constrained_nodes, dtype=int)
        self._g_table = (
            _FunctionTable(tuple(prob.constraints[i] for i in self._cons_idx))
            if self._cons_idx.size
            else None
        )
        if self._cons_idx.size and p.n_duals == 0:
            raise ValueError("constrained nodes need dual stacks")
        k = np.zeros((self.dim, self.dim))
        # psi path: xi rows get -P_xi A M_mu.
        k[:nxi] -= self.P_xi @ (a @ self.M_mu)
        # omega drive for the edge stacks.
        k[self._off_zeta :] += self.P_zeta @ (a.T @ self.S_theta)
        self._K_open = k
        self.B_u = self._input_map()
        self.K_nominal = self._nominal_gain()

    def _init_coupling(self):
        p, prob = self.profile, self.problem
        nxi, ntau = p.xi_dim, p.tau_dim
        self._off_tau, self._off_zeta = nxi, nxi + ntau
        self.R = np.asarray(prob.routing)
        self._h_table = _FunctionTable(prob.link_constraints)
        self._cons_idx = np.array([], dtype=int)
        self._K_open = np.zeros((self.dim, self.dim))
        self.B_u = self._input_map()
        self.K_nominal = self._nominal_gain()

    def _init_feedforward(self):
        p, prob = self.profile, self.problem
        nxi = p.xi_dim
        self._off_tau, self._off_zeta = nxi, nxi
        a = np.asarray(prob.incidence)
        self.A = a
        self.edge_d = np.asarray(p.edge_d)
        self.laplacian = weighted_laplacian(a, self.edge_d)
        self.active_ff = np.flatnonzero(self.edge_d > 0)
        self.M_mu = self.S_mut + (self.edge_d[:, None] * (a.T @ self.S_theta))
        self._cons_idx = np.array([], dtype=int)
        self._g_table = None

        k = np.zeros((self.dim, self.dim))
        # Open loop carries only the psi-tilde path through the re-based edge
        # outputs; the Laplacian feedback equivalent to the edge feed-forward
        # enters through the nominal controller channels below.
        k[:nxi] -= self.P_xi @ (a @ self.S_mut)
        k[self._off_zeta :] += self.P_zeta @ (a.T @ self.S_theta)
        self._K_open = k

        # Control layout: node aux channels, one channel per feed-forward
        # edge, then edge aux channels. Edges with zero feed-forward gain
        # contribute no control channel (their weight block would be
        # singular).
        n_ff = self.active_ff.size
        self.n_controls = p.n_node_controls + n_ff + p.n_edge_controls
        b = np.zeros((self.dim, self.n_controls))
        col = 0
        for i, (s, r, bg) in enumerate(zip(p.xi_starts, p.node_orders, p.node_b)):
            for j in range(r - 1):
                b[s + 1 + j, col] = bg[j + 1]
                col += 1
        for e in self.active_ff:
            b[:nxi, col] = self.P_xi @ a[:, e]
            col += 1
        for s, r, bg in zip(p.zeta_starts, p.edge_orders, p.edge_b):
            for j in range(r - 1):
                b[self._off_zeta + s + 1 + j, col] = bg[j + 1]
                col += 1
        self.B_u = b

        k_nom = np.zeros((self.n_controls, self.dim))
        row = 0
        for s, r, aa, bg in zip(p.xi_starts, p.node_orders, p.node_a, p.node_b):
            for j, ak in enumerate(aa):
                k_nom[row, s + 1 + j] = -ak / bg[j + 1]
                row += 1
        for e in self.active_ff:
            k_nom[row] = -self.edge_d[e] * (a[:, e] @ self.S_theta)
            row += 1
        for s, r, aa, bg in zip(p.zeta_starts, p.edge_orders, p.edge_a, p.edge_b):
            for j, ak in enumerate(aa):
                k_nom[row, self._off_zeta + s + 1 + j] = -ak / bg[j + 1]
                row += 1
        self.K_nominal = k_nom

    # -- evaluation ------------------------------------------------------------

    def derivative(self, t: float, x: np.ndarray) -> np.ndarray:
        y = self._KS @ x
        dim, nv = self.dim, self.S_theta.shape[0]
        xdot = y[:dim]
        theta = y[dim : dim + nv]
        extra = y[dim + nv :]
        if self._generic is not None:
            xdot += self.B_u @ self._control_generic(t, x)
        elif self._v is not None:
            xdot += self.B_u @ self._v(t)
        self._add_nonlinear(x, xdot, theta, extra)
        return xdot

    def _control_generic(self, t: float, x: np.ndarray) -> np.ndarray:
        u = np.asarray(
            self._generic(t, self.state_from_vector(x), self.output_snapshot(x)),
            dtype=float,
        )
        if u.shape != (self.n_controls,):
            raise ValueError(
                f"controller returned shape {u.shape}, expected ({self.n_controls},)"
            )
        return u

    def _add_nonlinear(self, x, xdot, theta, extra) -> None:
        """Objective/constraint terms plus the dual-state projection.

        Mutates ``xdot`` in place; the control contributions to the dual rows
        must already be present so the projection sees the full raw rate.
        """
        nxi, ntau = self._nxi, self._ntau
        if self.mode == "coupling":
            omega = self.R @ theta
            eta = self.R.T @ (self._h_table.grad(omega) * extra)
            xdot[:nxi] += self._P_xi_neg @ (self._f_table.grad(theta) + eta)
            raw = xdot[nxi : nxi + ntau] + self.P_tau @ self._h_table.value(omega)
            tau = x[nxi : nxi + ntau]
            xdot[nxi : nxi + ntau] = np.where((tau > 0) | (raw >= 0), raw, 0.0)
            return
        drive = self._f_table.grad(theta)
        gv = None
        if self._cons_idx.size:
            gv = self._g_table.value(theta[self._cons_idx])
            gg = self._g_table.grad(theta[self._cons_idx])
            drive[self._cons_idx] += gg * extra
        xdot[:nxi] += self._P_xi_neg @ drive
        if ntau:
            raw = xdot[nxi : nxi + ntau]
            if gv is not None:
                raw = raw + self._P_tau_cons @ gv
            tau = x[nxi : nxi + ntau]
            xdot[nxi : nxi + ntau] = np.where((tau > 0) | (raw >= 0), raw, 0.0)

    # -- batch evaluation over trajectories -------------------------------------

    def state_from_vector(self, x: np.ndarray) -> SystemState:
        return SystemState.from_vector(x, self.profile)

    def output_snapshot(self, x: np.ndarray) -> OutputSnapshot:
        snap = self.outputs_batch(x[None, :])
        return OutputSnapshot(*(getattr(snap, f)[0] for f in
                                ("theta", "lam", "mu", "omega", "eta", "psi", "phi")))

    def outputs_batch(self, states: np.ndarray) -> TrajectoryOutputs:
        x = np.asarray(states)
        theta = x @ self.S_theta.T
        if self.mode == "coupling":
            lam = x @ self.S_lam.T
            omega = theta @ self.R.T
            eta = (self._h_table.grad(omega) * lam) @ self.R
            phi = -self._f_table.grad(theta) - eta
            z = np.zeros((x.shape[0], 0))
            return TrajectoryOutputs(theta, lam, z, omega, eta, np.zeros_like(theta), phi)
        omega = theta @ self.A
        mu = x @ self.M_mu.T
        psi = mu @ self.A.T
        eta = np.zeros_like(theta)
        if self._cons_idx.size:
            lam_full = x @ self.S_lam.T
            eta[:, self._cons_idx] = (
                self._g_table.grad(theta[:, self._cons_idx]) * lam_full[:, self._cons_idx]
            )
            lam = lam_full
        else:
            lam = np.zeros_like(theta) if self.profile.n_duals == 0 else x @ self.S_lam.T
        phi = -self._f_table.grad(theta) - eta - psi
        return TrajectoryOutputs(theta, lam, mu, omega, eta, psi, phi)

    def controls_batch(self, times: np.ndarray, states: np.ndarray) -> np.ndarray:
        if self._generic is not None:
            return np.asarray([self._control_generic(t, x) for t, x in zip(times, states)])
        u = states @ self.K_nominal.T
        if self._v is not None:
            u = u + self._v_batch(times)
        return u

    def _v_batch(self, times: np.ndarray) -> np.ndarray:
        batch = getattr(self._v, "batch", None)
        if batch is not None:
            return batch(np.asarray(times))
        return np.array([self._v(t) for t in np.asarray(times)])


def closed_loop(profile, problem, controller=None, *, mode=None) -> ClosedLoop:
    return ClosedLoop(profile, problem, controller, mode=mode)


# ---------------------------------------------------------------------------
# Feed-forward transform


@dataclass(frozen=True)
class FeedforwardForm:
    """Edge feed-forward re-expressed as node Laplacian feedback.

    The state is unchanged; the xi dynamics gain the extra weighted-Laplacian
    feedback term and the raw edge output is re-based so the reported
    multiplier is ``mu = mu_tilde + d * omega``. Edges with zero feed-forward
    gain keep no dedicated control channel.
    """

    profile: AugmentationProfile
    problem: ConsensusProblem
    laplacian: np.ndarray
    active_edges: tuple[int, ...]

    def closed_loop(self, controller=None) -> ClosedLoop:
        return ClosedLoop(self.profile, self.problem, controller, mode="feedforward")

    def nominal_controller(self) -> FeedforwardNominalController:
        return FeedforwardNominalController(self.profile)


def feedforward_transform(
    profile: AugmentationProfile, problem: ConsensusProblem
) -> FeedforwardForm:
    """Normal form for profiles whose only feed-forward sits on the edges."""
    if not isinstance(problem, ConsensusProblem):
        raise UnsupportedVariantError("feed-forward transform applies to consensus problems")
    if problem.constrained_nodes or profile.tau_dim:
        raise UnsupportedVariantError(
            "feed-forward transform requires an unconstrained problem"
        )
    lap = weighted_laplacian(problem.incidence, np.asarray(profile.edge_d))
    active = tuple(int(e) for e in np.flatnonzero(np.asarray(profile.edge_d) > 0))
    return FeedforwardForm(profile, problem, lap, active)


# ---------------------------------------------------------------------------
# State construction helpers


def equilibrium_state(
    reference: ReferenceSolution, profile: AugmentationProfile
) -> SystemState:
    """State whose outputs sit exactly at the reference optimum."""
    xi = np.zeros(profile.xi_dim)
    for i, s in enumerate(profile.xi_starts):
        xi[s] = reference.theta_star[i]
    tau = np.zeros(profile.tau_dim)
    if profile.n_duals:
        if len(reference.lambda_star) != profile.n_duals:
            raise ValueError("multiplier count does not match dual stacks")
        for i, (s, r) in enumerate(zip(profile.tau_starts, profile.dual_orders)):
            if r:
                tau[s] = reference.lambda_star[i]
    zeta = np.zeros(profile.zeta_dim)
    for j, s in enumerate(profile.zeta_starts):
        zeta[s] = reference.mu_star[j]
    return SystemState(xi, tau, zeta)


def initial_state(
    profile: AugmentationProfile,
    theta0: np.ndarray,
    lam0: np.ndarray | None = None,
    mu0: np.ndarray | None = None,
) -> SystemState:
    """State with given initial outputs: first stack components carry the
    outputs, all higher components start at zero."""
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (profile.n_nodes,):
        raise ValueError(f"theta0 shape {theta0.shape}, expected ({profile.n_nodes},)")
    xi = np.zeros(profile.xi_dim)
    for i, s in enumerate(profile.xi_starts):
        xi[s] = theta0[i]
    tau = np.zeros(profile.tau_dim)
    if lam0 is not None:
        lam0 = np.asarray(lam0, dtype=float)
        if lam0.shape != (profile.n_duals,):
            raise ValueError(f"lam0 shape {lam0.shape}, expected ({profile.n_duals},)")
        if np.any(lam0 < 0):
            raise ValueError("initial multipliers must be non-negative")
        for i, (s, r) in enumerate(zip(profile.tau_starts, profile.dual_orders)):
            if r:
                tau[s] = lam0[i]
    zeta = np.zeros(profile.zeta_dim)
    if mu0 is not None:
        mu0 = np.asarray(mu0, dtype=float)
        if mu0.shape != (profile.n_edges,):
            raise ValueError(f"mu0 shape {mu0.shape}, expected ({profile.n_edges},)")
        for j, s in enumerate(profile.zeta_starts):
            zeta[s] = mu0[j]
    return SystemState(xi, tau, zeta)
