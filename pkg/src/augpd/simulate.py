"""Projected ODE integration, trajectory storage, equilibrium detection, and
transient metrics.

Fixed-step classic Runge-Kutta. The non-negative state block is clamped to
zero before every stage evaluation (so the projected field never sees a
negative dual state) and again after each step; boundary crossings are
resolved by the step size rather than event detection, which keeps the
integrator trivially reproducible. Outputs and controls are reconstructed in
one vectorized pass after the state sweep.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernel
from .convex import DomainError
from .dynamics import ClosedLoop, SystemState, TrajectoryOutputs

__all__ = [
    "DivergenceError",
    "Trajectory",
    "integrate",
    "equilibrium_of",
    "TransientMetrics",
    "transient_metrics",
]

DIVERGENCE_LIMIT = 1e9


class DivergenceError(RuntimeError):
    """A state component left the sane range during integration."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass
class Trajectory:
    """Uniformly sampled solution of a projected initial value problem.

    ``states`` holds raw state vectors, one row per sample. ``outputs`` and
    ``controls`` are populated when the field is a :class:`ClosedLoop`; for
    bare callables they are None.
    """

    times: np.ndarray
    states: np.ndarray
    outputs: TrajectoryOutputs | None = None
    controls: np.ndarray | None = None
    nonneg_slice: slice | None = None

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self) -> int:
        return len(self.times)


def integrate(field, state0, dt: float, t_end: float, *, nonneg_slice=None) -> Trajectory:
    """Integrate ``field`` from ``state0`` on the uniform grid 0..t_end.

    ``field`` is either a :class:`ClosedLoop` or a callable ``f(t, x)``
    returning the state derivative. ``nonneg_slice`` marks state components
    kept non-negative by clamping (taken from the closed loop when given).
    """
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    loop: ClosedLoop | None = None
    if isinstance(field, ClosedLoop):
        loop = field
        f = loop.derivative
        nonneg_slice = loop.nonneg_slice
    else:
        f = field
    if isinstance(state0, SystemState):
        x = state0.as_vector()
    else:
        x = np.asarray(state0, dtype=float).copy()
    if x.ndim != 1:
        raise ValueError("state0 must be a vector")
    if nonneg_slice is not None and np.any(x[nonneg_slice] < 0):
        raise ValueError("initial non-negative block has negative components")

    n_steps = int(round(t_end / dt))
    times = np.arange(n_steps + 1) * dt
    states = np.empty((n_steps + 1, x.size))
    states[0] = x

    compiled = None
    if loop is not None:
        compiled = _kernel.run_compiled(loop, states, n_steps, dt, DIVERGENCE_LIMIT)
    if compiled is not None:
        code, step = compiled
        if code == 1:
            raise DivergenceError(
                f"state left |x| < {DIVERGENCE_LIMIT:g} at t = {step * dt:.6g}",
                time=step * dt,
            )
        if code == 2:
            raise DomainError(
                f"objective or constraint domain violated near t = {step * dt:.6g}",
                boundary=float("nan"),
            )
    else:
        _rk4_python(f, states, n_steps, dt, nonneg_slice)

    outputs = controls = None
    if loop is not None:
        outputs = loop.outputs_batch(states)
        controls = loop.controls_batch(times, states)
    return Trajectory(times, states, outputs, controls, nonneg_slice)


def _rk4_python(f, states: np.ndarray, n_steps: int, dt: float, nonneg_slice) -> None:
    """Reference RK4 sweep; fills states rows 1..n_steps in place."""
    x = states[0].copy()
    clamp = nonneg_slice is not None and (nonneg_slice.stop - nonneg_slice.start) > 0
    half = 0.5 * dt
    sixth = dt / 6.0
    for i in range(n_steps):
        t = i * dt
        k1 = f(t, x)
        x2 = x + half * k1
        if clamp:
            np.maximum(x2[nonneg_slice], 0.0, out=x2[nonneg_slice])
        k2 = f(t + half, x2)
        x3 = x + half * k2
        if clamp:
            np.maximum(x3[nonneg_slice], 0.0, out=x3[nonneg_slice])
        k3 = f(t + half, x3)
        x4 = x + dt * k3
        if clamp:
            np.maximum(x4[nonneg_slice], 0.0, out=x4[nonneg_slice])
        k4 = f(t + dt, x4)
        x = x + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        if clamp:
            np.maximum(x[nonneg_slice], 0.0, out=x[nonneg_slice])
        if not np.all(np.abs(x) < DIVERGENCE_LIMIT):
            raise DivergenceError(
                f"state left |x| < {DIVERGENCE_LIMIT:g} at t = {(i + 1) * dt:.6g}",
                time=(i + 1) * dt,
            )
        states[i + 1] = x


def equilibrium_of(traj: Trajectory, window: int) -> tuple[np.ndarray, bool]:
    """Mean of the last ``window`` samples and a convergence flag.

    Converged means every state component stays within 1e-7 of the final
    sample over the window.
    """
    if not 0 < window < len(traj):
        raise ValueError(f"window must be in (0, {len(traj)})")
    tail = traj.states[-window:]
    movement = float(np.max(np.abs(tail - traj.states[-1])))
    return tail.mean(axis=0), movement < 1e-7


@dataclass(frozen=True)
class TransientMetrics:
    """Settling/overshoot/oscillation summary of the primal estimates.

    ``settling_time`` is the first time after which every node deviation
    stays inside the band (a fraction of the largest initial deviation);
    ``overshoot`` measures how far past the target any node travels in its
    initial approach direction; ``oscillation_count`` sums sign changes of
    the deviations, ignoring flips below the noise floor.
    """

    settling_time: float
    overshoot: float
    oscillation_count: int
    settled: bool
    band: float
    degenerate: bool = False


def transient_metrics(
    traj: Trajectory, theta_star: np.ndarray, band_fraction: float = 0.02
) -> TransientMetrics:
    if traj.outputs is None:
        raise ValueError("trajectory has no recorded outputs")
    dev = traj.outputs.theta - np.asarray(theta_star)[None, :]
    initial = np.abs(dev[0])
    scale = float(initial.max(initial=0.0))
    if scale == 0.0:
        return TransientMetrics(0.0, 0.0, 0, True, 0.0, degenerate=True)
    band = band_fraction * scale

    worst = np.max(np.abs(dev), axis=1)
    inside_after = np.flip(np.maximum.accumulate(np.flip(worst))) < band
    if inside_after.any():
        settling_time = float(traj.times[int(np.argmax(inside_after))])
        settled = True
    else:
        settling_time = float(traj.times[-1])
        settled = False

    # Approach direction: a node starting below its target overshoots upward.
    approach = np.where(dev[0] == 0.0, 0.0, -np.sign(dev[0]))
    past = approach[None, :] * dev
    overshoot = float(np.maximum(past, 0.0).max())

    floor = 1e-3 * band
    count = 0
    for i in range(dev.shape[1]):
        s = dev[:, i]
        keep = np.abs(s) > floor
        signs = np.sign(s[keep])
        count += int(np.count_nonzero(np.diff(signs) != 0))
    return TransientMetrics(settling_time, overshoot, count, settled, band)
