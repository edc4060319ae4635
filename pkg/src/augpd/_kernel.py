"""Optional compiled inner loop for the fixed-step integrator.

The pure-numpy field evaluation in :mod:`dynamics` is the semantic
reference; this module replays the same arithmetic with numba at C speed
for the common case (nominal or sine-perturbed controller, catalog function
kinds). ``run_compiled`` returns None whenever the setup is outside that
case, and the caller falls back to the numpy loop. Equivalence of the two
paths is asserted in the test suite.

Function kind encoding: 0 quadratic (p1=weight, p2=center), 1 exponential
(p1=weight, p2=rate), 2 neg-log (p1=weight, p2=shift), 3 affine (p1=slope,
p2=intercept). Error codes: 0 ok, 1 divergence, 2 domain violation.
"""
from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False


def _encode_functions(funcs) -> tuple | None:
    from .convex import Affine, Exponential, NegLog, Quadratic

    kinds = np.empty(len(funcs), dtype=np.int64)
    p1 = np.empty(len(funcs))
    p2 = np.empty(len(funcs))
    for i, f in enumerate(funcs):
        if type(f) is Quadratic:
            kinds[i], p1[i], p2[i] = 0, f.weight, f.center
        elif type(f) is Exponential:
            kinds[i], p1[i], p2[i] = 1, f.weight, f.rate
        elif type(f) is NegLog:
            kinds[i], p1[i], p2[i] = 2, f.weight, f.shift
        elif type(f) is Affine:
            kinds[i], p1[i], p2[i] = 3, f.slope, f.intercept
        else:
            return None
    return kinds, p1, p2


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _deriv(
        out,
        t,
        x,
        ks,
        bu,
        v_amp,
        v_freq,
        v_toff,
        pxi_neg,
        ptau,
        cons_idx,
        fk,
        fp1,
        fp2,
        gk,
        gp1,
        gp2,
        rmat,
        mode,
        nxi,
        ntau,
        nv,
    ):
        dim = x.size
        y = ks @ x
        for i in range(dim):
            out[i] = y[i]
        th = y[dim : dim + nv]
        extra = y[dim + nv :]
        if v_amp.size and t < v_toff:
            for c in range(v_amp.size):
                vc = v_amp[c] * np.sin(v_freq[c] * t)
                for r in range(dim):
                    if bu[r, c] != 0.0:
                        out[r] += bu[r, c] * vc

        g = np.empty(nv)
        for i in range(nv):
            p = th[i]
            k = fk[i]
            if k == 0:
                g[i] = 2.0 * fp1[i] * (p - fp2[i])
            elif k == 1:
                g[i] = fp1[i] * fp2[i] * np.exp(fp2[i] * p)
            elif k == 2:
                m = p - fp2[i]
                if m <= 1e-12:
                    return 2
                g[i] = -fp1[i] / m
            else:
                g[i] = fp1[i]

        if mode == 0:
            ncons = cons_idx.size
            gv = np.empty(ncons)
            for c in range(ncons):
                p = th[cons_idx[c]]
                k = gk[c]
                if k == 0:
                    d = p - gp2[c]
                    gv[c] = gp1[c] * d * d
                    gg = 2.0 * gp1[c] * d
                elif k == 1:
                    e = np.exp(gp2[c] * p)
                    gv[c] = gp1[c] * e
                    gg = gp1[c] * gp2[c] * e
                elif k == 2:
                    m = p - gp2[c]
                    if m <= 1e-12:
                        return 2
                    gv[c] = -gp1[c] * np.log(m)
                    gg = -gp1[c] / m
                else:
                    gv[c] = gp1[c] * p + gp2[c]
                    gg = gp1[c]
                g[cons_idx[c]] += gg * extra[c]
        else:
            nlinks = rmat.shape[0]
            gv = np.empty(nlinks)
            for j in range(nlinks):
                w = 0.0
                for i in range(nv):
                    w += rmat[j, i] * th[i]
                k = gk[j]
                if k == 0:
                    d = w - gp2[j]
                    gv[j] = gp1[j] * d * d
                    hg = 2.0 * gp1[j] * d
                elif k == 1:
                    e = np.exp(gp2[j] * w)
                    gv[j] = gp1[j] * e
                    hg = gp1[j] * gp2[j] * e
                elif k == 2:
                    m = w - gp2[j]
                    if m <= 1e-12:
                        return 2
                    gv[j] = -gp1[j] * np.log(m)
                    hg = -gp1[j] / m
                else:
                    gv[j] = gp1[j] * w + gp2[j]
                    hg = gp1[j]
                scale = hg * extra[j]
                for i in range(nv):
                    g[i] += rmat[j, i] * scale

        for r in range(nxi):
            acc = 0.0
            for i in range(nv):
                acc += pxi_neg[r, i] * g[i]
            out[r] += acc

        if ntau:
            for r in range(ntau):
                raw = out[nxi + r]
                for c in range(gv.size):
                    raw += ptau[r, c] * gv[c]
                if x[nxi + r] > 0.0 or raw >= 0.0:
                    out[nxi + r] = raw
                else:
                    out[nxi + r] = 0.0
        return 0

    @numba.njit(cache=True)
    def _rk4(
        states,
        n_steps,
        dt,
        clamp_lo,
        clamp_hi,
        limit,
        ks,
        bu,
        v_amp,
        v_freq,
        v_toff,
        pxi_neg,
        ptau,
        cons_idx,
        fk,
        fp1,
        fp2,
        gk,
        gp1,
        gp2,
        rmat,
        mode,
        nxi,
        ntau,
        nv,
    ):
        dim = states.shape[1]
        x = states[0].copy()
        k1 = np.empty(dim)
        k2 = np.empty(dim)
        k3 = np.empty(dim)
        k4 = np.empty(dim)
        xs = np.empty(dim)
        half = 0.5 * dt
        sixth = dt / 6.0
        for step in range(n_steps):
            t = step * dt
            code = _deriv(k1, t, x, ks, bu, v_amp, v_freq, v_toff, pxi_neg, ptau,
                          cons_idx, fk, fp1, fp2, gk, gp1, gp2, rmat, mode, nxi, ntau, nv)
            if code:
                return code, step
            for i in range(dim):
                xs[i] = x[i] + half * k1[i]
            for i in range(clamp_lo, clamp_hi):
                if xs[i] < 0.0:
                    xs[i] = 0.0
            code = _deriv(k2, t + half, xs, ks, bu, v_amp, v_freq, v_toff, pxi_neg, ptau,
                          cons_idx, fk, fp1, fp2, gk, gp1, gp2, rmat, mode, nxi, ntau, nv)
            if code:
                return code, step
            for i in range(dim):
                xs[i] = x[i] + half * k2[i]
            for i in range(clamp_lo, clamp_hi):
                if xs[i] < 0.0:
                    xs[i] = 0.0
            code = _deriv(k3, t + half, xs, ks, bu, v_amp, v_freq, v_toff, pxi_neg, ptau,
                          cons_idx, fk, fp1, fp2, gk, gp1, gp2, rmat, mode, nxi, ntau, nv)
            if code:
                return code, step
            for i in range(dim):
                xs[i] = x[i] + dt * k3[i]
            for i in range(clamp_lo, clamp_hi):
                if xs[i] < 0.0:
                    xs[i] = 0.0
            code = _deriv(k4, t + dt, xs, ks, bu, v_amp, v_freq, v_toff, pxi_neg, ptau,
                          cons_idx, fk, fp1, fp2, gk, gp1, gp2, rmat, mode, nxi, ntau, nv)
            if code:
                return code, step
            for i in range(dim):
                x[i] = x[i] + sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i])
            for i in range(clamp_lo, clamp_hi):
                if x[i] < 0.0:
                    x[i] = 0.0
            for i in range(dim):
                if not (abs(x[i]) < limit):
                    return 1, step + 1
            states[step + 1] = x
        return 0, n_steps


def pack_loop(loop) -> dict | None:
    """Kernel arguments for a closed loop, or None when unsupported."""
    if not HAVE_NUMBA or loop._generic is not None:
        return None
    obj = _encode_functions(loop.problem.objectives)
    if obj is None:
        return None
    fk, fp1, fp2 = obj
    nv = loop.S_theta.shape[0]
    if loop.mode == "coupling":
        mode = 1
        cons = _encode_functions(loop.problem.link_constraints)
        if cons is None:
            return None
        gk, gp1, gp2 = cons
        rmat = np.ascontiguousarray(loop.R)
        cons_idx = np.zeros(0, dtype=np.int64)
    else:
        mode = 0
        if loop._cons_idx.size:
            cons = _encode_functions(
                tuple(loop.problem.constraints[i] for i in loop._cons_idx)
            )
            if cons is None:
                return None
            gk, gp1, gp2 = cons
        else:
            gk = np.zeros(0, dtype=np.int64)
            gp1 = gp2 = np.zeros(0)
        rmat = np.zeros((0, nv))
        cons_idx = loop._cons_idx.astype(np.int64)
    v = loop._v
    if v is None:
        v_amp = v_freq = np.zeros(0)
        v_toff = 0.0
    else:
        v_amp = getattr(v, "amplitudes", None)
        v_freq = getattr(v, "frequencies", None)
        v_toff = getattr(v, "t_off", None)
        if v_amp is None or v_freq is None or v_toff is None:
            return None
        v_amp = np.asarray(v_amp, dtype=float)
        v_freq = np.asarray(v_freq, dtype=float)
        v_toff = float(v_toff)
    return dict(
        ks=np.ascontiguousarray(loop._KS),
        bu=np.ascontiguousarray(loop.B_u),
        v_amp=v_amp,
        v_freq=v_freq,
        v_toff=v_toff,
        pxi_neg=np.ascontiguousarray(loop._P_xi_neg),
        ptau=np.ascontiguousarray(loop._P_tau_cons),
        cons_idx=cons_idx,
        fk=fk,
        fp1=fp1,
        fp2=fp2,
        gk=gk,
        gp1=gp1,
        gp2=gp2,
        rmat=rmat,
        mode=mode,
        nxi=loop._nxi,
        ntau=loop._ntau,
        nv=nv,
    )


def run_compiled(loop, states: np.ndarray, n_steps: int, dt: float, limit: float):
    """Fill ``states`` rows 1..n_steps in place; (code, step) or None."""
    args = pack_loop(loop)
    if args is None:
        return None
    sl = loop.nonneg_slice
    return _rk4(
        states, n_steps, dt, sl.start, sl.stop, limit, **args
    )
