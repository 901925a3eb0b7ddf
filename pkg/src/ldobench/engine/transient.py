"""Implicit transient integration.

Trapezoidal rule with backward-Euler startup and BE restarts after
discontinuities (waveform breakpoints, behavioral mode flips), adaptive
step size from a predictor/corrector local-truncation-error estimate, and
forced steps at every waveform breakpoint so stimulus edges are never
stepped over.  Each step is solved by Newton on f(x) + dq/dt = 0 with the
companion form dq/dt ~ c0*q(x) - hist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..netlist import Circuit
from ..waveforms import Sine
from .mna import Assembly, ConvergenceError, Tolerances
from .dc import dc_operating_point, newton, default_probe_names, _probe_values
from .results import SolveStats, TransientTrace


@dataclass(frozen=True)
class StepPolicy:
    """Transient step-size policy.  With fixed_dt set, the solver runs a
    uniform grid (plus breakpoints) with no error control."""

    dt_initial: float | None = None
    dt_min: float | None = None
    dt_max: float | None = None
    fixed_dt: float | None = None
    lte_reltol: float | None = None   # defaults to engine reltol
    lte_abstol: float = 1e-6          # V floor on node voltages
    trtol: float = 7.0                # conventional LTE safety divisor


def _breakpoints(circuit: Circuit, t_stop: float) -> list[float]:
    bps = {t_stop}
    for el in circuit.elements:
        wave = getattr(el.params, "waveform", None)
        if wave is None:
            continue
        for b in wave.breakpoints():
            if 0.0 < b < t_stop:
                bps.add(float(b))
    return sorted(bps)


def _sine_dt_cap(circuit: Circuit) -> float:
    cap = math.inf
    for el in circuit.elements:
        wave = getattr(el.params, "waveform", None)
        if isinstance(wave, Sine):
            cap = min(cap, 1.0 / (20.0 * wave.freq))
    return cap


def transient(circuit: Circuit, t_stop: float, *, policy: StepPolicy | None = None,
              tol: Tolerances | None = None,
              probes: list[str] | None = None) -> TransientTrace:
    """Integrate from the t=0 operating point to t_stop."""
    if t_stop <= 0:
        raise ValueError("t_stop must be > 0")
    policy = policy or StepPolicy()
    tol = tol or Tolerances()
    assembly = Assembly(circuit, tol)
    probe_names = probes or default_probe_names(circuit)

    op = dc_operating_point(circuit, tol=tol, t0=0.0)
    x = np.array(op.x)
    modes = dict(op.modes)

    bps = _breakpoints(circuit, t_stop)
    dt_min = policy.dt_min or t_stop * 1e-9
    dt_max = min(policy.dt_max or t_stop / 20.0, _sine_dt_cap(circuit))
    event_dt = max(2.0 * dt_min, t_stop * 1e-6)
    fixed = policy.fixed_dt
    if fixed is not None:
        dt = fixed
    else:
        first_gap = bps[0] if bps else t_stop
        dt = policy.dt_initial or min(dt_max, max(dt_min, first_gap / 50.0))
    lte_rel = policy.lte_reltol or tol.reltol

    nv = assembly.n_nodes
    times = [0.0]
    xs = [x.copy()]
    stats = SolveStats()
    q_prev = assembly.eval(x, modes, t=0.0, want_q=True).q
    qdot_prev = np.zeros_like(q_prev)
    use_be = True                     # BE startup, and after discontinuities
    history: list[tuple[float, np.ndarray]] = [(0.0, x.copy())]

    t = 0.0
    steps = 0
    rejected = 0
    newton_iters = 0
    bp_iter = iter(bps)
    next_bp = next(bp_iter, None)

    while t < t_stop - 1e-15 * t_stop:
        dt_eff = dt if fixed is not None else min(dt, dt_max)
        hit_bp = False
        if next_bp is not None and t + dt_eff >= next_bp - 1e-15 * t_stop:
            dt_eff = next_bp - t
            hit_bp = True
        t_new = t + dt_eff

        if use_be:
            c0 = 1.0 / dt_eff
            hist = c0 * q_prev
            order = 1
        else:
            c0 = 2.0 / dt_eff
            hist = c0 * q_prev + qdot_prev
            order = 2

        # predictor: polynomial extrapolation of recent solutions
        x_pred = _predict(history, t_new, order)

        st = SolveStats()
        try:
            x_new = newton(assembly, x_pred, modes, t=t_new, c0=c0, q_hist=hist,
                           tol=tol, stats=st)
        except ConvergenceError:
            rejected += 1
            if dt_eff <= dt_min * 1.0001:
                raise ConvergenceError(
                    f"transient Newton failed at t={t_new:.6e} s with dt at "
                    f"dt_min={dt_min:.3e} s") from None
            dt = max(dt_min, dt_eff * 0.25)
            continue
        newton_iters += st.iterations
        stats.kcl_margin = max(stats.kcl_margin, st.kcl_margin)

        # local truncation error on node voltages (skip in fixed-dt mode)
        if fixed is None and len(history) >= order + 1:
            denom = policy.trtol * (lte_rel * np.maximum(np.abs(x_new[:nv]),
                                                         np.abs(x[:nv]))
                                    + policy.lte_abstol)
            err = float(np.max(np.abs(x_new[:nv] - x_pred[:nv]) / denom))
            if err > 1.0 and dt_eff > dt_min * 1.0001:
                rejected += 1
                dt = max(dt_min, dt_eff * max(0.2, 0.9 * err ** (-1.0 / (order + 1))))
                continue
            growth = 0.9 * (max(err, 1e-10)) ** (-1.0 / (order + 1))
            dt_next = dt_eff * min(2.0, max(0.3, growth))
        else:
            dt_next = dt_eff if fixed is not None else dt_eff * 2.0

        # behavioral mode events: refine the crossing, then restart with BE
        new_modes = assembly.mode_update(x_new, modes, t=t_new)
        if new_modes != modes:
            if dt_eff > event_dt and fixed is None:
                rejected += 1
                dt = max(dt_min, dt_eff * 0.25)
                continue
            modes = new_modes
            use_be = True
            history.clear()
        else:
            use_be = False

        # accept; both companion forms yield the new charge slope this way
        ev = assembly.eval(x_new, modes, t=t_new, want_q=True)
        qdot_prev = c0 * ev.q - hist
        q_prev = ev.q
        x = x_new
        t = t_new
        steps += 1
        times.append(t)
        xs.append(x.copy())
        history.append((t, x.copy()))
        if len(history) > 4:
            history.pop(0)
        if hit_bp:
            next_bp = next(bp_iter, None)
            use_be = True
            history.clear()
            history.append((t, x.copy()))
            if fixed is None:
                gap = (next_bp - t) if next_bp is not None else (t_stop - t)
                dt_next = min(dt_next, max(dt_min, gap / 20.0))
        if fixed is None:
            dt = max(dt_min, min(dt_next, dt_max))

    data = np.empty((len(times), len(probe_names)))
    for k, xk in enumerate(xs):
        data[k] = _probe_values(circuit, assembly, xk, probe_names)
    stats.iterations = newton_iters
    trace = TransientTrace(times=np.array(times), probe_names=probe_names,
                           probe_data=data, stats=stats, steps=steps,
                           rejected=rejected, newton_iterations=newton_iters)
    return trace


def _predict(history, t_new, order):
    """Polynomial extrapolation through the most recent solutions."""
    if not history:
        raise RuntimeError("empty history")
    if order >= 2 and len(history) >= 3:
        (t0, x0), (t1, x1), (t2, x2) = history[-3], history[-2], history[-1]
        # quadratic Lagrange extrapolation
        l0 = ((t_new - t1) * (t_new - t2)) / ((t0 - t1) * (t0 - t2))
        l1 = ((t_new - t0) * (t_new - t2)) / ((t1 - t0) * (t1 - t2))
        l2 = ((t_new - t0) * (t_new - t1)) / ((t2 - t0) * (t2 - t1))
        return l0 * x0 + l1 * x1 + l2 * x2
    if len(history) >= 2:
        (t1, x1), (t2, x2) = history[-2], history[-1]
        return x2 + (x2 - x1) * ((t_new - t2) / (t2 - t1))
    return history[-1][1].copy()
