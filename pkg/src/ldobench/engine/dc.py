"""Nonlinear DC solution: Newton-Raphson with analytic Jacobians, mode
resolution for the behavioral comparators/limiter, and a two-stage
homotopy fallback (gmin stepping, then source stepping)."""

from __future__ import annotations

import numpy as np

from ..netlist import Circuit
from ..waveforms import SweepSpec
from .mna import (Assembly, ConvergenceError, SingularMatrixError, Tolerances)
from .results import OpPoint, SolveStats, SweepTrace

_STEP_LIMIT = 50.0          # componentwise Newton step clamp, V or A
_GMIN_LADDER = [10.0 ** -k for k in range(2, 13)]  # 1e-2 .. 1e-12, one decade per stage
_GAIN_LADDER = [1e-3, 1e-2, 1e-1, 0.2, 0.35, 0.6, 1.0]
_SOURCE_STEPS = 20


def _solve_linear(J, rhs, assembly):
    try:
        dx = np.linalg.solve(J, rhs)
    except np.linalg.LinAlgError:
        raise _singular(J, assembly) from None
    if not np.all(np.isfinite(dx)):
        raise _singular(J, assembly)
    return dx


def _singular(J, assembly):
    suspect = None
    rows = np.where(~J.any(axis=1))[0]
    cols = np.where(~J.any(axis=0))[0]
    idx = rows[0] if len(rows) else (cols[0] if len(cols) else None)
    if idx is not None:
        names = assembly.node_names + assembly.branch_names
        suspect = names[idx]
    msg = "singular MNA matrix"
    if suspect:
        msg += f" (suspect node/branch: {suspect})"
    return SingularMatrixError(msg, suspect=suspect)


def newton(assembly: Assembly, x0, modes, *, t=None, src_scale=1.0, gmin=0.0,
           gain_scale=1.0, isrc_scale=1.0, c0=0.0, q_hist=None,
           tol: Tolerances | None = None,
           max_iter=None, stats: SolveStats | None = None):
    """Newton-Raphson to the assembly's residual.  Returns the solution.

    Convergence requires the KCL residual bound AND a small last update;
    a residual already below the absolute floor converges immediately,
    which lets linear circuits finish in a single solve.
    """
    tol = tol or assembly.tol
    max_iter = max_iter or tol.max_iter
    x = np.array(x0, dtype=float)
    reltol = tol.reltol
    last_dx_ok = False
    prev_res = np.inf
    x_prev = None
    halvings = 0
    iterations = 0
    res_abs = np.inf
    best_res = np.inf
    stuck = 0

    while True:
        ev = assembly.eval(x, modes, t=t, src_scale=src_scale, gmin=gmin,
                           want_q=c0 != 0.0, gain_scale=gain_scale,
                           isrc_scale=isrc_scale)
        F = ev.F
        if c0 != 0.0:
            F = F + c0 * ev.q - q_hist
        bound = assembly.row_abstol + reltol * ev.scale
        res = float(np.max(np.abs(F) - bound))
        res_abs = float(np.max(np.abs(F)))
        if stats is not None:
            stats.history.append((res_abs, iterations))
        if np.all(np.abs(F) <= assembly.row_abstol) or (res <= 0.0 and last_dx_ok):
            if stats is not None:
                stats.iterations += iterations
                stats.residual = res_abs
                stats.kcl_margin = float(
                    np.max(np.abs(F[: assembly.n_nodes]) - bound[: assembly.n_nodes]))
            return x

        # If the last full step made things much worse, retreat half way
        # toward the previous iterate instead of solving again from here.
        blew_up = (not np.isfinite(res_abs)) or (res_abs > 10.0 * prev_res)
        if x_prev is not None and blew_up and halvings < 6:
            x = 0.5 * (x + x_prev)
            halvings += 1
            continue
        halvings = 0

        if iterations >= max_iter:
            break
        J = ev.J
        if c0 != 0.0:
            J = J + c0 * ev.JQ
        dx = _solve_linear(J, -F, assembly)
        np.clip(dx, -_STEP_LIMIT, _STEP_LIMIT, out=dx)
        dx *= assembly.damping_scale(x, dx)
        if res_abs < 0.9 * best_res:
            best_res = res_abs
            stuck = 0
        else:
            stuck += 1
            if stuck >= 12:
                dx *= 0.25
            elif stuck >= 6:
                dx *= 0.5
        x_prev = x
        prev_res = res_abs
        x = x + dx
        iterations += 1
        dx_bound = assembly.col_abstol + reltol * np.abs(x)
        last_dx_ok = bool(np.all(np.abs(x - x_prev) <= dx_bound))

    raise ConvergenceError(
        f"Newton failed to converge after {iterations} iterations "
        f"(worst residual {res_abs:.3e})",
        residual=res_abs, iterations=iterations,
        trace=stats.history if stats is not None else None)


def solve_with_modes(assembly: Assembly, x0, modes, *, t=None, src_scale=1.0,
                     gmin=0.0, gain_scale=1.0, isrc_scale=1.0, tol=None,
                     stats: SolveStats | None = None):
    """Newton solve iterated to mode consistency (comparators, limiter)."""
    tol = tol or assembly.tol
    x = x0
    seen = []
    for round_no in range(tol.max_mode_rounds):
        x = newton(assembly, x, modes, t=t, src_scale=src_scale, gmin=gmin,
                   gain_scale=gain_scale, isrc_scale=isrc_scale, tol=tol,
                   stats=stats)
        new_modes = assembly.mode_update(x, modes, t=t, src_scale=src_scale,
                                         gain_scale=gain_scale,
                                         isrc_scale=isrc_scale)
        if stats is not None:
            stats.mode_rounds = round_no + 1
        if new_modes == modes:
            return x, modes
        key = tuple(sorted((k, repr(v)) for k, v in new_modes.items()))
        if key in seen:
            # mode cycle: keep the latest consistent-enough solution
            return x, new_modes
        seen.append(key)
        modes = new_modes
    raise ConvergenceError("behavioral element modes failed to settle",
                           trace=[m for m in seen])


def _homotopy_solve(assembly: Assembly, x0, modes, *, t=None, tol=None,
                    stats: SolveStats | None = None):
    """Plain Newton, then gmin stepping, then source stepping."""
    tol = tol or assembly.tol
    try:
        return solve_with_modes(assembly, x0, modes, t=t, tol=tol, stats=stats)
    except (ConvergenceError, SingularMatrixError):
        pass

    # Regulator-aware ramp: first find the current-source-free solution by
    # stepping amplifier gain up from a few V/V (the equilibrium moves
    # continuously with gain), then ramp the current sources back in with
    # the loop already regulating.
    try:
        x, m = assembly.zeros(), assembly.mode_init(assembly.zeros())
        for gs in _GAIN_LADDER:
            x, m = solve_with_modes(assembly, x, m, t=t, gain_scale=gs,
                                    isrc_scale=0.0, tol=tol, stats=stats)
            if stats is not None:
                stats.gmin_steps += 1
        for alpha in np.linspace(0.1, 1.0, 10):
            x, m = solve_with_modes(assembly, x, m, t=t,
                                    isrc_scale=float(alpha), tol=tol,
                                    stats=stats)
            if stats is not None:
                stats.source_steps += 1
        return x, m
    except (ConvergenceError, SingularMatrixError):
        pass

    # gmin ladder
    x, m = np.array(x0, dtype=float), dict(modes)
    try:
        for g in _GMIN_LADDER:
            x, m = solve_with_modes(assembly, x, m, t=t, gmin=g, tol=tol, stats=stats)
            if stats is not None:
                stats.gmin_steps += 1
        return solve_with_modes(assembly, x, m, t=t, gmin=0.0, tol=tol, stats=stats)
    except (ConvergenceError, SingularMatrixError):
        pass

    # source stepping
    x, m = assembly.zeros(), assembly.mode_init(assembly.zeros())
    last_exc = None
    try:
        for alpha in np.linspace(1.0 / _SOURCE_STEPS, 1.0, _SOURCE_STEPS):
            x, m = solve_with_modes(assembly, x, m, t=t, src_scale=float(alpha),
                                    tol=tol, stats=stats)
            if stats is not None:
                stats.source_steps += 1
        return x, m
    except (ConvergenceError, SingularMatrixError) as exc:
        last_exc = exc
    raise ConvergenceError(
        "operating point failed after gmin and source stepping: " + str(last_exc),
        residual=getattr(last_exc, "residual", None),
        iterations=getattr(last_exc, "iterations", 0),
        trace=getattr(last_exc, "trace", None))


def _supply_current(circuit: Circuit, assembly: Assembly, x) -> float:
    """Current drawn from the main supply: the probe named isupply if
    declared, otherwise the first voltage source (negated branch current,
    so that a sourcing supply reads positive)."""
    for p in circuit.probes:
        if p.name == "isupply":
            return float(p.sign * x[assembly.index[f"{p.target}#b"]])
    for st in assembly.stampers:
        if type(st).__name__ == "VsourceStamp":
            return float(-x[st.row])
    return 0.0


def make_op(circuit: Circuit, assembly: Assembly, x, modes, stats) -> OpPoint:
    return OpPoint(
        voltages=assembly.voltages(x),
        branch_currents=assembly.branch_currents(x),
        elements=assembly.op_infos(x, modes),
        supply_current=_supply_current(circuit, assembly, x),
        temperature=circuit.temperature,
        stats=stats,
        x=x,
        modes=modes,
    )


def dc_operating_point(circuit: Circuit, *, tol: Tolerances | None = None,
                       x0=None, modes0=None, t0: float = 0.0) -> OpPoint:
    """DC operating point with sources evaluated at t = t0."""
    assembly = Assembly(circuit, tol)
    stats = SolveStats()
    x_init = assembly.zeros() if x0 is None else np.array(x0, dtype=float)
    modes = assembly.mode_init(x_init) if modes0 is None else dict(modes0)
    x, modes = _homotopy_solve(assembly, x_init, modes, t=t0, tol=tol, stats=stats)
    return make_op(circuit, assembly, x, modes, stats)


def _apply_sweep_target(circuit: Circuit, target: str, value: float) -> Circuit:
    if target == "temperature":
        return circuit.with_temperature(value)
    if target.startswith("source:"):
        return circuit.with_source_level(target.split(":", 1)[1], value)
    if target.startswith("param:"):
        spec = target.split(":", 1)[1]
        elem_name, _, fieldname = spec.partition(".")
        el = circuit.element(elem_name)
        import dataclasses
        params = dataclasses.replace(el.params, **{fieldname: value})
        return circuit.replaced(elem_name, dataclasses.replace(el, params=params))
    raise ValueError(f"unknown sweep target {target!r}; use source:<name>, "
                     "temperature, or param:<element>.<field>")


def default_probe_names(circuit: Circuit) -> list[str]:
    names = [p.name for p in circuit.probes]
    if names:
        return names
    return [f"v({n})" for n in circuit.nodes if n != "0"]


def _probe_values(circuit: Circuit, assembly: Assembly, x, names) -> list[float]:
    by_name = {p.name: p for p in circuit.probes}
    out = []
    for nm in names:
        if nm in by_name:
            out.append(assembly.probe_value(x, by_name[nm]))
        else:
            node = nm[2:-1] if nm.startswith("v(") else nm
            idx = assembly.index.get(node, -1)
            out.append(float(x[idx]) if idx >= 0 else 0.0)
    return out


def dc_sweep(circuit: Circuit, spec: SweepSpec, *, tol: Tolerances | None = None,
             probes: list[str] | None = None) -> SweepTrace:
    """Point-by-point operating points with continuation; per-point failures
    are flagged, not fatal."""
    values = spec.grid()
    probe_names = probes or default_probe_names(circuit)
    points: list[OpPoint | None] = []
    converged: list[bool] = []
    data = np.full((len(values), len(probe_names)), np.nan)

    x_prev = None
    modes_prev = None
    for k, val in enumerate(values):
        c = _apply_sweep_target(circuit, spec.target, float(val))
        assembly = Assembly(c, tol)
        stats = SolveStats()
        try:
            x0 = assembly.zeros() if x_prev is None else x_prev
            modes = (assembly.mode_init(x0) if modes_prev is None else dict(modes_prev))
            x, modes = _homotopy_solve(assembly, x0, modes, t=0.0, tol=tol,
                                       stats=stats)
            op = make_op(c, assembly, x, modes, stats)
            points.append(op)
            converged.append(True)
            data[k] = _probe_values(c, assembly, x, probe_names)
            x_prev, modes_prev = x, modes
        except (ConvergenceError, SingularMatrixError):
            points.append(None)
            converged.append(False)
    return SweepTrace(target=spec.target, values=values, points=points,
                      converged=converged, probe_names=probe_names,
                      probe_data=data)
