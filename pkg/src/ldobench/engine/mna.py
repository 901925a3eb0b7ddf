"""Modified nodal analysis: unknown ordering, element stamp adapters,
residual/Jacobian assembly.

Unknown vector layout: node voltages first (ground excluded), then branch
currents of voltage-defined elements.  The residual F is the KCL current
sum per node row ("currents leaving the node") plus one constraint row
per branch.  Stampers write F, J (dF/dx), q (charge), and dq/dx; the
integrator and AC solver combine them as needed.

Behavioral elements with discrete states (comparators, the foldback
limiter, the error amp's control pins) are handled through a per-element
mode dictionary frozen during each Newton solve; the solver re-resolves
modes to consistency around converged solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import devices as dev
from ..netlist import Circuit, Element, UNCONNECTED, GROUND


@dataclass(frozen=True)
class Tolerances:
    """Engine tolerance set.  Defaults are tight because measured margins
    are at millivolt/microamp scale."""

    reltol: float = 1e-4
    v_abstol: float = 1e-6
    i_abstol: float = 1e-12
    max_iter: int = 120
    max_mode_rounds: int = 16


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, msg, residual=None, iterations=0, trace=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations
        self.trace = trace or []


class SingularMatrixError(SolverError):
    def __init__(self, msg, suspect=None):
        super().__init__(msg)
        self.suspect = suspect


@dataclass
class EvalResult:
    F: np.ndarray
    J: np.ndarray
    q: np.ndarray | None
    JQ: np.ndarray | None
    scale: np.ndarray  # per-row magnitude for relative residual bounds


class _Ctx:
    """Mutable accumulation target handed to stampers."""

    __slots__ = ("x", "t", "temp", "modes", "src_scale", "isrc_scale",
                 "gain_scale", "F", "J", "q", "JQ", "scale")

    def __init__(self, n, x, t, temp, modes, src_scale, want_q, gain_scale=1.0,
                 isrc_scale=1.0):
        self.x = x
        self.t = t
        self.temp = temp
        self.modes = modes
        self.src_scale = src_scale
        self.isrc_scale = isrc_scale
        self.gain_scale = gain_scale
        self.F = np.zeros(n)
        self.J = np.zeros((n, n))
        self.q = np.zeros(n) if want_q else None
        self.JQ = np.zeros((n, n)) if want_q else None
        self.scale = np.zeros(n)

    def v(self, idx: int) -> float:
        return self.x[idx] if idx >= 0 else 0.0

    def add_f(self, row: int, value: float) -> None:
        if row >= 0:
            self.F[row] += value
            a = abs(value)
            if a > self.scale[row]:
                self.scale[row] = a

    def add_j(self, row: int, col: int, value: float) -> None:
        if row >= 0 and col >= 0:
            self.J[row, col] += value

    def add_q(self, row: int, value: float) -> None:
        if self.q is not None and row >= 0:
            self.q[row] += value

    def add_jq(self, row: int, col: int, value: float) -> None:
        if self.JQ is not None and row >= 0 and col >= 0:
            self.JQ[row, col] += value


# ---------------------------------------------------------------------------
# Stampers
# ---------------------------------------------------------------------------

class Stamper:
    has_mode = False

    def __init__(self, el: Element):
        self.el = el
        self.name = el.name

    def stamp(self, ctx: _Ctx) -> None:
        raise NotImplementedError

    def mode_init(self, x, node_of):
        return None

    def mode_update(self, ctx: _Ctx, state):
        return state

    def op_info(self, ctx: _Ctx) -> dict:
        return {}


class ResistorStamp(Stamper):
    def bind(self, idx):
        self.a, self.b = idx(self.el.nodes[0]), idx(self.el.nodes[1])
        self.g = 1.0 / self.el.params.resistance

    def stamp(self, ctx):
        a, b, g = self.a, self.b, self.g
        i = g * (ctx.v(a) - ctx.v(b))
        ctx.add_f(a, i)
        ctx.add_f(b, -i)
        ctx.add_j(a, a, g); ctx.add_j(a, b, -g)
        ctx.add_j(b, a, -g); ctx.add_j(b, b, g)

    def op_info(self, ctx):
        return {"i": self.g * (ctx.v(self.a) - ctx.v(self.b))}


class CapacitorStamp(Stamper):
    """Series ESR + ideal capacitor.  With esr > 0 an internal node is
    allocated between the resistive and charging halves."""

    def bind(self, idx):
        p = self.el.params
        self.a, self.b = idx(self.el.nodes[0]), idx(self.el.nodes[1])
        self.c = p.capacitance
        self.esr = p.esr
        if self.esr > 0:
            self.m = idx(f"{self.name}#m")
            self.g = 1.0 / self.esr
        else:
            self.m = self.a
            self.g = 0.0

    def internal_nodes(self):
        return (f"{self.name}#m",) if self.el.params.esr > 0 else ()

    def stamp(self, ctx):
        a, b, m, c = self.a, self.b, self.m, self.c
        if self.esr > 0:
            g = self.g
            i = g * (ctx.v(a) - ctx.v(m))
            ctx.add_f(a, i); ctx.add_f(m, -i)
            ctx.add_j(a, a, g); ctx.add_j(a, m, -g)
            ctx.add_j(m, a, -g); ctx.add_j(m, m, g)
        q = c * (ctx.v(m) - ctx.v(b))
        ctx.add_q(m, q); ctx.add_q(b, -q)
        ctx.add_jq(m, m, c); ctx.add_jq(m, b, -c)
        ctx.add_jq(b, m, -c); ctx.add_jq(b, b, c)

    def op_info(self, ctx):
        return {"v": ctx.v(self.m) - ctx.v(self.b)}


class VsourceStamp(Stamper):
    def bind(self, idx):
        self.a, self.b = idx(self.el.nodes[0]), idx(self.el.nodes[1])
        self.row = idx(f"{self.name}#b")

    def branch_names(self):
        return (f"{self.name}#b",)

    def stamp(self, ctx):
        a, b, row = self.a, self.b, self.row
        e = ctx.src_scale * self.el.params.waveform.value(ctx.t or 0.0, ctx.temp)
        ib = ctx.x[row]
        ctx.add_f(a, ib)
        ctx.add_f(b, -ib)
        ctx.add_j(a, row, 1.0); ctx.add_j(b, row, -1.0)
        ctx.add_f(row, (ctx.v(a) - ctx.v(b)) - e)
        ctx.scale[row] = max(ctx.scale[row], abs(e), abs(ctx.v(a)), abs(ctx.v(b)))
        ctx.add_j(row, a, 1.0); ctx.add_j(row, b, -1.0)

    def op_info(self, ctx):
        return {"i": ctx.x[self.row]}


class IsourceStamp(Stamper):
    def bind(self, idx):
        self.a, self.b = idx(self.el.nodes[0]), idx(self.el.nodes[1])

    def stamp(self, ctx):
        i = (ctx.src_scale * ctx.isrc_scale
             * self.el.params.waveform.value(ctx.t or 0.0, ctx.temp))
        ctx.add_f(self.a, i)
        ctx.add_f(self.b, -i)

    def op_info(self, ctx):
        return {"i": self.el.params.waveform.value(ctx.t or 0.0, ctx.temp)}


class MosfetStamp(Stamper):
    def bind(self, idx):
        self.d, self.g, self.s = (idx(n) for n in self.el.nodes)
        self.m = self.el.params

    def channel(self, ctx):
        """Forward channel current (drain->source for N, source->drain for P)
        and its derivatives w.r.t. the (d, g, s) node voltages."""
        m = self.m
        vd, vg, vs = ctx.v(self.d), ctx.v(self.g), ctx.v(self.s)
        if m.polarity == "n":
            i, gm, gds = dev.mosfet_curve(m, vg - vs, vd - vs)
            # derivative w.r.t. (vd, vg, vs)
            return i, (gds, gm, -(gm + gds))
        i, gm, gds = dev.mosfet_curve(m, vs - vg, vs - vd)
        return i, (-gds, -gm, gm + gds)

    def stamp(self, ctx):
        i, (did, dig, dis) = self.channel(ctx)
        d, g, s = self.d, self.g, self.s
        m = self.m
        if m.polarity == "n":
            # current i flows d -> s
            ctx.add_f(d, i); ctx.add_f(s, -i)
            for col, deriv in ((d, did), (g, dig), (s, dis)):
                ctx.add_j(d, col, deriv)
                ctx.add_j(s, col, -deriv)
        else:
            # current i flows s -> d
            ctx.add_f(s, i); ctx.add_f(d, -i)
            for col, deriv in ((d, did), (g, dig), (s, dis)):
                ctx.add_j(s, col, deriv)
                ctx.add_j(d, col, -deriv)

    def op_info(self, ctx):
        m = self.m
        vd, vg, vs = ctx.v(self.d), ctx.v(self.g), ctx.v(self.s)
        if m.polarity == "n":
            vgs, vds = vg - vs, vd - vs
        else:
            vgs, vds = vs - vg, vs - vd
        i, gm, gds = dev.mosfet_curve(m, vgs, vds)
        vov = vgs - m.v_t
        if vov <= 0:
            region = "cutoff"
        elif vds < vov:
            region = "triode"
        else:
            region = "saturation"
        return {"i": i, "g_m": gm, "g_ds": gds, "region": region,
                "v_gs": vgs, "v_ds": vds}


class VccsStamp(Stamper):
    def bind(self, idx):
        self.op_, self.on_, self.ip_, self.im_ = (idx(n) for n in self.el.nodes)
        self.gm = self.el.params.gm

    def stamp(self, ctx):
        gm = self.gm
        i = gm * (ctx.v(self.ip_) - ctx.v(self.im_))
        ctx.add_f(self.op_, i); ctx.add_f(self.on_, -i)
        ctx.add_j(self.op_, self.ip_, gm); ctx.add_j(self.op_, self.im_, -gm)
        ctx.add_j(self.on_, self.ip_, -gm); ctx.add_j(self.on_, self.im_, gm)


class ErrorAmpStamp(Stamper):
    """Norton output stage referenced to the `ref` pin (v_out = v_ref - u),
    pole capacitor c = a_dc / (2*pi*gbw*r_out) between out and ref.  The
    drive u cannot swing the output below ground, so the effective upper
    clamp is min(u_hi, v_ref)."""

    has_mode = True

    def bind(self, idx):
        p, m, out, ref, en, fon = self.el.nodes
        self.p, self.m_, self.out, self.ref = idx(p), idx(m), idx(out), idx(ref)
        self.en = idx(en) if en != UNCONNECTED else None
        self.fon = idx(fon) if fon != UNCONNECTED else None
        a = self.el.params
        self.go = 1.0 / a.r_out
        self.c_pole = a.a_dc / (2.0 * math.pi * a.gbw * a.r_out)

    def mode_init(self, x, node_of):
        enabled = True if self.en is None else bool(x[self.en] >= 0.5)
        forced = False if self.fon is None else bool(x[self.fon] >= 0.5)
        return (enabled, forced)

    def mode_update(self, ctx, state):
        enabled = True if self.en is None else bool(ctx.v(self.en) >= 0.5)
        forced = False if self.fon is None else bool(ctx.v(self.fon) >= 0.5)
        return (enabled, forced)

    def _drive(self, ctx):
        """Returns (u, du/dvp, du/dvm, du/dvref)."""
        a = self.el.params
        enabled, forced = ctx.modes[self.name]
        vref = ctx.v(self.ref)
        if not enabled:
            return 0.0, 0.0, 0.0, 0.0
        if forced:
            hi, _, dref = dev.smooth_min(a.u_hi, vref)
            val, dlo_in, _ = dev.smooth_max(hi, a.u_lo)
            return val, 0.0, 0.0, dlo_in * dref
        vid = ctx.v(self.p) - ctx.v(self.m_) + a.offset(ctx.temp)
        raw = a.a_dc * ctx.gain_scale * vid
        hi, _, dhi_dref = dev.smooth_min(a.u_hi, vref)
        u, du_draw, du_dhi = dev.smooth_clamp(raw, a.u_lo, hi)
        g = du_draw * a.a_dc * ctx.gain_scale
        return u, g, -g, du_dhi * dhi_dref

    def stamp(self, ctx):
        a = self.el.params
        out, ref = self.out, self.ref
        u, dup, dum, duref = self._drive(ctx)
        go = self.go
        i = (ctx.v(out) - ctx.v(ref) + u) * go
        ctx.add_f(out, i); ctx.add_f(ref, -i)
        for col, d in ((out, go), (ref, (duref - 1.0) * go),
                       (self.p, dup * go), (self.m_, dum * go)):
            ctx.add_j(out, col, d)
            ctx.add_j(ref, col, -d)
        # pole capacitor between out and ref
        q = self.c_pole * (ctx.v(out) - ctx.v(ref))
        ctx.add_q(out, q); ctx.add_q(ref, -q)
        c = self.c_pole
        ctx.add_jq(out, out, c); ctx.add_jq(out, ref, -c)
        ctx.add_jq(ref, out, -c); ctx.add_jq(ref, ref, c)
        # bias draw from the reference rail
        enabled, forced = ctx.modes[self.name]
        iq = a.iq_off if not enabled else (a.iq_forced if forced else a.iq_on)
        ctx.add_f(ref, iq)

    def fb_sense_entries(self, ctx):
        """Static-Jacobian entries through the feedback input pin, used by
        the single-injection loop-gain analysis."""
        a = self.el.params
        _, dup, dum, _ = self._drive(ctx)
        d = dup if a.fb_input == "p" else dum
        col = self.p if a.fb_input == "p" else self.m_
        entries = []
        if self.out >= 0:
            entries.append((self.out, d * self.go))
        if self.ref >= 0:
            entries.append((self.ref, -d * self.go))
        return col, entries

    def op_info(self, ctx):
        a = self.el.params
        u, *_ = self._drive(ctx)
        enabled, forced = ctx.modes[self.name]
        vid = ctx.v(self.p) - ctx.v(self.m_) + a.offset(ctx.temp)
        railed = not (a.u_lo + 1e-2 < u < min(a.u_hi, ctx.v(self.ref)) - 1e-2)
        return {"u": u, "v_id": vid, "enabled": enabled, "forced": forced,
                "railed": railed}


class LimiterStamp(Stamper):
    """Foldback clamp.  Always owns one branch (its injection into the pass
    gate).  Disengaged the branch equation is i_b = 0; engaged it enforces
    i_pass = limiter_current(v_out) by pulling the gate toward `ref`."""

    has_mode = True

    def bind(self, idx):
        self.gate, self.out, self.ref = (idx(n) for n in self.el.nodes)
        self.row = idx(f"{self.name}#b")
        self.pass_stamp: MosfetStamp | None = None  # resolved by Assembly

    def branch_names(self):
        return (f"{self.name}#b",)

    def mode_init(self, x, node_of):
        return False  # disengaged

    def mode_update(self, ctx, engaged):
        p = self.el.params
        i_lim = dev.limiter_current(p, ctx.v(self.out))
        if not engaged:
            i_pass, _ = self.pass_stamp.channel(ctx)
            return i_pass > i_lim * (1.0 + p.deadband) + 1e-12
        # Engaged stays valid while the clamp actually restrains the gate.
        return ctx.x[self.row] >= -1e-12

    def stamp(self, ctx):
        gate, ref, row = self.gate, self.ref, self.row
        ib = ctx.x[row]
        ctx.add_f(gate, -ib); ctx.add_f(ref, ib)
        ctx.add_j(gate, row, -1.0); ctx.add_j(ref, row, 1.0)
        if ctx.modes[self.name]:
            p = self.el.params
            i_pass, (did, dig, dis) = self.pass_stamp.channel(ctx)
            i_lim = dev.limiter_current(p, ctx.v(self.out))
            ctx.add_f(row, i_pass)
            ctx.add_f(row, -i_lim)
            ps = self.pass_stamp
            ctx.add_j(row, ps.d, did)
            ctx.add_j(row, ps.g, dig)
            ctx.add_j(row, ps.s, dis)
            ctx.add_j(row, self.out, -dev.limiter_slope(p, ctx.v(self.out)))
        else:
            ctx.add_f(row, ib)
            ctx.scale[row] = max(ctx.scale[row], abs(ib))
            ctx.add_j(row, row, 1.0)

    def op_info(self, ctx):
        p = self.el.params
        i_pass, _ = self.pass_stamp.channel(ctx)
        return {"engaged": bool(ctx.modes[self.name]),
                "i_lim": dev.limiter_current(p, ctx.v(self.out)),
                "i_pass": i_pass,
                "i_branch": ctx.x[self.row]}


class _LogicOutputStamp(Stamper):
    """Common machinery for POR / enable comparators: an ideal voltage
    source driving the output node to 1 V or 0 V per the comparator state."""

    has_mode = True

    def bind(self, idx):
        self.inp, self.out = idx(self.el.nodes[0]), idx(self.el.nodes[1])
        self.row = idx(f"{self.name}#b")

    def branch_names(self):
        return (f"{self.name}#b",)

    def _level(self, state) -> float:
        raise NotImplementedError

    def stamp(self, ctx):
        out, row = self.out, self.row
        ib = ctx.x[row]
        ctx.add_f(out, ib)
        ctx.add_j(out, row, 1.0)
        lvl = self._level(ctx.modes[self.name])
        ctx.add_f(row, ctx.v(out) - lvl)
        ctx.scale[row] = max(ctx.scale[row], 1.0)
        ctx.add_j(row, out, 1.0)


class PorStamp(_LogicOutputStamp):
    """Output high (reset asserted) while the sensed supply is below
    threshold; deasserts at v_th, re-asserts at v_th - hysteresis."""

    def mode_init(self, x, node_of):
        vin = x[self.inp] if self.inp >= 0 else 0.0
        return bool(vin < self.el.params.v_th)

    def mode_update(self, ctx, asserted):
        p = self.el.params
        vin = ctx.v(self.inp)
        if asserted:
            return not (vin >= p.v_th)
        return vin < p.v_th - p.hysteresis

    def _level(self, asserted):
        return 1.0 if asserted else 0.0

    def op_info(self, ctx):
        return {"asserted": bool(ctx.modes[self.name])}


class EnswStamp(_LogicOutputStamp):
    def mode_init(self, x, node_of):
        vin = x[self.inp] if self.inp >= 0 else 0.0
        return bool(vin >= self.el.params.threshold)

    def mode_update(self, ctx, on):
        return bool(ctx.v(self.inp) >= self.el.params.threshold)

    def _level(self, on):
        return 1.0 if on else 0.0

    def op_info(self, ctx):
        return {"on": bool(ctx.modes[self.name])}


_STAMP_FOR = {
    dev.Resistor: ResistorStamp,
    dev.Capacitor: CapacitorStamp,
    dev.VoltageSource: VsourceStamp,
    dev.CurrentSource: IsourceStamp,
    dev.Mosfet: MosfetStamp,
    dev.Vccs: VccsStamp,
    dev.ErrorAmp: ErrorAmpStamp,
    dev.CurrentLimiter: LimiterStamp,
    dev.PorComparator: PorStamp,
    dev.EnableSwitch: EnswStamp,
}


class Assembly:
    """Index maps plus bound stampers for one circuit."""

    def __init__(self, circuit: Circuit, tol: Tolerances | None = None):
        self.circuit = circuit
        self.tol = tol or Tolerances()
        self.stampers = [_STAMP_FOR[type(el.params)](el) for el in circuit.elements]

        names: list[str] = []
        seen: set[str] = set()
        for el in circuit.elements:
            for n in el.nodes:
                if n not in (GROUND, UNCONNECTED) and n not in seen:
                    seen.add(n)
                    names.append(n)
        for st in self.stampers:
            for n in getattr(st, "internal_nodes", lambda: ())():
                names.append(n)
        self.node_names = names
        self.n_nodes = len(names)

        branch_names: list[str] = []
        for st in self.stampers:
            for b in getattr(st, "branch_names", lambda: ())():
                branch_names.append(b)
        self.branch_names = branch_names
        self.n = self.n_nodes + len(branch_names)

        index = {GROUND: -1, UNCONNECTED: -1}
        for i, nm in enumerate(names):
            index[nm] = i
        for j, bn in enumerate(branch_names):
            index[bn] = self.n_nodes + j
        self.index = index

        for st in self.stampers:
            st.bind(lambda nm: index[nm])
        # resolve limiter -> pass-device references
        by_name = {st.name: st for st in self.stampers}
        for st in self.stampers:
            if isinstance(st, LimiterStamp):
                st.pass_stamp = by_name[st.el.params.pass_element]

        # per-row absolute tolerance: node rows are KCL (current scale);
        # source/comparator branch rows are voltage constraints.
        self.row_abstol = np.full(self.n, self.tol.i_abstol)
        for st in self.stampers:
            if isinstance(st, (VsourceStamp, _LogicOutputStamp)):
                self.row_abstol[st.row] = self.tol.v_abstol
        self.col_abstol = np.full(self.n, self.tol.v_abstol)
        self.col_abstol[self.n_nodes:] = self.tol.i_abstol
        # limiter rows are current equations; their unknown is a current
        for st in self.stampers:
            if isinstance(st, LimiterStamp):
                self.row_abstol[st.row] = self.tol.i_abstol

        # Newton damping pairs: gate-source swings are limited per iteration
        # (the square law is quadratic in v_gs) so high-gain loops walk into
        # regulation instead of slamming rail to rail.  v_ds is left free:
        # the channel-length-modulation factor keeps current affine in v_ds,
        # which Newton handles exactly.  Purely linear circuits have no
        # pairs, preserving their one-iteration convergence.
        self.limit_pairs: list[tuple[int, int, float]] = []
        for st in self.stampers:
            if isinstance(st, MosfetStamp):
                self.limit_pairs.append((st.g, st.s, 0.6))

        # gmin stepping loads the channel terminals of square-law devices;
        # loading every node would corrupt megohm feedback dividers and
        # amplifier outputs, which is exactly where convergence aid is not
        # wanted.
        gmin_rows = set()
        for st in self.stampers:
            if isinstance(st, MosfetStamp):
                gmin_rows.update(i for i in (st.d, st.s) if i >= 0)
        self.gmin_rows = sorted(gmin_rows)

    def damping_scale(self, x, dx) -> float:
        """Uniform step scale keeping nonlinear-device terminal swings
        within their per-iteration limits."""
        s = 1.0
        for a, b, lim in self.limit_pairs:
            da = dx[a] if a >= 0 else 0.0
            db = dx[b] if b >= 0 else 0.0
            swing = abs(da - db)
            if swing > lim:
                s = min(s, lim / swing)
        return s

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n)

    def mode_init(self, x) -> dict:
        modes = {}
        for st in self.stampers:
            if st.has_mode:
                modes[st.name] = st.mode_init(x, self.index)
        return modes

    def mode_update(self, x, modes, *, t=None, src_scale=1.0,
                    gain_scale=1.0, isrc_scale=1.0) -> dict:
        ctx = _Ctx(self.n, x, t, self.circuit.temperature, modes, src_scale,
                   False, gain_scale, isrc_scale)
        out = dict(modes)
        for st in self.stampers:
            if st.has_mode:
                out[st.name] = st.mode_update(ctx, modes[st.name])
        return out

    def eval(self, x, modes, *, t=None, src_scale=1.0, gmin=0.0,
             want_q=False, gain_scale=1.0, isrc_scale=1.0) -> EvalResult:
        ctx = _Ctx(self.n, x, t, self.circuit.temperature, modes, src_scale,
                   want_q, gain_scale, isrc_scale)
        for st in self.stampers:
            st.stamp(ctx)
        if gmin > 0.0:
            for i in self.gmin_rows:
                leak = gmin * x[i]
                ctx.F[i] += leak
                ctx.J[i, i] += gmin
                ctx.scale[i] = max(ctx.scale[i], abs(leak))
        return EvalResult(ctx.F, ctx.J, ctx.q, ctx.JQ, ctx.scale)

    def op_infos(self, x, modes, *, t=None) -> dict:
        ctx = _Ctx(self.n, x, t, self.circuit.temperature, modes, 1.0, False)
        return {st.name: st.op_info(ctx) for st in self.stampers}

    def voltages(self, x) -> dict[str, float]:
        return {nm: float(x[i]) for nm, i in
                ((n, self.index[n]) for n in self.node_names)}

    def branch_currents(self, x) -> dict[str, float]:
        out = {}
        for st in self.stampers:
            for b in getattr(st, "branch_names", lambda: ())():
                out[st.name] = float(x[self.index[b]])
        return out

    def probe_value(self, x, probe) -> float:
        if probe.kind == "v":
            return probe.sign * (x[self.index[probe.target]]
                                 if self.index.get(probe.target, -1) >= 0 else 0.0)
        return probe.sign * float(x[self.index[f"{probe.target}#b"]])
