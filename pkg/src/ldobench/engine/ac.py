"""Small-signal AC analysis and loop-gain extraction.

AC linearizes every element at a converged operating point and solves the
complex system (J + j*omega*JQ) x = b per frequency, with unit excitation
at the named source.

Loop gain uses the single-injection method at the error amplifier's
marked feedback input: the amp's input-sensing Jacobian entries are
redirected from the feedback node to a unit test excitation, which is
exact because the macromodel input draws no current (ideal break).
"""

from __future__ import annotations

import cmath
import math

import numpy as np

from .. import devices as dev
from ..netlist import Circuit
from .mna import Assembly, SolverError, Tolerances, VsourceStamp, IsourceStamp, ErrorAmpStamp, _Ctx
from .dc import dc_operating_point
from .results import AcResponse, LoopGainResult, OpPoint


class LoopGainError(SolverError):
    pass


def ac_grid(f_start: float, f_stop: float, points_per_decade: int = 10) -> np.ndarray:
    """Logarithmic frequency grid with at least 10 points per decade (the
    phase-unwrapping contract requires that density)."""
    if f_start <= 0 or f_stop <= f_start:
        raise ValueError("need 0 < f_start < f_stop")
    ppd = max(10, points_per_decade)
    decades = math.log10(f_stop / f_start)
    n = max(2, int(round(decades * ppd)) + 1)
    return np.logspace(math.log10(f_start), math.log10(f_stop), n)


def _linearize(circuit: Circuit, op: OpPoint, tol=None):
    assembly = Assembly(circuit, tol)
    ev = assembly.eval(op.x, op.modes, t=0.0, want_q=True)
    return assembly, ev.J, ev.JQ


def _excitation(assembly: Assembly, source: str) -> np.ndarray:
    b = np.zeros(assembly.n)
    for st in assembly.stampers:
        if st.name != source:
            continue
        if isinstance(st, VsourceStamp):
            b[st.row] = 1.0
            return b
        if isinstance(st, IsourceStamp):
            if st.a >= 0:
                b[st.a] -= 1.0
            if st.b >= 0:
                b[st.b] += 1.0
            return b
        raise ValueError(f"{source!r} is not an independent source")
    raise KeyError(f"no source named {source!r}")


def _probe_index(assembly: Assembly, circuit: Circuit, probe: str) -> int:
    for p in circuit.probes:
        if p.name == probe and p.kind == "v":
            return assembly.index[p.target]
    if probe in assembly.index:
        return assembly.index[probe]
    raise KeyError(f"probe {probe!r} not found")


def ac_analysis(circuit: Circuit, op: OpPoint, freqs, input_source: str,
                outputs: list[str], *, tol: Tolerances | None = None) -> AcResponse:
    """Complex transfer from a unit excitation at `input_source` to each
    probed node, over the given frequency grid."""
    freqs = np.asarray(freqs, dtype=float)
    assembly, J, JQ = _linearize(circuit, op, tol)
    b = _excitation(assembly, input_source).astype(complex)
    idxs = [_probe_index(assembly, circuit, p) for p in outputs]
    data = {p: np.empty(len(freqs), dtype=complex) for p in outputs}
    for k, f in enumerate(freqs):
        A = J + (2j * math.pi * f) * JQ
        try:
            xs = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            raise SolverError(f"singular AC system at {f} Hz") from None
        for p, i in zip(outputs, idxs):
            data[p][k] = xs[i] if i >= 0 else 0.0
    return AcResponse(freqs=freqs, transfers=data)


def psrr_db(response: AcResponse, probe: str = "vout") -> np.ndarray:
    """PSRR reported as -20*log10|vout/vin| (positive dB = rejection)."""
    return -response.magnitude_db(probe)


# ---------------------------------------------------------------------------
# Loop gain
# ---------------------------------------------------------------------------

def _find_break_amp(assembly: Assembly):
    marked = [st for st in assembly.stampers
              if isinstance(st, ErrorAmpStamp) and st.el.params.fb_input]
    if not marked:
        raise LoopGainError("no loop break point marked (no error amp with fb=...)")
    if len(marked) > 1:
        names = ", ".join(st.name for st in marked)
        raise LoopGainError(f"multiple loop break points marked: {names}")
    return marked[0]


class _LoopSystem:
    """Holds the broken-loop linear system; T(f) per solve."""

    def __init__(self, circuit: Circuit, op: OpPoint, tol=None):
        assembly, J, JQ = _linearize(circuit, op, tol)
        amp = _find_break_amp(assembly)
        ctx = _Ctx(assembly.n, op.x, 0.0, circuit.temperature, op.modes, 1.0, False)
        fb_col, entries = amp.fb_sense_entries(ctx)
        if fb_col < 0:
            raise LoopGainError("feedback input pin is grounded; cannot break loop")
        if all(v == 0.0 for _, v in entries):
            raise LoopGainError("error amp has zero input sensitivity at this "
                                "operating point (railed); loop gain undefined")
        self.assembly = assembly
        self.J = J.astype(complex).copy()
        self.JQ = JQ
        self.b = np.zeros(assembly.n, dtype=complex)
        self.fb_col = fb_col
        for row, val in entries:
            self.J[row, fb_col] -= val
            self.b[row] = -val

    def T(self, f: float) -> complex:
        A = self.J + (2j * math.pi * f) * self.JQ
        xs = np.linalg.solve(A, self.b)
        return complex(-xs[self.fb_col])


def loop_gain(circuit: Circuit, freqs=None, *, op: OpPoint | None = None,
              tol: Tolerances | None = None) -> LoopGainResult:
    """Open the marked feedback loop, compute T(f), and locate the
    unity-gain crossing by log-frequency bisection between grid points."""
    if op is None:
        op = dc_operating_point(circuit, tol=tol)
    if freqs is None:
        freqs = ac_grid(1e-1, 1e9, 10)
    freqs = np.asarray(freqs, dtype=float)
    sys = _LoopSystem(circuit, op, tol)

    t_dc = sys.T(0.0)
    dc_gain_db = 20.0 * math.log10(abs(t_dc)) if abs(t_dc) > 0 else -math.inf

    tf = np.array([sys.T(f) for f in freqs])
    mags = np.abs(tf)

    bracket = None
    for k in range(len(freqs) - 1):
        if mags[k] >= 1.0 > mags[k + 1]:
            bracket = k
            break
    if bracket is None:
        raise LoopGainError(
            "no unity-gain crossing within the grid "
            f"(|T| = {mags[0]:.4g} at {freqs[0]:.4g} Hz, "
            f"{mags[-1]:.4g} at {freqs[-1]:.4g} Hz)")

    lo, hi = math.log10(freqs[bracket]), math.log10(freqs[bracket + 1])
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if abs(sys.T(10.0 ** mid)) >= 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    f_u = 10.0 ** (0.5 * (lo + hi))

    # unwrap phase from DC out to the crossing
    phases = np.unwrap(np.angle(tf[: bracket + 1]))
    ph_u = cmath.phase(sys.T(f_u))
    last = phases[-1] if len(phases) else 0.0
    while ph_u - last > math.pi:
        ph_u -= 2.0 * math.pi
    while ph_u - last < -math.pi:
        ph_u += 2.0 * math.pi
    pm = 180.0 + math.degrees(ph_u)

    return LoopGainResult(
        response=AcResponse(freqs=freqs, transfers={"T": tf}),
        dc_gain_db=dc_gain_db,
        unity_freq_hz=f_u,
        phase_margin_deg=pm,
    )
