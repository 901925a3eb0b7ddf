"""Element models: parameter records plus their current/charge equations.

Every model here is a pure function of its parameters and terminal
conditions; the engine consumes them through stamp adapters.  Parameter
range violations are construction-time errors, never silent clamps.

The MOSFET is a level-1 square law with the channel-length-modulation
factor (1 + lambda*v_ds) applied in *both* triode and saturation, which
makes the drain current C1-continuous across the region boundary and
keeps Newton iterations well behaved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

T_REF_C = 27.0  # reference temperature for all temperature coefficients


class ParameterError(ValueError):
    """Raised when an element is constructed with out-of-range parameters."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterError(msg)


# ---------------------------------------------------------------------------
# Parameter records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Resistor:
    resistance: float  # ohm, > 0

    def __post_init__(self):
        _require(self.resistance > 0, f"resistance must be > 0, got {self.resistance}")


@dataclass(frozen=True)
class Capacitor:
    capacitance: float       # F, > 0
    esr: float = 0.0         # ohm, >= 0; series ESR is part of the model

    def __post_init__(self):
        _require(self.capacitance > 0, f"capacitance must be > 0, got {self.capacitance}")
        _require(self.esr >= 0, f"esr must be >= 0, got {self.esr}")


@dataclass(frozen=True)
class VoltageSource:
    waveform: "object"  # Waveform from ldobench.waveforms


@dataclass(frozen=True)
class CurrentSource:
    waveform: "object"


@dataclass(frozen=True)
class Mosfet:
    polarity: str        # "n" or "p"
    beta: float          # k_p * W/L, A/V^2, > 0
    v_t: float           # threshold, V (magnitude for P)
    lam: float = 0.0     # channel-length modulation, 1/V, >= 0

    def __post_init__(self):
        _require(self.polarity in ("n", "p"), f"polarity must be 'n' or 'p', got {self.polarity!r}")
        _require(self.beta > 0, f"beta must be > 0, got {self.beta}")
        _require(self.lam >= 0, f"lambda must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class Vccs:
    gm: float  # transconductance, A/V


@dataclass(frozen=True)
class ErrorAmp:
    """Single-pole error-amplifier macromodel.

    The output stage rides on the reference pin (tied to the supply rail
    by the regulator builder), so the output voltage is v(ref) - u where
    u is the downward drive, u = clamp(a_dc * (v_p - v_m + v_os), lo, hi).
    Pole frequency is gbw / a_dc; unloaded unity-gain frequency is gbw.

    iq_* are the bias currents the amplifier block draws from the
    reference pin in each control state; the regulator's quiescent-current
    budget is carried here because the macromodel has no internal bias
    network to derive it from.
    """

    a_dc: float                 # V/V, > 1
    gbw: float                  # Hz, > 0
    r_out: float                # ohm, > 0
    v_os: float = 0.0           # input-referred offset, V
    v_os_tc: float = 0.0        # offset drift, V/degC
    u_lo: float = 0.0           # output swing limits on the drive u, V
    u_hi: float = 3.0
    iq_on: float = 0.0          # bias draw, normal operation, A
    iq_forced: float = 0.0      # bias draw while output is forced high, A
    iq_off: float = 0.0         # bias draw while disabled, A
    fb_input: str | None = None  # "p"|"m": marks the feedback input (loop break point)

    def __post_init__(self):
        _require(self.a_dc > 1, f"a_dc must be > 1, got {self.a_dc}")
        _require(self.gbw > 0, f"gbw must be > 0, got {self.gbw}")
        _require(self.r_out > 0, f"r_out must be > 0, got {self.r_out}")
        _require(self.u_lo < self.u_hi, f"swing limits must satisfy u_lo < u_hi, got [{self.u_lo}, {self.u_hi}]")
        _require(self.fb_input in (None, "p", "m"), f"fb_input must be 'p' or 'm', got {self.fb_input!r}")
        for name in ("iq_on", "iq_forced", "iq_off"):
            _require(getattr(self, name) >= 0, f"{name} must be >= 0")

    @property
    def pole_hz(self) -> float:
        return self.gbw / self.a_dc

    def offset(self, temp_c: float) -> float:
        return self.v_os + self.v_os_tc * (temp_c - T_REF_C)


@dataclass(frozen=True)
class CurrentLimiter:
    """Foldback current limiter.

    i_max is available at and above v_nom; below v_nom the allowed current
    folds back linearly to i_sc at zero output.  `pass_element` names the
    transistor whose channel current is sampled (the behavioral stand-in
    for the sense mirror).  `deadband` is the fractional overshoot the
    sampled current may show before the clamp engages.
    """

    i_max: float               # A
    i_sc: float                # A, 0 < i_sc < i_max
    v_nom: float               # V, > 0
    pass_element: str = ""     # name of the sensed MOSFET
    deadband: float = 1e-3

    def __post_init__(self):
        _require(0 < self.i_sc < self.i_max, f"need 0 < i_sc < i_max, got i_sc={self.i_sc}, i_max={self.i_max}")
        _require(self.v_nom > 0, f"v_nom must be > 0, got {self.v_nom}")
        _require(self.deadband >= 0, "deadband must be >= 0")


@dataclass(frozen=True)
class PorComparator:
    """Supply-threshold detector; output is 1 V while reset is asserted
    (input below threshold), 0 V once the supply is up."""

    v_th: float
    hysteresis: float = 0.0

    def __post_init__(self):
        _require(self.v_th > 0, f"v_th must be > 0, got {self.v_th}")
        _require(self.hysteresis >= 0, f"hysteresis must be >= 0, got {self.hysteresis}")


@dataclass(frozen=True)
class EnableSwitch:
    """Threshold detector for the active-high enable pin; output is a clean
    1 V / 0 V logic level."""

    threshold: float


# ---------------------------------------------------------------------------
# Device curves
# ---------------------------------------------------------------------------

def _square_law(beta: float, v_t: float, lam: float, v_gs: float, v_ds: float):
    """Oriented square law for v_ds >= 0: returns (i_d, di/dv_gs, di/dv_ds)."""
    v_ov = v_gs - v_t
    if v_ov <= 0.0:
        return 0.0, 0.0, 0.0
    clm = 1.0 + lam * v_ds
    if v_ds < v_ov:  # triode
        core = v_ov * v_ds - 0.5 * v_ds * v_ds
        i_d = beta * core * clm
        g_m = beta * v_ds * clm
        g_ds = beta * (v_ov - v_ds) * clm + beta * core * lam
    else:  # saturation
        i_d = 0.5 * beta * v_ov * v_ov * clm
        g_m = beta * v_ov * clm
        g_ds = 0.5 * beta * v_ov * v_ov * lam
    return i_d, g_m, g_ds


def mosfet_curve(m: Mosfet, v_gs: float, v_ds: float):
    """Drain current and its partials, handling reverse bias by symmetry.

    Inputs are source-referenced (for P devices pass v_sg, v_sd magnitudes).
    Returns (i_d, d i/d v_gs, d i/d v_ds).
    """
    if v_ds >= 0.0:
        return _square_law(m.beta, m.v_t, m.lam, v_gs, v_ds)
    # Drain and source exchange roles; current flows the other way.
    i, g_m, g_ds = _square_law(m.beta, m.v_t, m.lam, v_gs - v_ds, -v_ds)
    # i(v_gs, v_ds) = -i'(v_gs - v_ds, -v_ds)
    return -i, -g_m, g_m + g_ds


def mosfet_current(m: Mosfet, v_gs: float, v_ds: float) -> float:
    """Square-law drain current; cutoff below threshold, continuous at both
    region boundaries."""
    return mosfet_curve(m, v_gs, v_ds)[0]


def mosfet_small_signal(m: Mosfet, v_gs: float, v_ds: float):
    """Analytic (g_m, g_ds) at the given operating point."""
    _, g_m, g_ds = mosfet_curve(m, v_gs, v_ds)
    return g_m, g_ds


def limiter_current(p: CurrentLimiter, v_out: float) -> float:
    """Maximum allowed current at a given output voltage (foldback law)."""
    frac = v_out / p.v_nom
    frac = 0.0 if frac < 0.0 else (1.0 if frac > 1.0 else frac)
    return p.i_sc + (p.i_max - p.i_sc) * frac


def limiter_slope(p: CurrentLimiter, v_out: float) -> float:
    """d(limiter_current)/d(v_out)."""
    if 0.0 < v_out < p.v_nom:
        return (p.i_max - p.i_sc) / p.v_nom
    return 0.0


# ---------------------------------------------------------------------------
# Smooth clamp used by the error-amp output stage
# ---------------------------------------------------------------------------

def smooth_min(a: float, b: float, w: float = 1e-3):
    """C-infinity min(a, b); returns (value, d/da, d/db).  Error <= w/2 at a == b."""
    d = a - b
    r = math.hypot(d, w)
    val = 0.5 * (a + b - r)
    da = 0.5 * (1.0 - d / r)
    db = 0.5 * (1.0 + d / r)
    return val, da, db


def smooth_max(a: float, b: float, w: float = 1e-3):
    """C-infinity max(a, b); returns (value, d/da, d/db)."""
    d = a - b
    r = math.hypot(d, w)
    val = 0.5 * (a + b + r)
    da = 0.5 * (1.0 + d / r)
    db = 0.5 * (1.0 - d / r)
    return val, da, db


def smooth_clamp(x: float, lo: float, hi: float, w: float = 1e-3):
    """Clamp with smooth knees: returns (value, d/dx, d/dhi).

    The hi limit may be state-dependent (the amp output cannot swing past
    its rail), so its partial is reported as well.
    """
    v1, dx1, dhi = smooth_min(x, hi, w)
    v2, dv1, _ = smooth_max(v1, lo, w)
    return v2, dv1 * dx1, dv1 * dhi
