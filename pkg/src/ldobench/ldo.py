"""Parameterized builder for the 100 mA low-dropout regulator macromodel.

Topology: bandgap-style reference into the error amp's positive input,
feedback divider tap into the negative input (the marked loop break
point), amp output driving the gate of a P-type pass device from vin to
vout, output capacitor with ESR, current-source load, foldback current
limiter sampling the pass current, POR comparator forcing the pass device
fully on below the supply threshold, and an active-high enable.

The error amp's output stage and pole capacitor are referenced to vin
(its bias network rides on the supply, so the gate tracks supply noise
and the pass device's v_sg is first-order immune to it); supply rejection
is then set by the loop gain against the r_ds path, which is what the
macromodel's PSRR figures rely on.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

from . import devices as dev
from . import waveforms as wf
from .netlist import Circuit, Element, Probe, serialize_circuit, validated

V_IN_MIN = 2.6  # minimum operating supply per the margin table


@dataclass(frozen=True)
class LdoParams:
    """Every knob of the regulator macromodel.

    The quiescent-current budget lives in the error-amp bias fields
    (ea.iq_*); the measured supply current is that draw plus the feedback
    divider, which is disclosed in compliance reports rather than derived
    from transistor bias design.
    """

    v_ref: float = 0.75
    v_ref_tc: float = 0.0            # fractional/degC on the reference
    v_out_nom: float = 2.4
    r1: float = 2.2e6
    r2: float = 1.0e6
    ea: dev.ErrorAmp = field(default_factory=lambda: dev.ErrorAmp(
        a_dc=820.0, gbw=1.8e8, r_out=1e4, v_os=0.0, v_os_tc=1e-5,
        u_lo=0.0, u_hi=2.3, iq_on=7.5e-7, iq_forced=1.5e-7, iq_off=1e-7,
        fb_input="m"))
    pass_fet: dev.Mosfet = field(default_factory=lambda: dev.Mosfet(
        polarity="p", beta=0.35, v_t=0.7, lam=1.0))
    ilim: dev.CurrentLimiter = field(default_factory=lambda: dev.CurrentLimiter(
        i_max=0.1005, i_sc=0.03, v_nom=2.25, pass_element="MPW", deadband=1e-3))
    por: dev.PorComparator = field(default_factory=lambda: dev.PorComparator(
        v_th=2.35, hysteresis=0.0))
    c_out: float = 2.2e-6
    esr: float = 0.1
    v_in: float = V_IN_MIN
    enable: float = 1.0              # PWDNZ drive level
    load: wf.Waveform = field(default_factory=lambda: wf.Dc(0.0))

    def __post_init__(self):
        nominal = self.v_ref * (1.0 + self.r1 / self.r2)
        if abs(nominal - self.v_out_nom) > 1e-3 * self.v_out_nom:
            raise dev.ParameterError(
                f"divider inconsistent: v_ref*(1+r1/r2) = {nominal:.6g} V but "
                f"v_out_nom = {self.v_out_nom:.6g} V (must agree within 0.1%)")
        if self.pass_fet.polarity != "p":
            raise dev.ParameterError("pass device must be P-type")
        if not self.por.v_th < V_IN_MIN:
            raise dev.ParameterError(
                f"por.v_th = {self.por.v_th} must be below the minimum "
                f"operating input {V_IN_MIN} V")
        if self.c_out <= 0 or self.esr < 0:
            raise dev.ParameterError("need c_out > 0 and esr >= 0")


def build_ldo(params: LdoParams | None = None) -> Circuit:
    """Wire the regulator.  Standard probes: vin, vout, iload, isupply."""
    p = params or LdoParams()
    ea = replace(p.ea, fb_input="m")
    ilim = replace(p.ilim, pass_element="MPW")
    elements = (
        Element("VIN", ("vin", "0"), dev.VoltageSource(wf.Dc(p.v_in))),
        Element("VREF", ("vref", "0"), dev.VoltageSource(wf.Dc(p.v_ref, tc=p.v_ref_tc))),
        Element("VEN", ("pwdnz", "0"), dev.VoltageSource(wf.Dc(p.enable))),
        Element("ENS1", ("pwdnz", "en"), dev.EnableSwitch(threshold=0.5)),
        Element("POR1", ("vin", "porb"), p.por),
        Element("EA1", ("vref", "fb", "gate", "vin", "en", "porb"), ea),
        Element("MPW", ("vout", "gate", "vin"), p.pass_fet),
        Element("IL1", ("gate", "vout", "vin"), ilim),
        Element("R1", ("vout", "fb"), dev.Resistor(p.r1)),
        Element("R2", ("fb", "0"), dev.Resistor(p.r2)),
        Element("COUT", ("vout", "0"), dev.Capacitor(p.c_out, esr=p.esr)),
        Element("ILOAD", ("vout", "0"), dev.CurrentSource(p.load)),
    )
    probes = (
        Probe("vin", "v", "vin"),
        Probe("vout", "v", "vout"),
        Probe("iload", "i", "ILOAD"),
        Probe("isupply", "i", "VIN", sign=-1.0),
    )
    return validated(Circuit(elements, temperature=27.0, probes=probes))


def ldo_netlist(params: LdoParams | None = None) -> str:
    """Equivalent netlist text for archival."""
    return serialize_circuit(build_ldo(params), title="ldobench LDO macromodel")


# ---------------------------------------------------------------------------
# Canonical configuration file (key = value unit)
# ---------------------------------------------------------------------------

_FIELDS = [
    # key, unit, getter, setter-path
    ("v_ref", "V"),
    ("v_ref_tc", "1/degC"),
    ("v_out_nom", "V"),
    ("r1", "ohm"),
    ("r2", "ohm"),
    ("ea.a_dc", "V/V"),
    ("ea.gbw", "Hz"),
    ("ea.r_out", "ohm"),
    ("ea.v_os", "V"),
    ("ea.v_os_tc", "V/degC"),
    ("ea.u_lo", "V"),
    ("ea.u_hi", "V"),
    ("ea.iq_on", "A"),
    ("ea.iq_forced", "A"),
    ("ea.iq_off", "A"),
    ("pass.beta", "A/V^2"),
    ("pass.v_t", "V"),
    ("pass.lambda", "1/V"),
    ("ilim.i_max", "A"),
    ("ilim.i_sc", "A"),
    ("ilim.v_nom", "V"),
    ("ilim.deadband", "1"),
    ("por.v_th", "V"),
    ("por.hysteresis", "V"),
    ("c_out", "F"),
    ("esr", "ohm"),
    ("i_load", "A"),
    ("v_in", "V"),
    ("enable", "V"),
]

_UNIT_FOR = dict(_FIELDS)

_ATTR_MAP = {
    "ea.a_dc": ("ea", "a_dc"), "ea.gbw": ("ea", "gbw"), "ea.r_out": ("ea", "r_out"),
    "ea.v_os": ("ea", "v_os"), "ea.v_os_tc": ("ea", "v_os_tc"),
    "ea.u_lo": ("ea", "u_lo"), "ea.u_hi": ("ea", "u_hi"),
    "ea.iq_on": ("ea", "iq_on"), "ea.iq_forced": ("ea", "iq_forced"),
    "ea.iq_off": ("ea", "iq_off"),
    "pass.beta": ("pass_fet", "beta"), "pass.v_t": ("pass_fet", "v_t"),
    "pass.lambda": ("pass_fet", "lam"),
    "ilim.i_max": ("ilim", "i_max"), "ilim.i_sc": ("ilim", "i_sc"),
    "ilim.v_nom": ("ilim", "v_nom"), "ilim.deadband": ("ilim", "deadband"),
    "por.v_th": ("por", "v_th"), "por.hysteresis": ("por", "hysteresis"),
}


def _get(params: LdoParams, key: str) -> float:
    if key == "i_load":
        return params.load.value(0.0) if isinstance(params.load, wf.Dc) else 0.0
    if key in _ATTR_MAP:
        sub, attr = _ATTR_MAP[key]
        return getattr(getattr(params, sub), attr)
    return getattr(params, key)


def params_to_config(params: LdoParams) -> str:
    """Serialize to the plain-text configuration format, one parameter per
    line, units mandatory."""
    buf = io.StringIO()
    buf.write("# ldobench regulator configuration (key = value unit)\n")
    for key, unit in _FIELDS:
        buf.write(f"{key} = {_get(params, key)!r} {unit}\n")
    return buf.getvalue()


class ConfigError(ValueError):
    pass


def load_params(text: str, base: LdoParams | None = None) -> LdoParams:
    """Parse a configuration (or override) file on top of `base`."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value unit'")
        key, _, rest = line.partition("=")
        key = key.strip()
        parts = rest.split()
        if len(parts) != 2:
            raise ConfigError(f"line {lineno}: expected 'key = value unit', got {raw!r}")
        if key not in _UNIT_FOR:
            raise ConfigError(f"line {lineno}: unknown parameter {key!r}")
        val_s, unit = parts
        if unit != _UNIT_FOR[key]:
            raise ConfigError(f"line {lineno}: {key} must carry unit "
                              f"{_UNIT_FOR[key]!r}, got {unit!r}")
        try:
            values[key] = float(val_s)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad number {val_s!r}") from None

    p = base or LdoParams()
    simple = {k: v for k, v in values.items()
              if k in ("v_ref", "v_ref_tc", "v_out_nom", "r1", "r2", "c_out",
                       "esr", "v_in", "enable")}
    ea_kw = {attr: values[k] for k, (sub, attr) in _ATTR_MAP.items()
             if sub == "ea" and k in values}
    fet_kw = {attr: values[k] for k, (sub, attr) in _ATTR_MAP.items()
              if sub == "pass_fet" and k in values}
    ilim_kw = {attr: values[k] for k, (sub, attr) in _ATTR_MAP.items()
               if sub == "ilim" and k in values}
    por_kw = {attr: values[k] for k, (sub, attr) in _ATTR_MAP.items()
              if sub == "por" and k in values}
    out = replace(
        p,
        ea=replace(p.ea, **ea_kw) if ea_kw else p.ea,
        pass_fet=replace(p.pass_fet, **fet_kw) if fet_kw else p.pass_fet,
        ilim=replace(p.ilim, **ilim_kw) if ilim_kw else p.ilim,
        por=replace(p.por, **por_kw) if por_kw else p.por,
        **simple,
    )
    if "i_load" in values:
        out = replace(out, load=wf.Dc(values["i_load"]))
    return out


def default_params() -> LdoParams:
    """The tuned default set, frozen in the packaged configuration file."""
    from importlib import resources
    text = (resources.files("ldobench") / "data" / "ldo_defaults.cfg").read_text()
    return load_params(text)
