"""Circuit representation and the plain-text netlist dialect.

Grammar (one statement per line, `*` starts a comment line):

    .temp <celsius>
    .probe <name> v <node>
    .probe <name> i <element> [-1]
    R<id> n1 n2 <value>
    C<id> n1 n2 <value> [esr=<ohm>]
    V<id> n+ n- <waveform>
    I<id> n+ n- <waveform>
    M<id> d g s <p|n> beta=<A/V^2> vt=<V> [lambda=<1/V>]
    G<id> out+ out- in+ in- gm=<A/V>
    EAMP <id> inp inm out ref [en=<node>] [fon=<node>] a=<V/V> gbw=<Hz>
         rout=<ohm> [vos=] [vostc=] [ulo=] [uhi=] [iqon=] [iqfon=] [iqoff=]
         [fb=p|m]
    ILIM <id> gate out ref pass=<mosfet> imax=<A> isc=<A> vnom=<V> [deadband=]
    POR  <id> in out vth=<V> [hyst=<V>]
    ENSW <id> in out vth=<V>

Element type is inferred from the first letter of the name (R, C, V, I, M,
G) or from the keyword forms.  Values accept engineering suffixes
(f p n u m k meg g), case-insensitively.  Node "0" is ground.  The
serializer emits a canonical form that reparses to an identical Circuit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import devices as dev
from . import waveforms as wf
from .units import format_value, parse_value


class NetlistError(ValueError):
    """Netlist syntax or structural error, carrying line/column position."""

    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        if line:
            msg = f"line {line}, col {col}: {msg}"
        super().__init__(msg)


@dataclass(frozen=True)
class Element:
    """A named device instance attached to circuit nodes."""

    name: str
    nodes: tuple[str, ...]
    params: object  # one of the devices.* parameter records

    def __post_init__(self):
        if not self.name:
            raise NetlistError("element name must be non-empty")


@dataclass(frozen=True)
class Probe:
    name: str
    kind: str       # "v" or "i"
    target: str     # node name or element name
    sign: float = 1.0


@dataclass(frozen=True)
class Circuit:
    """Immutable circuit: elements, probes, analysis temperature."""

    elements: tuple[Element, ...]
    temperature: float = 27.0
    probes: tuple[Probe, ...] = ()

    @property
    def nodes(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for el in self.elements:
            for n in el.nodes:
                if n != UNCONNECTED:
                    seen.setdefault(n, None)
        return tuple(seen)

    def element(self, name: str) -> Element:
        for el in self.elements:
            if el.name == name:
                return el
        raise KeyError(f"no element named {name!r}")

    def replaced(self, name: str, element: Element) -> "Circuit":
        """Functional update: returns a copy with one element swapped."""
        found = False
        out = []
        for el in self.elements:
            if el.name == name:
                out.append(element)
                found = True
            else:
                out.append(el)
        if not found:
            raise KeyError(f"no element named {name!r}")
        return replace(self, elements=tuple(out))

    def with_source_level(self, name: str, level: float) -> "Circuit":
        el = self.element(name)
        if isinstance(el.params, dev.VoltageSource):
            return self.replaced(name, replace(el, params=dev.VoltageSource(wf.Dc(level))))
        if isinstance(el.params, dev.CurrentSource):
            return self.replaced(name, replace(el, params=dev.CurrentSource(wf.Dc(level))))
        raise KeyError(f"{name!r} is not an independent source")

    def with_waveform(self, name: str, waveform) -> "Circuit":
        el = self.element(name)
        if isinstance(el.params, dev.VoltageSource):
            return self.replaced(name, replace(el, params=dev.VoltageSource(waveform)))
        if isinstance(el.params, dev.CurrentSource):
            return self.replaced(name, replace(el, params=dev.CurrentSource(waveform)))
        raise KeyError(f"{name!r} is not an independent source")

    def with_temperature(self, temp_c: float) -> "Circuit":
        return replace(self, temperature=temp_c)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

GROUND = "0"


def validate(circuit: Circuit) -> list[str]:
    """Check all structural invariants; returns every violation found."""
    violations: list[str] = []
    names = [el.name for el in circuit.elements]
    seen = set()
    for n in names:
        if n in seen:
            violations.append(f"duplicate element name {n!r}")
        seen.add(n)

    node_refs: dict[str, int] = {}
    for el in circuit.elements:
        real = [n for n in el.nodes if n != UNCONNECTED]
        for n in real:
            node_refs[n] = node_refs.get(n, 0) + 1
        if real and len(set(real)) == 1:
            violations.append(f"element {el.name!r} has all terminals on node {real[0]!r}")

    if GROUND not in node_refs:
        violations.append("ground node missing (no element references node '0')")

    for node, count in node_refs.items():
        if count == 1 and node != GROUND:
            violations.append(f"dangling node {node!r} (referenced by a single terminal)")

    for el in circuit.elements:
        if isinstance(el.params, dev.CurrentLimiter):
            target = el.params.pass_element
            if target not in seen:
                violations.append(f"limiter {el.name!r} references unknown pass element {target!r}")
            else:
                tgt = circuit.element(target)
                if not isinstance(tgt.params, dev.Mosfet):
                    violations.append(f"limiter {el.name!r} pass element {target!r} is not a MOSFET")

    probe_names = set()
    for p in circuit.probes:
        if p.name in probe_names:
            violations.append(f"duplicate probe name {p.name!r}")
        probe_names.add(p.name)
        if p.kind == "v" and p.target not in node_refs:
            violations.append(f"probe {p.name!r} references unknown node {p.target!r}")
        if p.kind == "i" and p.target not in seen:
            violations.append(f"probe {p.name!r} references unknown element {p.target!r}")

    return violations


def validated(circuit: Circuit) -> Circuit:
    problems = validate(circuit)
    if problems:
        raise NetlistError("; ".join(problems))
    return circuit


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _tokenize(line: str):
    """Split a line into (token, column) pairs, columns 1-based."""
    toks = []
    i = 0
    while i < len(line):
        if line[i].isspace():
            i += 1
            continue
        j = i
        while j < len(line) and not line[j].isspace():
            j += 1
        toks.append((line[i:j], i + 1))
        i = j
    return toks


class _Line:
    def __init__(self, tokens, lineno):
        self.tokens = tokens
        self.lineno = lineno
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, 0)

    def take(self, what: str) -> tuple[str, int]:
        if self.pos >= len(self.tokens):
            last_col = self.tokens[-1][1] + len(self.tokens[-1][0]) if self.tokens else 1
            raise NetlistError(f"expected {what}", self.lineno, last_col)
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def take_value(self, what: str) -> float:
        tok, col = self.take(what)
        try:
            return parse_value(tok)
        except ValueError:
            raise NetlistError(f"expected {what}, got {tok!r}", self.lineno, col) from None

    def keywords(self, allowed: dict[str, str], required: tuple[str, ...] = ()):
        """Parse trailing key=value tokens; `allowed` maps key -> description."""
        out: dict[str, float | str] = {}
        while self.pos < len(self.tokens):
            tok, col = self.take("key=value parameter")
            if "=" not in tok:
                raise NetlistError(f"expected key=value parameter, got {tok!r}", self.lineno, col)
            key, _, val = tok.partition("=")
            key = key.lower()
            if key not in allowed:
                raise NetlistError(f"unknown parameter {key!r}", self.lineno, col)
            if allowed[key] == "str":
                out[key] = val
            else:
                try:
                    out[key] = parse_value(val)
                except ValueError:
                    raise NetlistError(f"bad value for {key!r}: {val!r}", self.lineno, col) from None
        for key in required:
            if key not in out:
                raise NetlistError(f"missing required parameter {key!r}", self.lineno,
                                   self.tokens[0][1])
        return out


def _parse_waveform(ln: _Line) -> wf.Waveform:
    tok, col = ln.peek()
    if tok is None:
        raise NetlistError("expected waveform", ln.lineno, 1)
    kind = tok.lower()
    if kind == "dc":
        ln.take("dc keyword")
        level = ln.take_value("dc level")
        kw = ln.keywords({"tc": "num"})
        return wf.Dc(level, tc=float(kw.get("tc", 0.0)))
    if kind == "step":
        ln.take("step keyword")
        initial = ln.take_value("initial level")
        final = ln.take_value("final level")
        kw = ln.keywords({"t": "num", "edge": "num"})
        return wf.Step(initial, final, t_start=float(kw.get("t", 0.0)),
                       edge=float(kw.get("edge", 0.0)))
    if kind == "sin":
        ln.take("sin keyword")
        offset = ln.take_value("offset")
        ampl = ln.take_value("amplitude")
        freq = ln.take_value("frequency")
        return wf.Sine(offset, ampl, freq)
    if kind == "pwl":
        ln.take("pwl keyword")
        vals = []
        while ln.peek()[0] is not None:
            vals.append(ln.take_value("pwl time/value"))
        if len(vals) < 2 or len(vals) % 2:
            raise NetlistError("pwl needs an even number of time/value entries",
                               ln.lineno, col)
        pts = tuple((vals[i], vals[i + 1]) for i in range(0, len(vals), 2))
        return wf.Pwl(pts)
    # Bare number means a DC level.
    level = ln.take_value("waveform or dc level")
    kw = ln.keywords({"tc": "num"})
    return wf.Dc(level, tc=float(kw.get("tc", 0.0)))


def _serialize_waveform(w: wf.Waveform) -> str:
    if isinstance(w, wf.Dc):
        s = f"dc {format_value(w.level)}"
        if w.tc:
            s += f" tc={format_value(w.tc)}"
        return s
    if isinstance(w, wf.Step):
        return (f"step {format_value(w.initial)} {format_value(w.final)}"
                f" t={format_value(w.t_start)} edge={format_value(w.edge)}")
    if isinstance(w, wf.Sine):
        return f"sin {format_value(w.offset)} {format_value(w.amplitude)} {format_value(w.freq)}"
    if isinstance(w, wf.Pwl):
        body = " ".join(f"{format_value(t)} {format_value(v)}" for t, v in w.points)
        return f"pwl {body}"
    raise TypeError(f"unknown waveform {w!r}")


_EAMP_KEYS = {"a": "num", "gbw": "num", "rout": "num", "vos": "num", "vostc": "num",
              "ulo": "num", "uhi": "num", "iqon": "num", "iqfon": "num",
              "iqoff": "num", "fb": "str", "en": "str", "fon": "str"}

UNCONNECTED = "-"  # placeholder node: control pin left at its default-active state


def _parse_element(ln: _Line) -> Element:
    tok, col = ln.take("element")
    upper = tok.upper()
    first = upper[0]

    def node(what="node"):
        return ln.take(what)[0]

    try:
        if upper in ("EAMP", "ILIM", "POR", "ENSW"):
            name, _ = ln.take("element name")
            if upper == "EAMP":
                p, m, out, ref = node("in+"), node("in-"), node("out"), node("ref")
                kw = ln.keywords(_EAMP_KEYS, required=("a", "gbw", "rout"))
                fb = kw.get("fb")
                params = dev.ErrorAmp(
                    a_dc=kw["a"], gbw=kw["gbw"], r_out=kw["rout"],
                    v_os=float(kw.get("vos", 0.0)), v_os_tc=float(kw.get("vostc", 0.0)),
                    u_lo=float(kw.get("ulo", 0.0)), u_hi=float(kw.get("uhi", 3.0)),
                    iq_on=float(kw.get("iqon", 0.0)), iq_forced=float(kw.get("iqfon", 0.0)),
                    iq_off=float(kw.get("iqoff", 0.0)),
                    fb_input=str(fb) if fb is not None else None)
                en = str(kw.get("en", UNCONNECTED))
                fon = str(kw.get("fon", UNCONNECTED))
                return Element(name, (p, m, out, ref, en, fon), params)
            if upper == "ILIM":
                gate, out, ref = node("gate"), node("out"), node("ref")
                kw = ln.keywords({"pass": "str", "imax": "num", "isc": "num",
                                  "vnom": "num", "deadband": "num"},
                                 required=("pass", "imax", "isc", "vnom"))
                params = dev.CurrentLimiter(
                    i_max=kw["imax"], i_sc=kw["isc"], v_nom=kw["vnom"],
                    pass_element=str(kw["pass"]),
                    deadband=float(kw.get("deadband", 1e-3)))
                return Element(name, (gate, out, ref), params)
            if upper == "POR":
                nin, nout = node("in"), node("out")
                kw = ln.keywords({"vth": "num", "hyst": "num"}, required=("vth",))
                return Element(name, (nin, nout),
                               dev.PorComparator(v_th=kw["vth"],
                                                 hysteresis=float(kw.get("hyst", 0.0))))
            nin, nout = node("in"), node("out")
            kw = ln.keywords({"vth": "num"}, required=("vth",))
            return Element(name, (nin, nout), dev.EnableSwitch(threshold=kw["vth"]))

        name = tok
        if first == "R":
            n1, n2 = node(), node()
            value = ln.take_value("resistance")
            ln.keywords({})
            return Element(name, (n1, n2), dev.Resistor(value))
        if first == "C":
            n1, n2 = node(), node()
            value = ln.take_value("capacitance")
            kw = ln.keywords({"esr": "num"})
            return Element(name, (n1, n2),
                           dev.Capacitor(value, esr=float(kw.get("esr", 0.0))))
        if first == "V":
            n1, n2 = node("n+"), node("n-")
            return Element(name, (n1, n2), dev.VoltageSource(_parse_waveform(ln)))
        if first == "I":
            n1, n2 = node("n+"), node("n-")
            return Element(name, (n1, n2), dev.CurrentSource(_parse_waveform(ln)))
        if first == "M":
            d, g, s = node("drain"), node("gate"), node("source")
            pol, pcol = ln.take("polarity (p|n)")
            if pol.lower() not in ("p", "n"):
                raise NetlistError(f"polarity must be p or n, got {pol!r}", ln.lineno, pcol)
            kw = ln.keywords({"beta": "num", "vt": "num", "lambda": "num"},
                             required=("beta", "vt"))
            return Element(name, (d, g, s),
                           dev.Mosfet(polarity=pol.lower(), beta=kw["beta"], v_t=kw["vt"],
                                      lam=float(kw.get("lambda", 0.0))))
        if first == "G":
            op, on, ip, im = node("out+"), node("out-"), node("in+"), node("in-")
            kw = ln.keywords({"gm": "num"}, required=("gm",))
            return Element(name, (op, on, ip, im), dev.Vccs(gm=kw["gm"]))
    except dev.ParameterError as exc:
        raise NetlistError(str(exc), ln.lineno, col) from None

    raise NetlistError(f"unknown element type {tok!r}", ln.lineno, col)


def parse_netlist(text: str) -> Circuit:
    """Parse netlist source into a validated Circuit."""
    elements: list[Element] = []
    probes: list[Probe] = []
    temperature = 27.0
    names: dict[str, int] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("*"):
            continue
        ln = _Line(_tokenize(raw), lineno)
        tok, col = ln.peek()
        if tok.startswith("."):
            directive = tok.lower()
            ln.take("directive")
            if directive == ".temp":
                temperature = ln.take_value("temperature")
            elif directive == ".probe":
                pname, _ = ln.take("probe name")
                kind, kcol = ln.take("probe kind (v|i)")
                if kind.lower() not in ("v", "i"):
                    raise NetlistError(f"probe kind must be v or i, got {kind!r}",
                                       lineno, kcol)
                target, _ = ln.take("probe target")
                sign = 1.0
                if ln.peek()[0] is not None:
                    sign = ln.take_value("probe sign")
                probes.append(Probe(pname, kind.lower(), target, sign))
            elif directive == ".end":
                break
            else:
                raise NetlistError(f"unknown directive {tok!r}", lineno, col)
            if directive != ".end" and ln.peek()[0] is not None:
                extra, ecol = ln.peek()
                raise NetlistError(f"unexpected token {extra!r}", lineno, ecol)
            continue

        el = _parse_element(ln)
        if ln.peek()[0] is not None:
            extra, ecol = ln.peek()
            raise NetlistError(f"unexpected token {extra!r}", lineno, ecol)
        if el.name in names:
            raise NetlistError(
                f"duplicate element name {el.name!r} (first defined on line {names[el.name]})",
                lineno, col)
        names[el.name] = lineno
        elements.append(el)

    circuit = Circuit(tuple(elements), temperature=temperature, probes=tuple(probes))
    problems = validate(circuit)
    if problems:
        raise NetlistError("; ".join(problems))
    return circuit


# ---------------------------------------------------------------------------
# Serializer (canonical form; parse(serialize(c)) == c)
# ---------------------------------------------------------------------------

def _serialize_element(el: Element) -> str:
    p = el.params
    f = format_value
    if isinstance(p, dev.Resistor):
        return f"{el.name} {el.nodes[0]} {el.nodes[1]} {f(p.resistance)}"
    if isinstance(p, dev.Capacitor):
        s = f"{el.name} {el.nodes[0]} {el.nodes[1]} {f(p.capacitance)}"
        if p.esr:
            s += f" esr={f(p.esr)}"
        return s
    if isinstance(p, dev.VoltageSource) or isinstance(p, dev.CurrentSource):
        return f"{el.name} {el.nodes[0]} {el.nodes[1]} {_serialize_waveform(p.waveform)}"
    if isinstance(p, dev.Mosfet):
        s = (f"{el.name} {el.nodes[0]} {el.nodes[1]} {el.nodes[2]} {p.polarity}"
             f" beta={f(p.beta)} vt={f(p.v_t)}")
        if p.lam:
            s += f" lambda={f(p.lam)}"
        return s
    if isinstance(p, dev.Vccs):
        return f"{el.name} {' '.join(el.nodes)} gm={f(p.gm)}"
    if isinstance(p, dev.ErrorAmp):
        s = (f"EAMP {el.name} {el.nodes[0]} {el.nodes[1]} {el.nodes[2]} {el.nodes[3]}"
             f" a={f(p.a_dc)} gbw={f(p.gbw)} rout={f(p.r_out)}")
        if el.nodes[4] != UNCONNECTED:
            s += f" en={el.nodes[4]}"
        if el.nodes[5] != UNCONNECTED:
            s += f" fon={el.nodes[5]}"
        if p.v_os:
            s += f" vos={f(p.v_os)}"
        if p.v_os_tc:
            s += f" vostc={f(p.v_os_tc)}"
        if p.u_lo:
            s += f" ulo={f(p.u_lo)}"
        s += f" uhi={f(p.u_hi)}"
        if p.iq_on:
            s += f" iqon={f(p.iq_on)}"
        if p.iq_forced:
            s += f" iqfon={f(p.iq_forced)}"
        if p.iq_off:
            s += f" iqoff={f(p.iq_off)}"
        if p.fb_input:
            s += f" fb={p.fb_input}"
        return s
    if isinstance(p, dev.CurrentLimiter):
        return (f"ILIM {el.name} {el.nodes[0]} {el.nodes[1]} {el.nodes[2]}"
                f" pass={p.pass_element} imax={f(p.i_max)} isc={f(p.i_sc)}"
                f" vnom={f(p.v_nom)} deadband={f(p.deadband)}")
    if isinstance(p, dev.PorComparator):
        s = f"POR {el.name} {el.nodes[0]} {el.nodes[1]} vth={f(p.v_th)}"
        if p.hysteresis:
            s += f" hyst={f(p.hysteresis)}"
        return s
    if isinstance(p, dev.EnableSwitch):
        return f"ENSW {el.name} {el.nodes[0]} {el.nodes[1]} vth={f(p.threshold)}"
    raise TypeError(f"cannot serialize element kind {type(p).__name__}")


def serialize_circuit(circuit: Circuit, title: str | None = None) -> str:
    lines = []
    if title:
        lines.append(f"* {title}")
    lines.append(f".temp {format_value(circuit.temperature)}")
    for el in circuit.elements:
        lines.append(_serialize_element(el))
    for p in circuit.probes:
        s = f".probe {p.name} {p.kind} {p.target}"
        if p.sign != 1.0:
            s += f" {format_value(p.sign)}"
        lines.append(s)
    return "\n".join(lines) + "\n"
