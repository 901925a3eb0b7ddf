"""Analysis result containers and CSV export.

CSV layout is stable: first column is the sweep variable (V, A, Hz or s),
remaining columns are probes, one header row with names and units.
Floats are written with shortest-exact repr so repeated runs are
byte-identical.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from ..units import format_value


@dataclass
class SolveStats:
    iterations: int = 0
    residual: float = 0.0
    # max over node rows of |F| - (i_abstol + reltol*scale); <= 0 when the
    # KCL residual bound holds everywhere
    kcl_margin: float = 0.0
    gmin_steps: int = 0
    source_steps: int = 0
    mode_rounds: int = 0
    history: list = field(default_factory=list)  # per-iteration (residual, iter)


@dataclass
class OpPoint:
    """Converged DC solution."""

    voltages: dict[str, float]
    branch_currents: dict[str, float]
    elements: dict[str, dict]          # per-element operating data
    supply_current: float
    temperature: float
    stats: SolveStats
    x: np.ndarray                      # raw unknown vector
    modes: dict

    def voltage(self, node: str) -> float:
        return 0.0 if node == "0" else self.voltages[node]


@dataclass
class SweepTrace:
    """DC sweep results, one record per grid point in sweep order."""

    target: str
    values: np.ndarray
    points: list[OpPoint | None]
    converged: list[bool]
    probe_names: list[str]
    probe_data: np.ndarray  # shape (npts, nprobes); NaN where not converged

    def column(self, probe: str) -> np.ndarray:
        return self.probe_data[:, self.probe_names.index(probe)]

    def csv_header(self) -> list[str]:
        unit = sweep_unit(self.target)
        cols = [f"{self.target} ({unit})"]
        cols += [f"{p} ({probe_unit(p)})" for p in self.probe_names]
        cols.append("converged")
        return cols

    def write_csv(self, buf) -> None:
        _write_row(buf, self.csv_header())
        for k, v in enumerate(self.values):
            row = [format_value(v)]
            row += [format_value(x) for x in self.probe_data[k]]
            row.append("1" if self.converged[k] else "0")
            _write_row(buf, row)


@dataclass
class AcResponse:
    """Complex small-signal transfer per probe over a frequency grid."""

    freqs: np.ndarray
    transfers: dict[str, np.ndarray]  # probe -> complex array

    def magnitude_db(self, probe: str) -> np.ndarray:
        return 20.0 * np.log10(np.abs(self.transfers[probe]))

    def phase_deg(self, probe: str) -> np.ndarray:
        return np.degrees(np.unwrap(np.angle(self.transfers[probe])))

    def write_csv(self, buf) -> None:
        cols = ["freq (Hz)"]
        for p in self.transfers:
            cols += [f"{p} mag (dB)", f"{p} phase (deg)"]
        _write_row(buf, cols)
        mags = {p: self.magnitude_db(p) for p in self.transfers}
        phases = {p: self.phase_deg(p) for p in self.transfers}
        for k, f in enumerate(self.freqs):
            row = [format_value(f)]
            for p in self.transfers:
                row += [format_value(mags[p][k]), format_value(phases[p][k])]
            _write_row(buf, row)


@dataclass
class LoopGainResult:
    """Loop transfer plus the scalar stability figures."""

    response: AcResponse               # probe "T"
    dc_gain_db: float
    unity_freq_hz: float
    phase_margin_deg: float

    @property
    def freqs(self):
        return self.response.freqs


@dataclass
class TransientTrace:
    times: np.ndarray
    probe_names: list[str]
    probe_data: np.ndarray  # shape (nsteps, nprobes)
    stats: SolveStats
    steps: int = 0
    rejected: int = 0
    newton_iterations: int = 0

    def column(self, probe: str) -> np.ndarray:
        return self.probe_data[:, self.probe_names.index(probe)]

    def write_csv(self, buf) -> None:
        cols = ["time (s)"] + [f"{p} ({probe_unit(p)})" for p in self.probe_names]
        _write_row(buf, cols)
        for k, t in enumerate(self.times):
            row = [format_value(t)] + [format_value(v) for v in self.probe_data[k]]
            _write_row(buf, row)


def _write_row(buf, cells) -> None:
    buf.write(",".join(_quote(c) for c in cells))
    buf.write("\r\n")


def _quote(cell: str) -> str:
    if any(ch in cell for ch in ',"\n'):
        return '"' + cell.replace('"', '""') + '"'
    return cell


def probe_unit(name: str) -> str:
    """Unit for a probe column, inferred from the conventional name prefix."""
    if name.startswith("i") or name.startswith("I"):
        return "A"
    return "V"


def sweep_unit(target: str) -> str:
    if target == "temperature":
        return "degC"
    if target.startswith("param:"):
        return "value"
    if target.startswith("source:"):
        name = target.split(":", 1)[1]
        return "A" if name.upper().startswith("I") else "V"
    return "value"


def op_write_csv(op: OpPoint, buf) -> None:
    _write_row(buf, ["quantity", "value", "unit"])
    for node in sorted(op.voltages):
        _write_row(buf, [f"v({node})", format_value(op.voltages[node]), "V"])
    for name in sorted(op.branch_currents):
        _write_row(buf, [f"i({name})", format_value(op.branch_currents[name]), "A"])
    _write_row(buf, ["supply_current", format_value(op.supply_current), "A"])
    _write_row(buf, ["temperature", format_value(op.temperature), "degC"])


def csv_text(result) -> str:
    buf = io.StringIO()
    if isinstance(result, OpPoint):
        op_write_csv(result, buf)
    else:
        result.write_csv(buf)
    return buf.getvalue()
