"""Stimulus waveforms and sweep grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .devices import T_REF_C, _require


@dataclass(frozen=True)
class Dc:
    """Constant level.  `tc` is an optional fractional temperature
    coefficient (per degC about 27 C), used for temperature-dependent
    references."""

    level: float
    tc: float = 0.0

    def value(self, t: float, temp_c: float = T_REF_C) -> float:
        return self.level * (1.0 + self.tc * (temp_c - T_REF_C))

    def breakpoints(self):
        return ()


@dataclass(frozen=True)
class Step:
    """Level change at t_start with a linear edge of duration `edge`
    (the A_t rise/fall time of a load-step stimulus)."""

    initial: float
    final: float
    t_start: float = 0.0
    edge: float = 0.0

    def __post_init__(self):
        _require(self.edge >= 0, f"edge must be >= 0, got {self.edge}")
        _require(self.t_start >= 0, f"t_start must be >= 0, got {self.t_start}")

    def value(self, t: float, temp_c: float = T_REF_C) -> float:
        if t <= self.t_start:
            return self.initial
        if self.edge > 0 and t < self.t_start + self.edge:
            return self.initial + (self.final - self.initial) * (t - self.t_start) / self.edge
        return self.final

    def breakpoints(self):
        if self.edge > 0:
            return (self.t_start, self.t_start + self.edge)
        return (self.t_start,)


@dataclass(frozen=True)
class Sine:
    offset: float
    amplitude: float
    freq: float

    def __post_init__(self):
        _require(self.freq > 0, f"freq must be > 0, got {self.freq}")

    def value(self, t: float, temp_c: float = T_REF_C) -> float:
        return self.offset + self.amplitude * np.sin(2.0 * np.pi * self.freq * t)

    def breakpoints(self):
        return ()


@dataclass(frozen=True)
class Pwl:
    """Piecewise-linear waveform; holds the end values outside the knots."""

    points: tuple  # ((t, v), ...) with strictly increasing t

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.points)
        object.__setattr__(self, "points", pts)
        _require(len(pts) >= 1, "pwl needs at least one point")
        times = [t for t, _ in pts]
        _require(all(b > a for a, b in zip(times, times[1:])),
                 "pwl times must be strictly increasing")

    def value(self, t: float, temp_c: float = T_REF_C) -> float:
        pts = self.points
        if t <= pts[0][0]:
            return pts[0][1]
        if t >= pts[-1][0]:
            return pts[-1][1]
        for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
            if t0 <= t <= t1:
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        return pts[-1][1]

    def breakpoints(self):
        return tuple(t for t, _ in self.points)


Waveform = Dc | Step | Sine | Pwl


@dataclass(frozen=True)
class SweepSpec:
    """A sweep target with its grid.

    target grammar: "source:<name>" sweeps that source's level,
    "temperature" sweeps the analysis temperature, and
    "param:<element>.<field>" sweeps a device parameter.
    """

    target: str
    start: float
    stop: float
    points: int
    spacing: str = "linear"  # or "logarithmic"

    def __post_init__(self):
        _require(self.points >= 2, f"need >= 2 points, got {self.points}")
        _require(self.start != self.stop, "start must differ from stop")
        _require(self.spacing in ("linear", "logarithmic"),
                 f"spacing must be linear|logarithmic, got {self.spacing!r}")
        if self.spacing == "logarithmic":
            _require(self.start * self.stop > 0,
                     "logarithmic spacing needs same-sign nonzero endpoints")

    def grid(self) -> np.ndarray:
        if self.spacing == "logarithmic":
            sign = 1.0 if self.start > 0 else -1.0
            return sign * np.logspace(np.log10(abs(self.start)),
                                      np.log10(abs(self.stop)), self.points)
        return np.linspace(self.start, self.stop, self.points)
