"""ldobench: behavioral analog-circuit engine and LDO characterization bench.

A small modified-nodal-analysis simulator (DC, sweeps, AC, loop gain,
transient) plus a parameterized behavioral model of a 100 mA low-dropout
regulator with foldback current limiting, and the measurement routines
that characterize it against its margin targets.
"""

from . import devices, waveforms
from .netlist import Circuit, Element, NetlistError, Probe, parse_netlist, serialize_circuit, validate
from .engine import (ac_analysis, ac_grid, dc_operating_point, dc_sweep,
                     loop_gain, transient, Tolerances)

__version__ = "0.1.0"
