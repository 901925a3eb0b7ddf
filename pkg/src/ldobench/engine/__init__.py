"""Numerical core: MNA assembly, DC/AC/transient analyses, loop gain."""

from .mna import Assembly, ConvergenceError, SingularMatrixError, SolverError, Tolerances
from .dc import dc_operating_point, dc_sweep
from .ac import ac_analysis, ac_grid, loop_gain, LoopGainError
from .transient import transient
from .results import (AcResponse, LoopGainResult, OpPoint, SolveStats,
                      SweepTrace, TransientTrace, csv_text)

__all__ = [
    "Assembly", "Tolerances", "SolverError", "ConvergenceError",
    "SingularMatrixError", "dc_operating_point", "dc_sweep", "ac_analysis",
    "ac_grid", "loop_gain", "LoopGainError", "transient", "AcResponse",
    "LoopGainResult", "OpPoint", "SolveStats", "SweepTrace", "TransientTrace",
    "csv_text",
]
