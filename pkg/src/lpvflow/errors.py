"""Exception hierarchy shared by all stages of the pipeline.

Every error carries a stable ``exit_code`` so the CLI can map failures to
distinct process exit statuses.
"""

from __future__ import annotations


class LpvFlowError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class DimensionError(LpvFlowError, ValueError):
    exit_code = 10


class UnknownBenchmark(LpvFlowError, KeyError):
    exit_code = 11

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else "unknown benchmark"


class EquilibriumError(LpvFlowError, RuntimeError):
    exit_code = 12


class IntegrationError(LpvFlowError, RuntimeError):
    """Time integration failed; ``t_last`` is the last time with a valid state."""

    exit_code = 13

    def __init__(self, message: str, t_last: float | None = None):
        super().__init__(message)
        self.t_last = t_last


class ParameterOrderError(LpvFlowError, ValueError):
    exit_code = 14


class DimensionTooLarge(LpvFlowError, ValueError):
    exit_code = 15


class OptimizationFailed(LpvFlowError, RuntimeError):
    exit_code = 16


class OutsideDomain(LpvFlowError, ValueError):
    """A scheduling point lies outside the parameter polytope."""

    exit_code = 17

    def __init__(self, message: str, violation: float):
        super().__init__(message)
        self.violation = float(violation)


class IterationLimit(LpvFlowError, RuntimeError):
    exit_code = 18


class NumericalBreakdown(LpvFlowError, RuntimeError):
    exit_code = 19


class SynthesisInfeasible(LpvFlowError, RuntimeError):
    exit_code = 20

    def __init__(self, message: str, gamma: float | None = None):
        super().__init__(message)
        self.gamma = gamma


class WeightError(LpvFlowError, ValueError):
    exit_code = 21


class ParameterExit(LpvFlowError, RuntimeError):
    """The scheduling parameter left the polytope during a closed-loop run.

    ``result`` holds the partial :class:`~lpvflow.closedloop.ClosedLoopResult`
    recorded up to the exit time.
    """

    exit_code = 22

    def __init__(self, time: float, magnitude: float, result=None):
        super().__init__(
            f"scheduling parameter left the polytope at t={time:.6g} "
            f"(violation {magnitude:.3g})"
        )
        self.time = float(time)
        self.magnitude = float(magnitude)
        self.result = result


class StageDependencyError(LpvFlowError, RuntimeError):
    exit_code = 23


class ParseError(LpvFlowError, ValueError):
    exit_code = 24

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)
        self.line = line
        self.column = column


class EmptyReport(LpvFlowError, RuntimeError):
    exit_code = 25


class ConfigError(LpvFlowError, ValueError):
    exit_code = 26


class RankDeficientWarning(UserWarning):
    """Requested POD dimension exceeds the numerical rank of the snapshots."""
