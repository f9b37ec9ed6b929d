"""Exception hierarchy shared by the engine, the service and the CLI.

Each error class carries the process exit code the CLI maps it to:
2 usage / malformed data / IO, 3 infeasible hyperparameters,
4 undiagnosable input, 5 unmet metric precondition.
"""


class CogdiagError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class DataFormatError(CogdiagError):
    """Malformed input file, bad flag value, or unusable path."""

    exit_code = 2


class InfeasibleHyperparameterError(CogdiagError):
    """Hyperparameters violate a feasibility constraint (e.g. scale bounds)."""

    exit_code = 3


class UndiagnosableError(CogdiagError):
    """The supplied evidence cannot produce a diagnosis."""

    exit_code = 4


class MetricPreconditionError(CogdiagError):
    """A metric's precondition does not hold on the given data."""

    exit_code = 5


class TrainingDivergedError(CogdiagError):
    """Training produced a non-finite loss or gradient."""

    exit_code = 1
