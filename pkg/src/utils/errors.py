from typing import Any, Optional


def _rebuild(cls, args, state):
    error = cls.__new__(cls)
    Exception.__init__(error, *args)
    error.__dict__.update(state)
    return error


class CorrolabError(Exception):
    """Base class for every error raised by the solver"""

    def __reduce__(self):
        # subclasses take extra constructor arguments; rebuild from args and attributes
        return _rebuild, (type(self), self.args, self.__dict__)


class ConfigError(CorrolabError):
    """Invalid, missing or unknown configuration key"""

    def __init__(self, message: str, keys: Optional[list[str]] = None):
        super().__init__(message)
        self.keys = keys or []


class ArgumentError(CorrolabError):
    """Invalid argument to a library operation"""


class GeometryError(CorrolabError):
    pass


class ResourceError(CorrolabError):
    pass


class MeshFormatError(CorrolabError):
    """Malformed mesh file, reported with its line number"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class DegenerateElementError(CorrolabError):
    pass


class PartitionError(ArgumentError):
    pass


class ConformanceError(CorrolabError):
    pass


class AssemblyError(CorrolabError):
    pass


class SolverError(CorrolabError):
    pass


class SingularSystemError(SolverError):
    pass


class NonConvergenceError(SolverError):
    """Iteration budget exhausted; carries the best iterate found"""

    def __init__(self, message: str, x: Any = None, stats: Any = None):
        super().__init__(message)
        self.x = x
        self.stats = stats


class SubdomainSolveError(SolverError):
    def __init__(self, message: str, subdomain: int):
        super().__init__(f"subdomain {subdomain}: {message}")
        self.subdomain = subdomain


class DegenerateGradientError(CorrolabError):
    pass


class WorkerError(CorrolabError):
    """Exception raised inside a subdomain worker"""

    def __init__(self, rank: int, cause: BaseException):
        super().__init__(f"worker {rank}: {type(cause).__name__}: {cause}")
        self.rank = rank
        self.cause = cause


class SimulationError(CorrolabError):
    """Module error re-raised with the time-step context"""

    def __init__(self, step: int, pde: str, cause: BaseException):
        super().__init__(f"step {step} ({pde}): {cause}")
        self.step = step
        self.pde = pde
        self.cause = cause
