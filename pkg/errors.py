"""
Exceptions raised by the repetitive-control design toolkit.
Every failure the solvers, simulator or config loader can report derives from DesignError.
"""


class DesignError(Exception):
    """Base class for all toolkit errors"""


# Frequency response

class PoleAtFrequency(DesignError):
    """Denominator vanishes at the evaluation frequency"""

    def __init__(self, omega, message=None):
        self.omega = omega
        super().__init__(message or f"pole at omega={omega!r} rad/s")


class NonFiniteInput(DesignError, ValueError):
    """NaN or infinite frequency/parameter handed to an evaluator"""


class UnknownKind(DesignError, ValueError):
    """Controller kind not in the coefficient table"""


class MissingParameter(DesignError, ValueError):
    """A controller kind was built without one of its parameters"""


class InvalidParameter(DesignError, ValueError):
    """Parameter outside the range its controller kind allows"""


# Loop algebra

class RegenerativePole(DesignError):
    """1 - q_p e^{(-tau_d+tau_q)jw} vanishes: the repetitive loop has infinite gain"""

    def __init__(self, omega, message=None):
        self.omega = omega
        super().__init__(message or f"regenerative pole at omega={omega!r} rad/s")


class CriticalPoint(DesignError):
    """1 + L (or 1 + G) vanishes: the loop sits on the stability boundary"""

    def __init__(self, omega, message=None):
        self.omega = omega
        super().__init__(message or f"loop passes through -1 at omega={omega!r} rad/s")


# Point condition

class DegenerateBackSolve(DesignError):
    """Filter back-solve denominator below its floor"""


class SingularSystem(DesignError):
    """The 2x2 parameter system has no unique solution"""


class NoSolution(DesignError):
    """Solved parameter point falls outside the parameter box"""


class EmptyCurve(DesignError):
    """No point of the point-condition curve survived"""

    def __init__(self, omega, skipped=0):
        self.omega = omega
        self.skipped = skipped
        super().__init__(f"no solution points at omega={omega!r} rad/s ({skipped} skipped)")


# Regions

class MismatchedGrids(DesignError, ValueError):
    """Rasters do not share box and resolution"""


class EmptyRegion(DesignError):
    """Overall solution region has no member cell"""


class UnsupportedFormat(DesignError, ValueError):
    """Artifact format not understood"""


# Simulation

class ImproperTransferFunction(DesignError, ValueError):
    """Numerator degree exceeds denominator degree, or a pure advance reached realization"""


class UnstableSimulation(DesignError):
    """Output grew beyond the divergence bound; carries the partial trace"""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class TraceTooShort(DesignError, ValueError):
    """Trace spans fewer than two periods"""


# Configuration

class ConfigError(DesignError):
    """Base for config file problems"""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path:
            where += f"{path}: "
        if line is not None:
            where += f"(line {line}) "
        super().__init__(f"{where}{message}")


class ParseError(ConfigError):
    """Config file is not well-formed YAML/JSON"""


class ValidationError(ConfigError, ValueError):
    """Config value violates an invariant"""
