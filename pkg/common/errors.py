"""
Errors raised by the library. Scripts map them to process exit codes.
"""


class HierarchyError(Exception):
    """Base class for all errors raised by this package."""
    exit_code = 1


class ConfigError(HierarchyError, ValueError):
    exit_code = 2


class ParseError(HierarchyError, ValueError):
    exit_code = 2

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalDivergence(HierarchyError, ArithmeticError):
    """A non-finite value appeared. `primitive` names the operation which produced it."""
    exit_code = 3

    def __init__(self, primitive, message=""):
        self.primitive = primitive
        super().__init__(f"Non-finite value in primitive '{primitive}'. {message}".strip())


class ShapeError(HierarchyError, ValueError):
    pass


class EmptyBatch(HierarchyError, ValueError):
    pass


class CodeError(HierarchyError, ValueError):
    pass


class ProtocolError(HierarchyError, RuntimeError):
    pass


class InsufficientHorizon(HierarchyError, ValueError):
    pass


class NotEnoughData(HierarchyError, ValueError):
    pass
