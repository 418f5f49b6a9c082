"""Exception types raised across the package."""


class VarifoldError(Exception):
    pass


class NonPositiveOrientation(VarifoldError):
    pass


class DegenerateBBox(VarifoldError):
    pass


class EmptySimplex(VarifoldError):
    pass


class KindMismatch(VarifoldError):
    pass


class NonFinite(VarifoldError):
    pass


class ZeroDensity(VarifoldError):
    pass


class ModeMismatch(VarifoldError):
    pass


class Infeasible(VarifoldError):
    def __init__(self, message, violated=()):
        super().__init__(message)
        self.violated = list(violated)


class MaxIterations(VarifoldError):
    pass


class FoldedRegion(VarifoldError):
    pass


class InvalidRatio(VarifoldError):
    pass


class ParseError(VarifoldError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class EmptyInput(VarifoldError):
    pass
