"""Exception hierarchy shared by every analysis module."""


class ConvergeError(Exception):
    """Base class for all errors raised by the toolkit."""


# -- linear algebra ---------------------------------------------------------

class InvalidMatrix(ConvergeError, ValueError):
    pass


class NotPositiveDefinite(ConvergeError, ValueError):
    def __init__(self, lambda_min, message=None):
        self.lambda_min = float(lambda_min)
        super().__init__(message or f"matrix is not positive definite (lambda_min={self.lambda_min:.6g})")


class SingularFactor(ConvergeError, ValueError):
    pass


# -- DSL --------------------------------------------------------------------

class DSLSyntaxError(ConvergeError, SyntaxError):
    def __init__(self, message, line, column, expected=()):
        self.line = line
        self.column = column
        self.expected = tuple(expected)
        text = f"line {line}, column {column}: {message}"
        if self.expected:
            text += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(text)


class DimensionMismatch(ConvergeError, ValueError):
    pass


class UnknownIdentifier(ConvergeError, NameError):
    pass


class NonPositiveCoefficient(ConvergeError, ValueError):
    pass


class InvalidBound(ConvergeError, ValueError):
    """A class-K bound is not a monomial c*s^p with p >= 1."""


class JacobianMismatch(ConvergeError, ValueError):
    pass


class EvalDomainError(ConvergeError, ArithmeticError):
    def __init__(self, node, message="domain error"):
        self.node = node
        super().__init__(f"{message} in `{node}`")


class NonSmoothPoint(ConvergeError, ValueError):
    """A derivative was requested at a kink of abs/min/max/floor/sqrt."""

    def __init__(self, k, x):
        self.k = k
        self.x = x
        super().__init__(f"dynamics not differentiable at k={k}, x={list(map(float, x))}")


# -- dynamics ---------------------------------------------------------------

class InvalidShape(ConvergeError, ValueError):
    pass


class TransferUnavailable(ConvergeError, RuntimeError):
    pass


class InvalidDomain(ConvergeError, ValueError):
    pass


# -- convergent dynamics ----------------------------------------------------

class ReferenceFailure(ConvergeError, RuntimeError):
    """find_reference could not produce a bounded reference solution."""

    kind = "Failure"


class DivergedProbes(ReferenceFailure):
    kind = "DivergedProbes"


class NoAgreement(ReferenceFailure):
    kind = "NoAgreement"

    def __init__(self, agreement):
        self.agreement = float(agreement)
        super().__init__(f"probes did not collapse (max pairwise distance {self.agreement:.3g})")


class Unbounded(ReferenceFailure):
    kind = "Unbounded"


# -- contraction ------------------------------------------------------------

class MetricSingular(ConvergeError, ValueError):
    def __init__(self, k, x):
        self.k = k
        self.x = x
        super().__init__(f"metric singular at k={k}, x={list(map(float, x))}")


class InvalidP(ConvergeError, ValueError):
    pass


class TruncationFailure(ConvergeError, RuntimeError):
    """The Q-sum did not decay within the truncation horizon."""


class PSearchFailure(ConvergeError, RuntimeError):
    def __init__(self, best_g, best_P, iterations):
        self.best_g = float(best_g)
        self.best_P = best_P
        self.iterations = iterations
        super().__init__(f"no Demidovich matrix found: best g(P)={self.best_g:.6g} after {iterations} iterations")


class ConfigError(ConvergeError, ValueError):
    pass
