"""Exception hierarchy shared by kernels, adjoints and the tape."""


class LinalgError(Exception):
    """Base class for every error raised by difflinalg."""


class ShapeError(LinalgError, ValueError):
    pass


class SymmetryError(ShapeError):
    pass


class NonFiniteError(LinalgError, ValueError):
    pass


class PrecisionError(LinalgError, TypeError):
    """Operands of one operator carry different floating point precisions."""


class NotPositiveDefiniteError(LinalgError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"matrix is not positive definite: non-positive pivot at step {step}")


class SingularTriangularError(LinalgError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"triangular matrix is singular: zero diagonal entry at index {index}")


class RankDeficientError(LinalgError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"matrix is rank deficient: |L[{index},{index}]| below threshold")


class ConvergenceError(LinalgError):
    def __init__(self, iterations, message=None):
        self.iterations = iterations
        super().__init__(message or f"iteration failed to converge after {iterations} iterations")


class SingularSpectrumError(LinalgError):
    """Singular values too small for the SVD backward pass to be defined."""


class GraphError(LinalgError):
    """Misuse of a computation graph (dangling ids, unbound leaves, ...)."""


class UnknownOpError(GraphError, KeyError):
    pass


class UnboundLeafError(GraphError):
    pass


class CoverageError(LinalgError):
    """A registered operator has no gradient-check descriptor."""


class ResampleError(LinalgError):
    """A random-input generator could not meet its preconditions."""


class DataError(LinalgError, ValueError):
    """Malformed input data; ``line`` is the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")
