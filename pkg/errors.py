class PtrDesignError(Exception):
    """Base class for every error raised by the solver modules."""


class ValidationError(PtrDesignError, ValueError):
    """Malformed input or violated precondition (CLI exit code 2)."""


class NumericalError(PtrDesignError, RuntimeError):
    """Numerical failure such as non-convergence (CLI exit code 3)."""


class SymmetryRequiredError(ValidationError):
    """An operation that needs mirror symmetry got an asymmetric input."""


class BandStraddlesGapError(ValidationError):
    def __init__(self, k_lo, k_hi, k_gap):
        super().__init__(
            f"interval [{k_lo:.12g}, {k_hi:.12g}] is not a single pass band: "
            f"gap found at k = {k_gap:.12g}"
        )
        self.k_gap = k_gap


class RootNotBracketedError(NumericalError):
    """No Bloch-phase root lies inside the requested interval."""


class ResonancePoleError(NumericalError):
    def __init__(self, k):
        super().__init__(f"transfer matrix entry m22 vanishes at k = {k!r}")
        self.k = k


class DegenerateShiftError(NumericalError):
    """Denominator of the first-order frequency correction is (numerically) zero."""


class SingularDesignError(NumericalError):
    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class AccidentalLocationError(ValidationError):
    def __init__(self, index, position):
        super().__init__(
            f"position #{index + 1} (x = {position:.12g}) has Re(psi)*Im(psi) = 0 "
            f"for every target PTR; move it"
        )
        self.index = index
        self.position = position


class PeakLostError(NumericalError):
    def __init__(self, epsilon, message="transmission peak lost"):
        super().__init__(f"{message} at epsilon = {epsilon:.12g}")
        self.epsilon = epsilon


class NonConvergenceError(NumericalError):
    def __init__(self, seed, iterations):
        super().__init__(f"Newton iteration from seed {seed!r} did not converge in {iterations} steps")
        self.seed = seed
        self.iterations = iterations


class TriviallyReflectionlessError(ValidationError):
    """The structure has no reflection at any frequency (e.g. free space)."""


class ContinuationLostError(NumericalError):
    def __init__(self, epsilon, message="continuation lost a root", partial=None):
        super().__init__(f"{message} at epsilon = {epsilon:.12g}")
        self.epsilon = epsilon
        self.partial = partial
