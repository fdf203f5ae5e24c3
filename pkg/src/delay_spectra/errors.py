"""Exception hierarchy shared by every module."""


class DelaySpectraError(Exception):
    """Base class for all package errors."""


class ValidationError(DelaySpectraError, ValueError):
    """A system candidate violates one or more invariants.

    ``errors`` holds the complete list of messages, never just the first.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class KernelPoleError(DelaySpectraError, ValueError):
    """A kernel transform was evaluated at one of its poles."""

    def __init__(self, s, pole):
        self.s = s
        self.pole = pole
        super().__init__(f"kernel transform has a pole at s={pole!r}")


class SingularPointError(DelaySpectraError, ValueError):
    """The transform of alpha itself is singular at s = 0."""


class OutOfRangeError(DelaySpectraError, ValueError):
    """A time argument lies outside the solved or stored range."""


class NumericalFailure(DelaySpectraError, ArithmeticError):
    """Base class for blow-up and non-convergence."""


class BlowUpError(NumericalFailure):
    """The integrated state became non-finite."""

    def __init__(self, time):
        self.time = time
        super().__init__(f"non-finite state at t={time:.17g}")


class ConvergenceError(NumericalFailure):
    """An iterative method failed to converge."""


class ContourError(NumericalFailure):
    """A winding-number contour passes too close to a root."""


class EnvelopeViolation(DelaySpectraError):
    """The realized perturbation exceeded its declared (gamma, K0) envelope."""

    def __init__(self, time, realized, allowed):
        self.time = time
        self.realized = realized
        self.allowed = allowed
        super().__init__(
            f"envelope violation at t={time:.17g}: |f|={realized:.6g} > {allowed:.6g}"
        )


class EnvelopeOverflowError(NumericalFailure, OverflowError):
    """A window integral of the envelope overflowed double precision."""

    def __init__(self, window):
        self.window = window
        super().__init__(f"envelope window integral overflowed at t={window}")


class UnsupportedMultiplicity(DelaySpectraError, ValueError):
    """Only simple characteristic roots carry eigensolutions here."""


class DegenerateNullSpace(DelaySpectraError, ValueError):
    """The characteristic matrix has a numerically multi-dimensional kernel."""


class ImaginaryAxisPole(DelaySpectraError, ValueError):
    """A frequency-response matrix has a pole on the imaginary axis."""


class EmptyRegion(DelaySpectraError, ValueError):
    """No characteristic roots were located in the searched region."""
