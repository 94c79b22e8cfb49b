"""Exception types shared across the package.

Solver failures carry their diagnostics object so callers (and the CLI exit
code logic) can distinguish mathematical non-existence from bad input.
"""


class VortexLabError(Exception):
    """Base class for all package errors."""


# --- construction / validation ---------------------------------------------

class NonSPDMetric(VortexLabError):
    """Metric coefficient matrix is not symmetric positive definite."""


class BadGrid(VortexLabError):
    """Grid size violates the N >= 8, N even requirement."""


class BadDegree(VortexLabError):
    """Projective quadrature degree too small."""


class NonCommuting(VortexLabError):
    """Monodromy matrices do not commute."""


class SingularMonodromy(VortexLabError):
    """A monodromy matrix is not invertible."""


class LogBranchFailure(VortexLabError):
    """Monodromy has an eigenvalue on the closed negative real axis."""


class ZeroVector(VortexLabError):
    """Operation requires a nonzero vector."""


class ZeroSection(VortexLabError):
    """Flat pair requires a nonzero section."""


class NotFlatSection(VortexLabError):
    """Section is not fixed by the monodromies."""


class NotInvariant(VortexLabError):
    """Subspace (or off-diagonal block) fails the required invariance."""


class RankTooLarge(VortexLabError):
    """Invariant-subspace enumeration is only implemented for rank <= 3."""


class ZeroRank(VortexLabError):
    """Slope of a rank-zero bundle requested."""


# --- form calculus ----------------------------------------------------------

class DegreeOverflow(VortexLabError):
    """Derivative or wedge would exceed the top form degree."""


class WrongDegree(VortexLabError):
    """Operation applied to a form of the wrong bidegree."""


# --- metrics and flows ------------------------------------------------------

class SingularMetric(VortexLabError):
    """Metric field is singular (or loses positivity) at a grid point."""


class NonPositiveTau(VortexLabError):
    """Explicit trivial-pair solution requires tau > 0."""


class NonPositiveSigma(VortexLabError):
    """The sigma(tau) relation produced a non-positive denominator."""

    def __init__(self, denominator):
        self.denominator = denominator
        super().__init__(
            f"sigma relation denominator is non-positive: {denominator!r}"
        )


class FlowError(VortexLabError):
    """Base for solver failures; carries the diagnostics collected so far."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics
        super().__init__(message)


class NonConvergence(FlowError):
    """Flow stalled, hit the iteration cap, or degenerated: no solution found."""


class StepUnstable(FlowError):
    """Positivity margin collapsed while the residual was still moving up.

    Usually means the time step is too large for the problem at hand.
    """


# --- cli --------------------------------------------------------------------

class ConfigError(VortexLabError):
    """Configuration file is malformed; message includes section/key context."""
