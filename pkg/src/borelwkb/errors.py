"""Exception hierarchy for the whole toolkit.

Numerical-failure exceptions all derive from ``BorelWkbError`` so callers
(and the CLI) can map them to a single exit status.  Configuration problems
derive from ``ConfigInvalid`` instead.
"""


class BorelWkbError(Exception):
    """Base class for numerical / analytic failures."""


# --- potential -------------------------------------------------------------

class NonConvergence(BorelWkbError):
    """Root polishing failed to converge within the iteration budget."""


class TurningPointProximity(BorelWkbError):
    """Evaluation point is inside the exclusion radius of a turning point."""


class DegenerateExpansion(BorelWkbError):
    """Local series around a turning point could not be inverted."""


# --- geometry --------------------------------------------------------------

class BranchDiscontinuity(BorelWkbError):
    """Adaptive refinement detected a jump of the tracked square-root branch."""


class PathThroughTurningPoint(BorelWkbError):
    """An integration path passes through a turning point away from a
    declared endpoint."""


class TailNotConvergent(BorelWkbError):
    """The decay estimate for an integral tail to infinity failed."""


class TraceStalled(BorelWkbError):
    """Stokes-line tracing step size underflowed."""


class NoCanonicalPath(BorelWkbError):
    """Target cannot be reached canonically from the requested sector."""


# --- borel -----------------------------------------------------------------

class RayHitsSingularity(BorelWkbError):
    """Laplace ray passes too close to a cataloged singularity."""


class NonDecayingIntegrand(BorelWkbError):
    """exp(2*lambda*s) does not decay along the requested ray."""


class BranchPointError(BorelWkbError):
    """Evaluation exactly at a branch point of a closed-form evaluator."""


class PoleHit(BorelWkbError):
    """Evaluation at a pole of a closed-form evaluator."""


class InsufficientOrder(BorelWkbError):
    """Too few series coefficients for the requested estimate."""


# --- level expansion -------------------------------------------------------

class StripObstructed(BorelWkbError):
    """A singularity lies inside the integration strip needed for a
    level-expansion quadrature."""


class BudgetExceeded(BorelWkbError):
    """Cost estimate of a nested quadrature exceeds the configured limit."""


class OutsideConvergenceRegion(BorelWkbError):
    """|s| is too large for the level expansion to be certified convergent."""


class UnsupportedLevel(BorelWkbError):
    """Singularity prediction requested beyond the cataloged sheet rules."""


# --- wkb / spectra ---------------------------------------------------------

class IllConditioned(BorelWkbError):
    """Probe solutions are numerically parallel; decomposition unstable."""


class EmptyCatalog(BorelWkbError):
    """Optimal truncation needs at least one cataloged singularity."""


class LambdaTooSmall(BorelWkbError):
    """lambda * |s0| < 1, no optimal truncation order exists."""


class KernelSingularityHit(BorelWkbError):
    """Remainder-kernel evaluation point sits on a kernel singularity."""


class TreeBudgetExceeded(BorelWkbError):
    """Generation tree grew past the configured node budget."""


class RootBracketingFailed(BorelWkbError):
    """No sign change found while scanning for a spectral root."""


class NoRootInBracket(BorelWkbError):
    """Refinement lost the root from its bracket."""


class DenominatorNearZero(BorelWkbError):
    """Leading quantization condition is accidentally near-degenerate."""


class NotConfining(BorelWkbError):
    """Potential is not confining (odd degree or non-positive leading term)."""


class BasisNotConverged(BorelWkbError):
    """Doubling the oscillator basis moved the requested eigenvalues."""


# --- cli -------------------------------------------------------------------

class ConfigInvalid(Exception):
    """Task configuration failed schema validation."""


class NotPlottable(BorelWkbError):
    """Artifact type has no CSV plot emission."""


class CacheCorrupt(BorelWkbError):
    """A cache entry could not be decoded (caller should recompute)."""
