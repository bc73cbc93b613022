"""Exception types shared across the soibag package."""


class SoibagError(Exception):
    """Base class for all soibag errors."""


# geometry
class DegenerateVertices(SoibagError):
    """Vertex set does not span a plane (all triples collinear)."""


class NonPositiveAxis(SoibagError):
    """Ellipse axis length must be strictly positive."""


class TooFewPoints(SoibagError):
    """Not enough points for the requested operation."""


class DegenerateSpread(SoibagError):
    """Point set has numerically zero spread; PCA axis undefined."""


class KTooLarge(SoibagError):
    """Requested sample count exceeds the input size."""


class EmptySet(SoibagError):
    """Point set must be nonempty."""


# extraction
class InsufficientPoints(SoibagError):
    """Cloud has fewer points than mixture components."""


class DegenerateRim(SoibagError):
    """Rim points are collinear; cyclic order undefined."""


# generation
class Infeasible(SoibagError):
    """No ellipse satisfies the bagging constraints."""


class DegenerateBase(SoibagError):
    """Base vertex PCA is degenerate."""


class HorizontalNormal(SoibagError):
    """Bottom-frame normal is horizontal; translation sign undefined."""


# planning
class RegularizationFailed(SoibagError):
    """No feasible ellipse found for the sampled point set."""


class PlanningFailed(SoibagError):
    """Planner exhausted its iteration budget."""

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


# servoing
class DegenerateExcitation(SoibagError):
    """Command norm too small for a Broyden update."""


class SolverFailure(SoibagError):
    """MPC solve failed to improve on the zero-command baseline."""


class Stalled(SoibagError):
    """Controller made no subgoal progress over the watchdog window."""


# simulator
class AnchorsCoincident(SoibagError):
    """Bag handle anchors coincide."""


# harness / io
class ParseError(SoibagError):
    """Input file failed to parse."""


class ValidationError(SoibagError):
    """Configuration violates an invariant."""
