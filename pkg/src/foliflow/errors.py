"""Exception hierarchy shared by all foliflow modules."""


class FoliflowError(Exception):
    """Base class for all errors raised by foliflow."""


class InvalidGrid(FoliflowError):
    """Grid specification violates a model invariant (size, power of two, margin)."""


class UnsupportedCombination(FoliflowError):
    """Geometry kind and codimension cannot be combined."""


class SingularMetric(FoliflowError):
    """A metric eigenvalue fell below the singularity floor (1e-10 by default)."""


class ModelMismatch(FoliflowError):
    """Two fields that must share a model were built on different models."""


class PlanMismatch(FoliflowError):
    """A spectral plan was applied to a field with a different grid."""


class CFLViolation(FoliflowError):
    """Requested explicit time step exceeds the parabolic CFL bound."""


class StepRejected(FoliflowError):
    """A time step produced an invalid state (positivity loss, NaN, monitor breach)."""


class NonFiniteState(StepRejected):
    """NaN or Inf detected in an evolved state."""


class LeftKahlerCone(StepRejected):
    """The evolved potential left the Kaehler cone (metric lost positivity)."""


class DegenerateJacobian(FoliflowError):
    """A diffeomorphism sample has non-positive Jacobian determinant."""


class InterpolationOutOfBand(FoliflowError):
    """A trajectory point left the latitude band of the sphere model."""


class NonPositiveEnergy(FoliflowError):
    """Gronwall fitting requires strictly positive energy samples."""


class InsufficientSamples(FoliflowError):
    """Not enough trace samples for a finite-difference diagnostic."""


class NonConvergence(FoliflowError):
    """Final flow residual stayed above the convergence threshold (diagnostic)."""


class ConfigError(FoliflowError):
    """Scenario configuration is malformed; the message names the offending field."""


class UnknownScenario(FoliflowError):
    """Requested scenario name is not in the catalog."""


class ScenarioFailure(FoliflowError):
    """At least one acceptance criterion of a scenario failed."""
