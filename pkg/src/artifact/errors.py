"""Exception hierarchy shared by all modules."""


class ArtifactError(Exception):
    """Base class for every domain error raised by the package."""


class InvalidSpec(ArtifactError, ValueError):
    """A Hamiltonian specification violates a structural requirement."""


class NonIntegrable(ArtifactError):
    """A Gibbs density cannot be normalized on the declared domain."""


class DivergentMoment(ArtifactError):
    """A moment needed by the certificates is infinite."""


class Degenerate(ArtifactError):
    """The matrix of gradient moments is not positive definite."""


class NoSpectralGap(ArtifactError):
    """The smallest nonzero eigenvalue is numerically zero."""


class WeightBelowOne(ArtifactError, ValueError):
    """A weighted-Poincare weight falls below one somewhere on the grid."""


class MeanNotZero(ArtifactError, ValueError):
    """An operator defined on mean-zero functions received a nonzero mean."""


class ZeroPoincare(ArtifactError, ValueError):
    """A Poincare constant that must be positive is not."""


class ZeroInitial(ArtifactError):
    """The initial time-averaged norm vanishes."""


class IllConditioned(ArtifactError):
    """The projector onto wave-like functions is numerically singular."""


class SourceNotOrthogonal(ArtifactError, ValueError):
    """A source meant to be orthogonal to wave-like functions is not."""


class CFLViolation(ArtifactError, ValueError):
    """The transport time step exceeds the stability limit."""


class Blowup(ArtifactError):
    """A stochastic trajectory left the admissible range."""


class NoDecay(ArtifactError):
    """A fitted decay rate is statistically indistinguishable from zero."""
