"""Exception types raised across the package."""


class LocalizationError(Exception):
    """Base class for all package errors."""


class ScenarioError(LocalizationError):
    """Invalid scenario construction or a connectivity requirement not met."""


class SingularGeometry(LocalizationError):
    """Measurement geometry does not determine a unique position."""


class NoConvergence(LocalizationError):
    """Iterative solver exhausted its iteration budget."""


class DegenerateAnchors(LocalizationError):
    """Anchors are (nearly) collinear or coplanar and cannot fix a frame."""


class AllGroupsFailed(LocalizationError):
    pass


class MissingPosition(LocalizationError):
    pass


class DisconnectedGraph(LocalizationError):
    pass


class GridTooLarge(LocalizationError):
    pass


class NumericalUnderflow(LocalizationError):
    pass


class ParticleCollapse(LocalizationError):
    """Effective sample size fell below 2."""


class SingularCovariance(LocalizationError):
    pass


class TooManySources(LocalizationError):
    pass


class PhaseOutOfRange(LocalizationError):
    pass


class ParallelBearings(LocalizationError):
    pass


class EmptyMap(LocalizationError):
    pass


class NoSharedAps(LocalizationError):
    pass


class ZeroEnergy(LocalizationError):
    pass


class ZeroEquivalentBandwidth(LocalizationError):
    pass


class EmptyResolvedSet(LocalizationError):
    pass


class ConfigError(LocalizationError):
    """Experiment configuration failed validation.

    ``problems`` maps a dotted field path to a human readable message.
    """

    def __init__(self, problems):
        self.problems = dict(problems)
        lines = [f"{k}: {v}" for k, v in self.problems.items()]
        super().__init__("invalid config:\n  " + "\n  ".join(lines))
