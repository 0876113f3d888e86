"""Exception hierarchy shared by all modules."""


class ApfrontError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class ConfigError(ApfrontError):
    """Malformed experiment configuration (CLI exit code 2)."""


# potentials
class NonPositiveInfimum(ApfrontError):
    pass


class EmptyPeriod(ApfrontError):
    pass


# cocycle
class InconclusiveHyperbolicity(ApfrontError):
    """Growth detected but the invariant splitting could not be certified."""


# spectrum
class NoConvergence(ApfrontError):
    pass


# frontspeed
class NotPositive(ApfrontError):
    pass


class ResidualTooLarge(ApfrontError):
    pass


class EdgeFailure(ApfrontError):
    pass


class MinimizerBracketFailure(ApfrontError, UserWarning):
    """Issued as a warning: E/L is monotone on the search interval."""


# kpp_sim
class RangeViolation(ApfrontError):
    pass


class BoundaryContamination(ApfrontError):
    pass


class NoEpsilon(ApfrontError):
    pass


class WeightVerificationFailed(ApfrontError):
    def __init__(self, message, sites=()):
        super().__init__(message)
        self.sites = list(sites)


class SandwichViolation(ApfrontError):
    pass


class LevelNeverReached(ApfrontError):
    pass


# kam_reduce
class SmallDivisor(ApfrontError):
    def __init__(self, k, value):
        super().__init__(f"small divisor {value:.3e} at mode k={tuple(k)}")
        self.k = tuple(k)
        self.value = value


class SmallnessViolated(ApfrontError):
    pass


class DivergedIteration(ApfrontError):
    pass


class HyperbolicLimit(ApfrontError):
    pass


class ResonanceEncountered(ApfrontError):
    pass


class NotParabolic(ApfrontError):
    pass


class ConjugacyTooFar(ApfrontError):
    pass
