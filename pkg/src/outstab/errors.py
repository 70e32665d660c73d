"""Exception hierarchy shared by all outstab modules."""


class OutstabError(Exception):
    """Base class for every error raised by the toolkit."""


# dynsys
class StateBlowup(OutstabError):
    """The integrated state left the configured guard before the horizon."""

    def __init__(self, message, time=None, state=None):
        super().__init__(message)
        self.time = time
        self.state = state


class StepUnderflow(OutstabError):
    """The adaptive step controller stalled below the minimum step."""


class OutOfDomain(OutstabError):
    """A disturbance value falls outside its declared domain."""


# certkit
class MissingBundleField(OutstabError):
    """A certificate bundle lacks a function the requested theorem needs."""


class NonFiniteValue(OutstabError):
    """An evaluator returned NaN or infinity on the sample."""


# rates
class TailVanishes(OutstabError):
    """The numerical tail infimum of a rate function is (numerically) zero."""


class DegenerateInterval(OutstabError):
    """An extremization interval is empty."""


class ZeroFloor(OutstabError):
    """A rate floor evaluated to zero, so no finite time bound exists."""


class InverseUnavailable(OutstabError):
    """A rate function cannot be inverted at the requested value."""


# probes
class InsufficientEnsemble(OutstabError):
    """The ensemble is too small for the requested statistic."""


# dads
class HorizonTooShort(OutstabError):
    """The tail window of a simulation holds too few samples."""


# shell
class ConfigInvalid(OutstabError):
    """Scenario configuration failed schema validation."""
