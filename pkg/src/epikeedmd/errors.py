"""Exception and warning types raised across the package."""


class KeedmdError(Exception):
    """Base class for all errors raised by epikeedmd."""


class DimensionMismatch(KeedmdError, ValueError):
    pass


class ComplexEigenvalues(KeedmdError):
    pass


class DefectiveMatrix(KeedmdError):
    pass


class NotHurwitz(KeedmdError):
    pass


class EmptyDataset(KeedmdError, ValueError):
    pass


class TooShort(KeedmdError, ValueError):
    pass


class NonFiniteSample(KeedmdError, ValueError):
    pass


class DivergedTraining(KeedmdError, FloatingPointError):
    pass


class AlreadyDiscrete(KeedmdError):
    pass


class HorizonZero(KeedmdError, ValueError):
    pass


class InvalidQP(KeedmdError, ValueError):
    pass


class NotStabilizable(KeedmdError):
    pass


class RiccatiNoConvergence(KeedmdError):
    pass


class SimDiverged(KeedmdError):
    """The simulated state left the safety box."""


class ConfigInvalid(KeedmdError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class FormatError(KeedmdError, ValueError):
    """A serialized blob could not be decoded."""


class RankDeficientWarning(UserWarning):
    """Regression design is (numerically) rank deficient; a ridge floor was applied."""


class NoConvergenceWarning(UserWarning):
    pass
