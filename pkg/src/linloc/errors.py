"""Exception hierarchy shared by every module."""


class LocalizationError(Exception):
    """Base class for all errors raised by linloc."""


class InvalidInput(LocalizationError, ValueError):
    pass


class NegativeSquaredVolume(LocalizationError):
    """Distances are inconsistent: a Cayley-Menger determinant has the wrong sign."""


class PreconditionViolated(LocalizationError):
    pass


class DegenerateAnchors(LocalizationError):
    pass


class InconsistentRanges(LocalizationError):
    pass


class IncompleteTriangulation(LocalizationError):
    def __init__(self, agents):
        self.agents = list(agents)
        super().__init__(f"no triangulation set for agents {self.agents}")


class NotAbsorbing(LocalizationError):
    """(I - P) is singular: some agent has no path to an anchor."""


class NumericalFailure(LocalizationError):
    pass


class ScheduleError(LocalizationError):
    pass


class DegenerateMeasurement(LocalizationError):
    pass


class DegenerateWeights(LocalizationError):
    pass


class ConfigError(LocalizationError):
    def __init__(self, path, detail):
        self.path = path
        self.detail = detail
        super().__init__(f"{path}: {detail}")


class IoError(LocalizationError, OSError):
    """Writing experiment outputs failed."""
