"""Exception hierarchy shared by all modules."""


class AnosovLabError(Exception):
    """Base class for library errors."""


class ConfigError(AnosovLabError, ValueError):
    """Invalid model or experiment configuration."""


class NumericalFailure(AnosovLabError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy answer."""


class NonConvergence(NumericalFailure):
    pass


class DegenerateFrame(NumericalFailure):
    pass


class ResolutionExceeded(NumericalFailure):
    pass


class NoIntersection(NumericalFailure):
    pass


class OutsidePatch(NumericalFailure):
    pass


class EmptyWindow(NumericalFailure):
    pass


class BudgetExceeded(NumericalFailure):
    pass


class NoCandidate(NumericalFailure):
    pass


class RootSplitFailure(NumericalFailure):
    pass
