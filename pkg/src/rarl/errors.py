"""Exception types raised across the package."""


class RarlError(ValueError):
    pass


class MismatchedIdSets(RarlError):
    pass


class DegenerateLength(RarlError):
    pass


class DegenerateInput(RarlError):
    pass


class DuplicateIds(RarlError):
    pass


class EmptyEntries(RarlError):
    pass


class NonFiniteValue(RarlError):
    pass


class GroupTooSmall(RarlError):
    pass


class DistributionMismatch(RarlError):
    pass


class InconsistentAction(RarlError):
    pass


class ConstructionFailed(RarlError):
    pass


class EmptyEvalSet(RarlError):
    pass


class ConfigInvalid(RarlError):
    pass


class NonFiniteGradient(ArithmeticError):
    """Raised when a policy update would apply a NaN/inf gradient."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
