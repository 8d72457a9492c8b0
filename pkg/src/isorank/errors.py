class IsorankError(Exception):
    pass


class InvalidArgument(IsorankError, ValueError):
    pass


class GenerationFailed(IsorankError):
    pass


class BudgetExhausted(IsorankError):
    pass


class NumericNonconvergence(IsorankError):
    pass


class InsufficientObservations(IsorankError):
    """Some cell lacks the observations a reduction needs."""

    def __init__(self, cell, have, need):
        super().__init__(f"cell {cell} has {have} observations, needs {need}")
        self.cell = cell
        self.have = have
        self.need = need
