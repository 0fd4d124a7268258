"""Exception hierarchy shared by all hdcal modules."""


class HdcalError(Exception):
    """Base class for every error raised by hdcal."""


class InvalidInput(HdcalError, ValueError):
    pass


class InsufficientReplicates(InvalidInput):
    pass


class SingularSystem(HdcalError, ArithmeticError):
    pass


class DegenerateResidual(HdcalError, ArithmeticError):
    def __init__(self, index, value):
        super().__init__(f"non-positive node-wise residual variance {value:.3g} at column {index}")
        self.index = index
        self.value = value


class NotConverged(HdcalError, RuntimeError):
    pass


class ScenarioUnstable(HdcalError, RuntimeError):
    def __init__(self, n_failed, n_total):
        super().__init__(f"{n_failed} of {n_total} Monte Carlo replicates failed")
        self.n_failed = n_failed
        self.n_total = n_total
