"""Exception hierarchy shared across the package."""


class TodiError(Exception):
    pass


class InvalidInputError(TodiError, ValueError):
    """Malformed data: wrong shape, non-finite values, bad index."""


class InvalidParameterError(TodiError, ValueError):
    """A hyperparameter outside its admissible range."""


class UnsupportedKindError(InvalidParameterError):
    def __init__(self, kind, supported):
        self.kind = kind
        self.supported = tuple(supported)
        super().__init__(
            f"unsupported kind {kind!r}; supported kinds: {', '.join(self.supported)}"
        )


class DegenerateStatisticError(TodiError, ArithmeticError):
    """A statistic is undefined for the input (e.g. zero variance)."""


class DegenerateScenarioError(InvalidParameterError):
    pass


class OracleFailureError(TodiError, ArithmeticError):
    pass


class TrainingAbortedError(TodiError, RuntimeError):
    """Raised when the loss goes non-finite; carries the last finite trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)
