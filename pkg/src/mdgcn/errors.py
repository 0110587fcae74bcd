"""Exception hierarchy shared across the pipeline."""


class MDGCNError(Exception):
    """Base class for every error raised by this package."""


class FormatError(MDGCNError, ValueError):
    pass


class LengthError(MDGCNError, ValueError):
    pass


class DataError(MDGCNError, ValueError):
    pass


class ShapeError(MDGCNError, ValueError):
    pass


class SamplingError(MDGCNError, ValueError):
    pass


class ParameterError(MDGCNError, ValueError):
    pass


class ContractError(MDGCNError, ValueError):
    """Inputs violate a documented precondition (shapes, symmetry, ...)."""


class TrainingSetupError(MDGCNError, ValueError):
    pass


class NumericError(MDGCNError, ArithmeticError):
    """A non-finite or out-of-domain value appeared during computation."""


class EvaluationError(MDGCNError, ValueError):
    pass


class PaletteError(MDGCNError, ValueError):
    pass
