"""Exception hierarchy shared by all modules."""


class MultistageMIError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(MultistageMIError, ValueError):
    """A Cholesky pivot fell at or below the positive-definiteness threshold."""


class SingularDesign(MultistageMIError, ValueError):
    """The (ridged) cross-product matrix of a regression design is singular."""


class TooFewObserved(MultistageMIError, ValueError):
    """Not enough observed rows to fit an imputation model."""


class EmptyColumn(MultistageMIError, ValueError):
    """An imputation target has no observed values at all."""


class MissingCellRead(MultistageMIError, LookupError):
    """Attempted to read the value of a cell that is not observed."""


class TooFewDatasets(MultistageMIError, ValueError):
    """Pooling needs at least two datasets (or two nests)."""


class UnreachableTarget(MultistageMIError, ValueError):
    """The requested missing-cell rate cannot be produced by the pattern set."""


class SchemaError(MultistageMIError, ValueError):
    """Column layout, wave tags or roles are inconsistent."""


class RunFailed(MultistageMIError, RuntimeError):
    """A simulation cell exceeded the tolerated share of failed replications."""
