"""Exception types shared across the toolkit.

Plain ``ValueError`` is used for ordinary parameter/shape mistakes; the
classes below mark conditions that callers may want to handle with a
policy (e.g. substituting a zero correlation for a degenerate segment).
"""


class DegenerateSignalError(ValueError):
    """Signal has no variance (constant), so it cannot be standardized."""


class DegenerateCorrelationError(ValueError):
    """Pearson correlation is undefined (a constant input)."""


class DegenerateBatchError(ValueError):
    """A training batch has constant targets; the batch must be skipped."""


class DegenerateClassifierError(ValueError):
    """LDA class means coincide; no discriminant direction exists."""


class DegenerateTestError(ValueError):
    """A t-test has zero variance everywhere; the statistic is undefined."""


class SingularMatrixError(ValueError):
    """An unregularized solve hit a rank-deficient matrix."""


class AlignmentError(ValueError):
    """Cross-correlation alignment found no usable overlap."""


class TuningError(RuntimeError):
    """Hyperparameter tuning produced no usable validation score."""


class IngestionError(RuntimeError):
    """A dataset directory is missing files or has inconsistent metadata."""
