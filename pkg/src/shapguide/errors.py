"""Exception hierarchy.

Everything a caller can trigger with bad input derives from
:class:`ShapGuideError` (CLI exit code 1). :class:`InvariantViolation` marks a
broken internal guarantee (CLI exit code 2).
"""


class ShapGuideError(ValueError):
    """Base class for user-facing errors."""


class InvariantViolation(RuntimeError):
    """An internal guarantee (e.g. SHAP local accuracy) did not hold."""


# dataset
class MissingColumn(ShapGuideError):
    pass


class NonNumericCell(ShapGuideError):
    def __init__(self, row, col, text):
        self.row, self.col, self.text = row, col, text
        super().__init__(f"non-numeric or non-finite cell {text!r} at row {row}, column {col!r}")


class EmptyFile(ShapGuideError):
    pass


class NonBinaryTarget(ShapGuideError):
    pass


class DegenerateSplit(ShapGuideError):
    pass


class InvalidShape(ShapGuideError):
    pass


class ConstantColumn(ShapGuideError):
    pass


# models / attribution
class SchemaMismatch(ShapGuideError):
    pass


class MalformedDocument(ShapGuideError):
    pass


class ZeroCover(ShapGuideError):
    pass


class TooManyFeatures(ShapGuideError):
    pass


class TooFewRows(ShapGuideError):
    pass


class DimensionMismatch(ShapGuideError):
    pass


class DivergedLoss(ShapGuideError):
    pass


# metrics
class LengthMismatch(ShapGuideError):
    pass


class ConstantTarget(ShapGuideError):
    pass


class SingleClass(ShapGuideError):
    pass


class BadK(ShapGuideError):
    pass


# tuning / experiment
class DegenerateFolds(ShapGuideError):
    pass


class ConfigError(ShapGuideError):
    pass
