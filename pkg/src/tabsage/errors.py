"""Exception hierarchy for the tabsage package.

Every error raised on a contract violation derives from TabsageError so the
command line can catch one type and exit with a single diagnostic line.
"""


class TabsageError(Exception):
    """Base class for all tabsage errors."""


# --- dataset ---------------------------------------------------------------

class MissingFile(TabsageError):
    pass


class SchemaMismatch(TabsageError):
    pass


class ParseError(TabsageError):
    def __init__(self, row: int, column: str, message: str):
        super().__init__(f"row {row}, column {column!r}: {message}")
        self.row = row
        self.column = column


class MissingValue(TabsageError):
    def __init__(self, row: int, column: str):
        super().__init__(f"row {row}, column {column!r}: missing value")
        self.row = row
        self.column = column


class EmptyData(TabsageError):
    pass


class InvalidRecord(TabsageError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class DivisionByZero(TabsageError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class EmptyTable(TabsageError):
    pass


class TooFewRecords(TabsageError):
    pass


class UnknownGroup(TabsageError):
    pass


class InvalidConfigFile(TabsageError):
    pass


# --- knn graph -------------------------------------------------------------

class KTooLarge(TabsageError):
    pass


class EmptyFeatures(TabsageError):
    pass


class IndexOutOfRange(TabsageError):
    pass


# --- autodiff --------------------------------------------------------------

class ShapeMismatch(TabsageError):
    pass


class SingleRowTrainBatch(TabsageError):
    pass


class InvalidRate(TabsageError):
    pass


class IsolatedNode(TabsageError):
    pass


class EmptyMask(TabsageError):
    pass


class NonScalarLoss(TabsageError):
    pass


class DoubleBackward(TabsageError):
    pass


class NonFiniteValue(TabsageError):
    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op {op!r}")
        self.op = op


# --- model / training ------------------------------------------------------

class InvalidConfig(TabsageError):
    pass


class CheckpointError(TabsageError):
    pass


class NonFiniteGradient(TabsageError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class DivergedLoss(TabsageError):
    pass


class EmptyTrainSet(TabsageError):
    pass


# --- random forest ---------------------------------------------------------

class DimensionMismatch(TabsageError):
    pass


class UnfittedForest(TabsageError):
    pass


class TooFewRows(TabsageError):
    pass


# --- metrics ---------------------------------------------------------------

class LengthMismatch(TabsageError):
    pass


class ZeroVarianceActuals(TabsageError):
    pass


class ZeroActual(TabsageError):
    def __init__(self, index: int):
        super().__init__(f"actual value at index {index} is zero; MAPE undefined")
        self.index = index


# --- cli -------------------------------------------------------------------

class NoResultsFound(TabsageError):
    pass
