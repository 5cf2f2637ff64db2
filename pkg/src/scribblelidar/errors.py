"""Exception hierarchy.

Every error carries a ``category`` string used by the command line front-end
to print a categorized message and pick an exit code.
"""

from __future__ import annotations


class ScribbleLidarError(Exception):
    category = "error"


# -- data model ---------------------------------------------------------------


class DataError(ScribbleLidarError, ValueError):
    category = "data"


class LengthMismatch(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class UnnormalizedDistribution(DataError):
    pass


class UnknownRawId(DataError, KeyError):
    def __init__(self, raw_id: int, index: int):
        self.raw_id = int(raw_id)
        self.index = int(index)
        super().__init__(f"raw label id {self.raw_id} at index {self.index} is not in the class map")

    def __str__(self) -> str:
        return self.args[0]


class MissingInverse(DataError, KeyError):
    def __init__(self, train_id: int):
        self.train_id = int(train_id)
        super().__init__(f"train id {self.train_id} has no inverse raw id")

    def __str__(self) -> str:
        return self.args[0]


# -- io -----------------------------------------------------------------------


class IoFailure(ScribbleLidarError, OSError):
    category = "io"


class TruncatedFile(IoFailure):
    pass


class MissingDirectory(IoFailure):
    pass


class UnpairedFrame(IoFailure):
    pass


# -- geometry -----------------------------------------------------------------


class EmptyFrame(DataError):
    pass


class DegenerateRange(EmptyFrame):
    pass


# -- model / training ---------------------------------------------------------


class ModelError(ScribbleLidarError):
    category = "model"


class ShapeMismatch(ModelError, ValueError):
    pass


class EmptyMask(ModelError, ValueError):
    pass


class DivergenceDetected(ModelError, ArithmeticError):
    pass


# -- metrics ------------------------------------------------------------------


class MetricError(ScribbleLidarError, ValueError):
    category = "metric"


class NoEvaluableClass(MetricError):
    pass


class ZeroBaseline(MetricError, ZeroDivisionError):
    pass


class EmptyPseudoSet(MetricError):
    pass


# -- synthetic data / config --------------------------------------------------


class UnreachableTarget(DataError):
    pass


class ConfigError(ScribbleLidarError, ValueError):
    category = "config"
