"""Regression metrics used across the model and the baseline.

All functions accept 1-D array-likes of equal nonzero length and return plain
floats. Inputs are converted to float64 before any arithmetic.
"""

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, ZeroActual, ZeroVarianceActuals


@dataclass(frozen=True)
class MetricsReport:
    r2: float
    mae: float
    rmse: float
    mape: float
    n: int

    def as_dict(self) -> dict:
        return {
            "r2": self.r2,
            "mae": self.mae,
            "rmse": self.rmse,
            "mape": self.mape,
            "n": self.n,
        }


def _paired(predicted, actual) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    if p.shape[0] != a.shape[0]:
        raise LengthMismatch(
            f"predicted has {p.shape[0]} values, actual has {a.shape[0]}"
        )
    if p.shape[0] == 0:
        raise LengthMismatch("metrics need at least one value pair")
    return p, a


def r2(predicted, actual) -> float:
    """Coefficient of determination, 1 - SSE / SST."""
    p, a = _paired(predicted, actual)
    sst = float(np.sum((a - a.mean()) ** 2))
    if sst == 0.0:
        raise ZeroVarianceActuals("actuals are constant; R^2 undefined")
    sse = float(np.sum((a - p) ** 2))
    return 1.0 - sse / sst


def mae(predicted, actual) -> float:
    p, a = _paired(predicted, actual)
    return float(np.mean(np.abs(a - p)))


def rmse(predicted, actual) -> float:
    p, a = _paired(predicted, actual)
    return float(np.sqrt(np.mean((a - p) ** 2)))


def mape(predicted, actual) -> float:
    """Mean absolute percentage error, in percent."""
    p, a = _paired(predicted, actual)
    zero = np.flatnonzero(a == 0.0)
    if zero.size:
        raise ZeroActual(int(zero[0]))
    return float(100.0 * np.mean(np.abs((a - p) / a)))


def compute_metrics(predicted, actual) -> MetricsReport:
    p, a = _paired(predicted, actual)
    return MetricsReport(
        r2=r2(p, a), mae=mae(p, a), rmse=rmse(p, a), mape=mape(p, a), n=int(p.shape[0])
    )
