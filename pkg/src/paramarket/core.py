"""Shared parameter, dataset, and loss primitives.

Everything downstream (broker, market engine, analytics) works on the three
value types defined here: a flat parameter vector, a labeled dataset, and a
loss convention. All types are immutable after construction and every
operation is a pure function, so they are safe to share across threads.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "DivergenceError",
    "ParameterVector",
    "LabeledDataset",
    "LossSpec",
    "empirical_loss",
    "loss_gradient",
    "gradient_step",
    "merge",
]


class DimensionMismatchError(ValueError):
    """Two objects that must share a dimension do not."""

    def __init__(self, expected: int, actual: int, context: str = ""):
        self.expected = expected
        self.actual = actual
        where = f" ({context})" if context else ""
        super().__init__(
            f"dimension mismatch{where}: expected {expected}, got {actual}"
        )


class DivergenceError(ArithmeticError):
    """A gradient update produced non-finite values (step size too large)."""

    def __init__(self, message: str, round_index: int | None = None):
        self.round_index = round_index
        if round_index is not None:
            message = f"{message} (round {round_index})"
        super().__init__(message)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """A flat real parameter set; the commodity that gets traded and merged."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError(f"parameters must be a non-empty 1-D vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("parameters contain non-finite entries")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def dimension(self) -> int:
        return self.values.size

    def require_dimension(self, expected: int, context: str = "") -> None:
        if self.dimension != expected:
            raise DimensionMismatchError(expected, self.dimension, context)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Design matrix plus labels: inputs is n-by-d, labels has length n."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"inputs must be a non-empty n-by-d matrix, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DimensionMismatchError(x.shape[0], y.shape[0], "label count vs input rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "inputs", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def dimension(self) -> int:
        return self.inputs.shape[1]


class LossSpec(Enum):
    """Loss convention: plain sum of squared residuals, or the per-sample mean."""

    SUM_OF_SQUARES = "sum-of-squares"
    MEAN_PER_SAMPLE = "mean-per-sample"


def empirical_loss(
    params: ParameterVector,
    data: LabeledDataset,
    spec: LossSpec = LossSpec.SUM_OF_SQUARES,
) -> float:
    """Squared-residual loss of a linear predictor on a dataset.

    SUM_OF_SQUARES returns ``||X theta - Y||^2``; MEAN_PER_SAMPLE divides by n.
    """
    params.require_dimension(data.dimension, "parameters vs dataset columns")
    r = data.inputs @ params.values - data.labels
    loss = float(r @ r)
    if spec is LossSpec.MEAN_PER_SAMPLE:
        loss /= data.n_samples
    return loss


def loss_gradient(
    params: ParameterVector,
    data: LabeledDataset,
    spec: LossSpec = LossSpec.SUM_OF_SQUARES,
) -> np.ndarray:
    """Gradient of `empirical_loss` at ``params``: ``2 X^T (X theta - Y)``, scaled per the loss convention."""
    params.require_dimension(data.dimension, "parameters vs dataset columns")
    r = data.inputs @ params.values - data.labels
    g = 2.0 * (data.inputs.T @ r)
    if spec is LossSpec.MEAN_PER_SAMPLE:
        g /= data.n_samples
    return g


def gradient_step(
    params: ParameterVector,
    data: LabeledDataset,
    step_size: float,
    spec: LossSpec = LossSpec.SUM_OF_SQUARES,
) -> ParameterVector:
    """One plain gradient-descent update on the empirical loss.

    Raises DivergenceError if the update overflows to non-finite values; the
    market engine re-raises this with the offending round attached.
    """
    if not step_size > 0:
        raise ValueError(f"step size must be positive, got {step_size}")
    g = loss_gradient(params, data, spec)
    new = params.values - step_size * g
    if not np.all(np.isfinite(new)):
        raise DivergenceError("gradient update produced non-finite parameters")
    return ParameterVector(new)


def merge(buyer: ParameterVector, seller: ParameterVector, weight: float) -> ParameterVector:
    """Convex combination ``(1 - weight) * buyer + weight * seller``.

    ``weight`` is the seller's share and must lie in (0, 1]; weight 1 replaces
    the buyer's parameters outright.
    """
    seller.require_dimension(buyer.dimension, "seller vs buyer parameters")
    if not (0.0 < weight <= 1.0):
        raise ValueError(f"merge weight must lie in (0, 1], got {weight}")
    return ParameterVector((1.0 - weight) * buyer.values + weight * seller.values)
