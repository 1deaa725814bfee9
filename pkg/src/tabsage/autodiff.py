"""Reverse-mode automatic differentiation over 2-D float64 tensors.

A Tape records operations in execution order while active; backward replays
them in exact reverse order, accumulating gradients additively at fan-out.
Every op validates its output for NaN or infinity and fails loudly naming the
op. The active tape is thread-local so independent trainings can run in
parallel threads.
"""

from __future__ import annotations

import threading
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import (
    DoubleBackward,
    EmptyMask,
    IndexOutOfRange,
    InvalidConfig,
    InvalidRate,
    IsolatedNode,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
    SingleRowTrainBatch,
)

_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A 2-D float64 array with an optional gradient of the same shape."""

    __slots__ = ("values", "requires_grad", "grad", "_tape")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Execution-order record of differentiable ops.

    Use as a context manager around the forward pass; call backward(loss)
    once afterwards. Ops run while no tape is active are not recorded, which
    is how evaluation passes skip gradient bookkeeping.
    """

    def __init__(self):
        self._entries: list[tuple[str, tuple[Tensor, ...], Tensor, Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def _record(self, name, inputs, out, backward_fn) -> None:
        self._entries.append((name, inputs, out, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every tracked tensor reachable from loss."""
        if self._consumed:
            raise DoubleBackward("this tape has already been replayed")
        if not isinstance(loss, Tensor) or loss.shape != (1, 1):
            raise NonScalarLoss("backward requires a (1, 1) tensor")
        if loss._tape is not self:
            raise NonScalarLoss("loss was not produced under this tape")
        self._consumed = True
        participants: set[int] = set()
        tensors: list[Tensor] = []
        for _, inputs, out, _ in self._entries:
            for t in (*inputs, out):
                if t.requires_grad and id(t) not in participants:
                    participants.add(id(t))
                    tensors.append(t)
        for t in tensors:
            t.grad = np.zeros(t.values.shape, dtype=np.float64)
        loss.grad = np.ones((1, 1), dtype=np.float64)
        for _, _, out, backward_fn in reversed(self._entries):
            backward_fn(out.grad)
        # Drop the record so intermediate tensors and their closures free by
        # refcount instead of waiting on cycle collection; at thousands of
        # rows per tensor that lag is worth gigabytes.
        self._entries.clear()


def backward(loss: Tensor) -> None:
    """Replay the tape that produced `loss`."""
    if not isinstance(loss, Tensor) or loss._tape is None:
        raise NonScalarLoss("loss is not attached to a tape")
    loss._tape.backward(loss)


def _emit(name: str, out_values: np.ndarray, inputs: tuple[Tensor, ...], make_backward) -> Tensor:
    if not np.all(np.isfinite(out_values)):
        raise NonFiniteValue(name)
    out = Tensor(out_values)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape._record(name, inputs, out, make_backward())
    return out


# --- element and shape ops ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out_values = a.values @ b.values

    def make_backward():
        def bw(g):
            if a.requires_grad:
                a.grad += g @ b.values.T
            if b.requires_grad:
                b.grad += a.values.T @ g

        return bw

    return _emit("matmul", out_values, (a, b), make_backward)


def transpose(a: Tensor) -> Tensor:
    def make_backward():
        def bw(g):
            if a.requires_grad:
                a.grad += g.T

        return bw

    return _emit("transpose", a.values.T.copy(), (a,), make_backward)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"concat_cols rows differ: {a.shape} vs {b.shape}")
    split_at = a.shape[1]

    def make_backward():
        def bw(g):
            if a.requires_grad:
                a.grad += g[:, :split_at]
            if b.requires_grad:
                b.grad += g[:, split_at:]

        return bw

    return _emit("concat_cols", np.hstack([a.values, b.values]), (a, b), make_backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    if bias.shape != (1, x.shape[1]):
        raise ShapeMismatch(f"bias {bias.shape} does not broadcast over {x.shape}")

    def make_backward():
        def bw(g):
            if x.requires_grad:
                x.grad += g
            if bias.requires_grad:
                bias.grad += g.sum(axis=0, keepdims=True)

        return bw

    return _emit("add_bias", x.values + bias.values, (x, bias), make_backward)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0.0

    def make_backward():
        def bw(g):
            if x.requires_grad:
                x.grad += g * mask

        return bw

    return _emit("relu", np.where(mask, x.values, 0.0), (x,), make_backward)


def tsum(x: Tensor) -> Tensor:
    def make_backward():
        def bw(g):
            if x.requires_grad:
                x.grad += g[0, 0]

        return bw

    return _emit("tsum", np.array([[x.values.sum()]]), (x,), make_backward)


# --- batch normalization -------------------------------------------------------


class BatchNormState:
    """Learnable scale/shift plus running statistics for one normalized width."""

    def __init__(self, width: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones((1, width)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, width)), requires_grad=True)
        self.running_mean = np.zeros(width, dtype=np.float64)
        self.running_var = np.ones(width, dtype=np.float64)
        self.eps = float(eps)
        self.momentum = float(momentum)

    @property
    def width(self) -> int:
        return self.gamma.shape[1]


def _check_mode(mode: str) -> None:
    if mode not in ("train", "eval"):
        raise InvalidConfig(f"mode must be 'train' or 'eval', got {mode!r}")


def batch_norm(x: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Column-wise standardization with learnable affine terms.

    Train mode standardizes by the biased batch statistics and folds them
    into the running estimates; eval mode standardizes by the running
    estimates and never touches them.
    """
    _check_mode(mode)
    if x.shape[1] != state.width:
        raise ShapeMismatch(f"batch_norm width {state.width} vs input {x.shape}")
    gamma, beta = state.gamma, state.beta
    if mode == "train":
        if x.shape[0] < 2:
            raise SingleRowTrainBatch("train-mode batch_norm needs at least 2 rows")
        mu = x.values.mean(axis=0)
        var = x.values.var(axis=0)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.values - mu) * inv
        state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mu
        state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * var
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.values - state.running_mean) * inv
    out_values = gamma.values * xhat + beta.values

    def make_backward():
        if mode == "train":

            def bw(g):
                if gamma.requires_grad:
                    gamma.grad += (g * xhat).sum(axis=0, keepdims=True)
                if beta.requires_grad:
                    beta.grad += g.sum(axis=0, keepdims=True)
                if x.requires_grad:
                    gx = g * gamma.values
                    x.grad += inv * (
                        gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0)
                    )

        else:

            def bw(g):
                if gamma.requires_grad:
                    gamma.grad += (g * xhat).sum(axis=0, keepdims=True)
                if beta.requires_grad:
                    beta.grad += g.sum(axis=0, keepdims=True)
                if x.requires_grad:
                    x.grad += g * gamma.values * inv

        return bw

    return _emit("batch_norm", out_values, (x, gamma, beta), make_backward)


# --- dropout ---------------------------------------------------------------------


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: training scales kept entries by 1/(1-rate); eval is
    the identity and consumes no randomness."""
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise InvalidRate("train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)

    def make_backward():
        def bw(g):
            if x.requires_grad:
                x.grad += g * keep * scale

        return bw

    return _emit("dropout", x.values * keep * scale, (x,), make_backward)


# --- sparse fixed-matrix products --------------------------------------------------


def _sparse_matmul(name: str, matrix: sp.csr_matrix, matrix_t: sp.csr_matrix, x: Tensor) -> Tensor:
    if matrix.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"{name}: matrix {matrix.shape} vs input {x.shape}")

    def make_backward():
        def bw(g):
            if x.requires_grad:
                x.grad += matrix_t @ g

        return bw

    return _emit(name, matrix @ x.values, (x,), make_backward)


def neighbor_mean(h: Tensor, graph) -> Tensor:
    """Average each node's neighbor rows of h. The node itself is excluded
    because the graph has no self-loops."""
    if h.shape[0] != graph.n:
        raise ShapeMismatch(f"features have {h.shape[0]} rows, graph has {graph.n} nodes")
    degrees = np.diff(graph.indptr)
    if np.any(degrees == 0):
        raise IsolatedNode(f"node {int(np.argmin(degrees))} has no neighbors")
    matrix = graph.mean_matrix()
    matrix_t = getattr(graph, "_mean_matrix_t", None)
    if matrix_t is None:
        matrix_t = matrix.T.tocsr()
        graph._mean_matrix_t = matrix_t
    return _sparse_matmul("neighbor_mean", matrix, matrix_t, h)


def mean_pool(h: Tensor, pool: sp.csr_matrix, pool_t: sp.csr_matrix | None = None) -> Tensor:
    """Row-stochastic pooling: out[s] = mean of h over the rows of segment s."""
    if pool_t is None:
        pool_t = pool.T.tocsr()
    return _sparse_matmul("mean_pool", pool, pool_t, h)


# --- loss -----------------------------------------------------------------------


def mse_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error over the masked rows of a (n, 1) prediction."""
    if pred.shape[1] != 1:
        raise ShapeMismatch(f"predictions must be (n, 1), got {pred.shape}")
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if t.shape[0] != pred.shape[0]:
        raise ShapeMismatch(f"{pred.shape[0]} predictions vs {t.shape[0]} targets")
    m = np.asarray(mask, dtype=np.int64).reshape(-1)
    if m.size == 0:
        raise EmptyMask("loss mask selects no rows")
    if m.min() < 0 or m.max() >= pred.shape[0]:
        raise IndexOutOfRange("loss mask indexes outside the prediction rows")
    diff = pred.values[m, 0] - t[m]
    out_values = np.array([[np.mean(diff**2)]])

    unique_mask = bool(np.all(np.diff(m) > 0))

    def make_backward():
        def bw(g):
            if pred.requires_grad:
                contrib = (2.0 / m.size) * diff * g[0, 0]
                if unique_mask:
                    pred.grad[m, 0] += contrib
                else:
                    np.add.at(pred.grad[:, 0], m, contrib)

        return bw

    return _emit("mse_loss", out_values, (pred,), make_backward)
