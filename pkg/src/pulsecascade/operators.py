"""Time-dependent operators assembled from constant matrices.

The cascaded Hamiltonians and jump operators are fixed operator blocks weighted
by scalar schedules, so each builder keeps its constant matrices and only
evaluates the scalar weights per time step. Every builder can return either the
dense matrix or its excitation-sector blocks (see :mod:`.sectors`).
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError
from .fock import CompositeSpace, OperatorMatrix
from .sectors import SectorLayout


class TimeOperator:
    """Operator-valued function of time on a fixed composite space."""

    space: CompositeSpace

    def dense(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def blocks(self, t: float, layout: SectorLayout, shift: int) -> np.ndarray:
        return layout.blocks(self.dense(t), shift)

    def __call__(self, t: float) -> OperatorMatrix:
        return OperatorMatrix(self.space, self.dense(t))

    def __add__(self, other: "TimeOperator") -> "TimeOperator":
        return OperatorSum([self, other])


class ConstantOperator(TimeOperator):
    def __init__(self, op: OperatorMatrix):
        self.space = op.space
        self.op = op
        self._cache: dict = {}

    def dense(self, t):
        return self.op.data

    def blocks(self, t, layout, shift):
        key = (layout, shift)
        if key not in self._cache:
            self._cache[key] = layout.blocks(self.op.data, shift)
        return self._cache[key]


class LinearCombination(TimeOperator):
    """``sum_k w_k(t) A_k`` with constant ``A_k``.

    Args:
        ops: the constant operators.
        weights: maps ``t`` to the sequence of complex weights, one per operator.
    """

    def __init__(self, ops: Sequence[OperatorMatrix], weights: Callable[[float], Sequence[complex]]):
        if not ops:
            raise ConfigurationError("a linear combination needs at least one operator")
        self.space = ops[0].space
        if any(op.space != self.space for op in ops):
            raise ConfigurationError("operators live on different spaces")
        self.ops = list(ops)
        self._stack = np.stack([op.data for op in ops])
        self.weights = weights
        self._cache: dict = {}

    def coefficients(self, t: float) -> np.ndarray:
        w = np.asarray(self.weights(t), dtype=complex)
        if w.shape != (len(self.ops),):
            raise ConfigurationError(f"expected {len(self.ops)} weights, got shape {w.shape}")
        return w

    def dense(self, t):
        return np.tensordot(self.coefficients(t), self._stack, axes=1)

    def blocks(self, t, layout, shift):
        key = (layout, shift)
        stack = self._cache.get(key)
        if stack is None:
            stack = np.stack([layout.blocks(op.data, shift) for op in self.ops])
            self._cache[key] = stack
        return np.tensordot(self.coefficients(t), stack, axes=1)


class KerrOperator(TimeOperator):
    """``K (c(t)^dag c(t))^2`` for a time-dependent lowering operator ``c(t)``."""

    def __init__(self, kerr: float, lowering: TimeOperator):
        self.space = lowering.space
        self.kerr = float(kerr)
        self.lowering = lowering

    def dense(self, t):
        c = self.lowering.dense(t)
        n = c.conj().T @ c
        return self.kerr * (n @ n)

    def blocks(self, t, layout, shift):
        if shift != 0:
            raise ConfigurationError("a Kerr term conserves excitation number")
        cb = self.lowering.blocks(t, layout, 1)
        n = np.zeros((layout.S, layout.D, layout.D), dtype=complex)
        # c maps sector k+1 to sector k, so c^dag c acts within sector k+1
        n[1:] = np.matmul(cb.conj().transpose(0, 2, 1), cb)
        return self.kerr * np.matmul(n, n)


class OperatorSum(TimeOperator):
    def __init__(self, parts: Sequence[TimeOperator]):
        self.parts = [p for p in parts if p is not None]
        if not self.parts:
            raise ConfigurationError("empty operator sum")
        self.space = self.parts[0].space

    def dense(self, t):
        return sum(p.dense(t) for p in self.parts)

    def blocks(self, t, layout, shift):
        return sum(p.blocks(t, layout, shift) for p in self.parts)


class FunctionOperator(TimeOperator):
    """Wraps a plain callable returning a matrix or :class:`OperatorMatrix`."""

    def __init__(self, func: Callable[[float], object], space: CompositeSpace):
        self.func = func
        self.space = space

    def dense(self, t):
        out = self.func(t)
        return out.data if isinstance(out, OperatorMatrix) else np.asarray(out, dtype=complex)


def as_time_operator(obj, space: CompositeSpace) -> TimeOperator:
    if isinstance(obj, TimeOperator):
        return obj
    if isinstance(obj, OperatorMatrix):
        return ConstantOperator(obj)
    if callable(obj):
        return FunctionOperator(obj, space)
    return ConstantOperator(OperatorMatrix(space, obj))
