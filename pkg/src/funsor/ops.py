"""Pointwise operation tags and reduction monoid tags.

The term language lifts a fixed set of scalar operations over typing
contexts, and reduces variables with one of three monoids.  The tags here
carry arity, the numpy implementation, and the typing rule; the term layer
and the atom layers both dispatch on them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .domains import Bounded, FunsorType, RealArray
from .errors import FunsorTypeError


def _same_real(name: str, a: FunsorType, b: FunsorType) -> FunsorType:
    if not (isinstance(a, RealArray) and isinstance(b, RealArray) and a == b):
        raise FunsorTypeError(
            f"{name} needs two real operands of one shape, got {a.pretty()} and {b.pretty()}"
        )
    return a


def _one_real(name: str, a: FunsorType) -> FunsorType:
    if not isinstance(a, RealArray):
        raise FunsorTypeError(f"{name} needs a real operand, got {a.pretty()}")
    return a


def _take_type(name: str, arr: FunsorType, idx: FunsorType) -> FunsorType:
    if not (isinstance(arr, RealArray) and arr.shape):
        raise FunsorTypeError(
            f"take needs a real array with a leading axis, got {arr.pretty()}"
        )
    if not isinstance(idx, Bounded) or idx.size != arr.shape[0]:
        raise FunsorTypeError(
            f"take index must be Z{arr.shape[0]}, got {idx.pretty() if hasattr(idx, 'pretty') else idx!r}"
        )
    return RealArray(arr.shape[1:])


@dataclass(frozen=True)
class LiftedOp:
    """A scalar operation lifted pointwise over typing contexts."""

    name: str
    arity: int
    fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    def result_type(self, *arg_types: FunsorType) -> FunsorType:
        if len(arg_types) != self.arity:
            raise FunsorTypeError(
                f"{self.name} takes {self.arity} arguments, got {len(arg_types)}"
            )
        if self.name == "take":
            return _take_type(self.name, *arg_types)
        if self.arity == 1:
            return _one_real(self.name, *arg_types)
        return _same_real(self.name, *arg_types)

    def apply(self, *arrays: np.ndarray) -> np.ndarray:
        # -inf is a legal log weight and NaN must flow through untouched, so
        # floating warnings are silenced rather than raised.
        with np.errstate(all="ignore"):
            return self.fn(*arrays)

    def __repr__(self) -> str:
        return self.name


ADD = LiftedOp("add", 2, np.add)
SUB = LiftedOp("sub", 2, np.subtract)
MUL = LiftedOp("mul", 2, np.multiply)
NEG = LiftedOp("neg", 1, np.negative)
EXP = LiftedOp("exp", 1, np.exp)
LOG = LiftedOp("log", 1, np.log)
LOGADDEXP = LiftedOp("logaddexp", 2, np.logaddexp)
MAX = LiftedOp("max", 2, np.maximum)
MIN = LiftedOp("min", 2, np.minimum)
TAKE = LiftedOp("take", 2, None)

LIFTED_OPS = {
    op.name: op for op in (ADD, SUB, MUL, NEG, EXP, LOG, LOGADDEXP, MAX, MIN, TAKE)
}


@dataclass(frozen=True)
class ReduceOp:
    """A reduction monoid tag.

    ``logaddexp`` folds a bounded variable with log-sum-exp and denotes the
    log-integral over a real variable; ``add`` and ``max`` fold bounded
    variables only.  ``(logaddexp, add)`` is the sum-product semiring in log
    space and ``(max, add)`` the max-product one.
    """

    name: str

    def allows_real(self) -> bool:
        return self.name == "logaddexp"

    def __repr__(self) -> str:
        return self.name


LOGADDEXP_REDUCE = ReduceOp("logaddexp")
ADD_REDUCE = ReduceOp("add")
MAX_REDUCE = ReduceOp("max")

REDUCE_OPS = {
    op.name: op for op in (LOGADDEXP_REDUCE, ADD_REDUCE, MAX_REDUCE)
}
