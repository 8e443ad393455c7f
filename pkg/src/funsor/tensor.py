"""Dense arrays over contexts of bounded integer variables.

A ``TensorAtom`` stores one float64 cell per assignment of its context,
in row-major order with the context's axes first and the output type's
axes trailing.  ``-inf`` is a legal log weight; NaN propagates through
every operation.  Atoms whose output type is ``Bounded(n)`` hold integer
values ``0 .. n-1`` (stored as floats) and serve as substitution targets
for integer variables.
"""
from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .domains import Bounded, FunsorType, RealArray, TypeContext
from .errors import (
    BoundsError,
    ContextMismatch,
    FunsorTypeError,
    IndexOutOfRange,
    NameAbsent,
)
from .ops import LiftedOp, ReduceOp, TAKE


def logsumexp(data: np.ndarray, axis: int) -> np.ndarray:
    """Log-sum-exp along one axis with the max-shift trick.

    All-(-inf) slices give -inf rather than NaN; NaN inputs give NaN.
    """
    data = np.asarray(data, dtype=np.float64)
    with np.errstate(all="ignore"):
        peak = np.max(data, axis=axis, keepdims=True)
        shift = np.where(np.isfinite(peak), peak, 0.0)
        out = np.log(np.sum(np.exp(data - shift), axis=axis)) + np.squeeze(shift, axis)
        collapsed = np.squeeze(peak, axis)
        out = np.where(np.isneginf(collapsed), -np.inf, out)
        # max() swallows NaN only when another lane is +inf; reinstate it.
        nan_mask = np.any(np.isnan(data), axis=axis)
        if np.any(nan_mask):
            out = np.where(nan_mask, np.nan, out)
    return out


def _expected_shape(context: TypeContext, output: FunsorType) -> Tuple[int, ...]:
    bounds = tuple(tp.size for _, tp in context.entries)
    if isinstance(output, RealArray):
        return bounds + output.shape
    return bounds


class TensorAtom:
    """A dense table of float64 cells over a discrete context."""

    __slots__ = ("context", "data", "output", "_hash")

    def __init__(self, context: TypeContext, data, output: FunsorType = RealArray(())):
        if not isinstance(context, TypeContext):
            context = TypeContext(context)
        for name, tp in context.entries:
            if not isinstance(tp, Bounded):
                raise ContextMismatch(
                    f"tensor contexts hold bounded integers only; {name} is {tp.pretty()}"
                )
        arr = np.asarray(data, dtype=np.float64)
        expect = _expected_shape(context, output)
        if arr.shape != expect:
            raise FunsorTypeError(
                f"data shape {arr.shape} does not match context {context.pretty()}"
                f" with output {output.pretty()} (expected {expect})"
            )
        # A view keeps slicing zero-copy and leaves the caller's flags alone.
        arr = arr.view()
        if isinstance(output, Bounded):
            finite = np.isfinite(arr)
            ok = finite & (arr == np.floor(arr)) & (arr >= 0) & (arr < output.size)
            if not np.all(ok):
                raise IndexOutOfRange(
                    f"index-valued tensor holds values outside Z{output.size}"
                )
        arr.setflags(write=False)
        object.__setattr__(self, "context", context)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "output", output)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, name, value):
        raise AttributeError("TensorAtom is immutable")

    @property
    def out_shape(self) -> Tuple[int, ...]:
        return self.output.shape if isinstance(self.output, RealArray) else ()

    @property
    def out_rank(self) -> int:
        return len(self.out_shape)

    def is_scalar_output(self) -> bool:
        return isinstance(self.output, RealArray) and not self.output.shape

    def check(self) -> "TensorAtom":
        """Re-validate data shape against the declared types."""
        expect = _expected_shape(self.context, self.output)
        if self.data.shape != expect:
            raise FunsorTypeError(
                f"tensor data shape {self.data.shape} does not match declared"
                f" context {self.context.pretty()} and output {self.output.pretty()}"
            )
        return self

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorAtom):
            return NotImplemented
        if self.output != other.output or self.context != other.context:
            return False
        _, (a, b) = align_atoms([self, other])
        return bool(np.array_equal(a, b, equal_nan=True))

    def __hash__(self) -> int:
        if self._hash is None:
            key = (self.output, frozenset(self.context.entries))
            object.__setattr__(self, "_hash", hash(key))
        return self._hash

    def __repr__(self) -> str:
        return f"TensorAtom{self.context.pretty()}:{self.output.pretty()}"


def scalar_tensor(value: float) -> TensorAtom:
    return TensorAtom(TypeContext(), np.float64(value).reshape(()))


def zeros_tensor(context: TypeContext) -> TensorAtom:
    bounds = tuple(tp.size for _, tp in context.entries)
    return TensorAtom(context, np.zeros(bounds))


def index_tensor(context: TypeContext, data, bound: int) -> TensorAtom:
    return TensorAtom(context, data, Bounded(bound))


def _align_one(atom: TensorAtom, union: TypeContext, out_rank: int) -> np.ndarray:
    """View of the atom's data permuted and padded to the union layout."""
    names = atom.context.names
    present = [n for n, _ in union.entries if n in atom.context]
    perm = [names.index(n) for n in present]
    batch_rank = len(names)
    arr = atom.data.transpose(tuple(perm) + tuple(range(batch_rank, atom.data.ndim)))
    idx = []
    pos = 0
    for n, _ in union.entries:
        if n in atom.context:
            idx.append(slice(None))
            pos += 1
        else:
            idx.append(np.newaxis)
    idx.extend([np.newaxis] * (out_rank - atom.out_rank))
    idx.extend([slice(None)] * atom.out_rank)
    return arr[tuple(idx)]


def align_atoms(atoms: Sequence[TensorAtom]):
    """Broadcast-ready views of several atoms over their union context.

    Batch axes are matched by name in the union's canonical order; output
    axes stay trailing, left-padded with singleton dims to a common rank.
    """
    union = TypeContext()
    for a in atoms:
        union = union.union(a.context)
    out_rank = max((a.out_rank for a in atoms), default=0)
    return union, [_align_one(a, union, out_rank) for a in atoms]


def _broadcast_full(arr: np.ndarray, union: TypeContext, trailing: Tuple[int, ...]):
    bounds = tuple(tp.size for _, tp in union.entries)
    return np.broadcast_to(arr, bounds + trailing)


def tensor_apply(op: LiftedOp, atoms: Sequence[TensorAtom]) -> TensorAtom:
    """Lift a pointwise operation over the union of the atoms' contexts."""
    if op is TAKE or op.name == "take":
        return tensor_take(atoms[0], atoms[1])
    out_type = op.result_type(*(a.output for a in atoms))
    union, arrays = align_atoms(atoms)
    with np.errstate(all="ignore"):
        data = op.apply(*arrays)
    target = _expected_shape(union, out_type)
    if data.shape != target:
        data = np.broadcast_to(data, target)
    return TensorAtom(union, data, out_type)


def tensor_take(arr: TensorAtom, idx: TensorAtom) -> TensorAtom:
    """Gather along the leading output axis of ``arr`` at integer ``idx``."""
    out_type = TAKE.result_type(arr.output, idx.output)
    union, (a, i) = align_atoms([arr, idx])
    # align left-pads idx's output rank; collapse that padding back out.
    i = i.reshape(i.shape[: len(union)])
    a = _broadcast_full(a, union, arr.out_shape)
    i = _broadcast_full(i, union, ())
    grids = np.indices(tuple(tp.size for _, tp in union.entries), sparse=True)
    data = a[(*grids, i.astype(np.int64))]
    return TensorAtom(union, data, out_type)


def align(a: TensorAtom, b: TensorAtom):
    """Two-atom alignment: union context plus broadcast-ready views of both."""
    union, (va, vb) = align_atoms([a, b])
    return union, va, vb


def tensor_reduce(op: ReduceOp, atom: TensorAtom, name: str) -> TensorAtom:
    """Fold one context variable with the given monoid."""
    if not isinstance(atom.output, RealArray):
        raise FunsorTypeError(f"cannot reduce an index-valued tensor over {name!r}")
    axis = atom.context.names.index(name) if name in atom.context else None
    if axis is None:
        raise NameAbsent(f"{name!r} not in context {atom.context.pretty()}")
    if op.name == "logaddexp":
        data = logsumexp(atom.data, axis)
    elif op.name == "add":
        data = np.sum(atom.data, axis=axis)
    elif op.name == "max":
        data = np.max(atom.data, axis=axis)
    else:
        raise FunsorTypeError(f"unknown reduction {op!r}")
    return TensorAtom(atom.context.remove(name), data, atom.output)


def tensor_index(atom: TensorAtom, name: str, idx: TensorAtom) -> TensorAtom:
    """Substitute integer values for one context variable.

    ``idx`` is an index-valued atom over its own (bounded) context; shared
    names between the two contexts are matched pointwise.
    """
    tp = atom.context.typeof(name)
    if not isinstance(idx.output, Bounded) or idx.output.size != tp.size:
        raise FunsorTypeError(
            f"substituting {name!r}:{tp.pretty()} needs Z{tp.size} values,"
            f" got {idx.output.pretty()}"
        )
    rest = atom.context.remove(name)
    union = rest.union(idx.context)
    bounds = tuple(t.size for _, t in union.entries)

    # Move the substituted axis first, align the remaining batch axes with
    # the union, then gather with an advanced index on the first axis.
    names = atom.context.names
    axis = names.index(name)
    batch_rank = len(names)
    perm = (axis,) + tuple(i for i in range(batch_rank) if i != axis)
    arr = atom.data.transpose(perm + tuple(range(batch_rank, atom.data.ndim)))
    moved_names = [name] + [n for n in names if n != name]
    expander = [slice(None)]
    for n, _ in union.entries:
        expander.append(slice(None) if n in rest else np.newaxis)
    expander.extend([slice(None)] * atom.out_rank)
    # Reorder the non-substituted axes into union order before expanding.
    sub_perm = [0] + [moved_names.index(n) for n, _ in union.entries if n in rest]
    sub_perm += list(range(batch_rank, arr.ndim))
    arr = arr.transpose(sub_perm)[tuple(expander)]
    arr = np.broadcast_to(arr, (tp.size,) + bounds + atom.out_shape)

    iarr = _align_one(idx, union, 0)
    iarr = np.broadcast_to(iarr, bounds).astype(np.int64)
    grids = np.indices(bounds, sparse=True)
    data = arr[(iarr, *grids)]
    return TensorAtom(union, data, atom.output)


def tensor_slice(
    atom: TensorAtom, name: str, start: int, stop: int, stride: int
) -> TensorAtom:
    """Restrict one context axis to ``range(start, stop, stride)``.

    The variable keeps its name and is re-bounded to the number of
    selected positions.
    """
    tp = atom.context.typeof(name)
    if stride < 1 or start < 0 or stop > tp.size or start >= stop:
        raise BoundsError(
            f"slice [{start}:{stop}:{stride}] does not fit Z{tp.size} axis {name!r}"
        )
    count = len(range(start, stop, stride))
    axis = atom.context.names.index(name)
    sel = [slice(None)] * atom.data.ndim
    sel[axis] = slice(start, stop, stride)
    data = atom.data[tuple(sel)]
    entries = [
        (n, Bounded(count) if n == name else t) for n, t in atom.context.entries
    ]
    return TensorAtom(TypeContext(entries), data, atom.output)


def tensor_cat(name: str, atoms: Sequence[TensorAtom]) -> TensorAtom:
    """Concatenate along the axis of ``name``.

    Parts lacking ``name`` contribute one position.  All parts must share
    an output type; the other context entries are broadcast to their union.
    """
    if not atoms:
        raise BoundsError("cat needs at least one part")
    out = atoms[0].output
    if any(a.output != out for a in atoms):
        raise FunsorTypeError("cat parts must share an output type")
    counts = [
        a.context.typeof(name).size if name in a.context else 1 for a in atoms
    ]
    total = sum(counts)

    ordered: list = []
    seen = set()
    for a in atoms:
        for n, t in a.context.entries:
            if n in seen:
                continue
            seen.add(n)
            ordered.append((n, Bounded(total) if n == name else t))
    if name not in seen:
        ordered.append((name, Bounded(total)))
    union = TypeContext(ordered)
    rest = union.remove(name)

    axis = union.names.index(name)
    pieces = []
    out_rank = max(a.out_rank for a in atoms)
    out_shape = atoms[0].out_shape
    for a, count in zip(atoms, counts):
        # Give every part a `name` axis of its own count, then align.
        if name not in a.context:
            lifted = TensorAtom(
                TypeContext(((name, Bounded(1)),) + a.context.entries),
                a.data[np.newaxis],
                a.output,
            )
        else:
            lifted = a
        part_union = TypeContext(
            [(n, lifted.context.typeof(n) if n == name else t) for n, t in union.entries]
        )
        arr = _align_one(lifted, part_union, out_rank)
        bounds = tuple(t.size for _, t in part_union.entries)
        pieces.append(np.broadcast_to(arr, bounds + out_shape))
    data = np.concatenate(pieces, axis=axis)
    return TensorAtom(union, data, out)


def tensor_eval(atom: TensorAtom, assignment: dict) -> np.ndarray:
    """Look up one cell (or output array) at a full integer assignment."""
    idx = []
    for n, tp in atom.context.entries:
        try:
            v = int(assignment[n])
        except KeyError:
            raise ContextMismatch(f"no value for {n!r}") from None
        if not 0 <= v < tp.size:
            raise IndexOutOfRange(f"{n!r}={v} outside Z{tp.size}")
        idx.append(v)
    return atom.data[tuple(idx)]
