"""The typed term language.

Terms are immutable trees over atomic factors (tensors, Gaussians, point
masses), variables, lifted pointwise operations, substitution, reduction
with a monoid tag, Markov products, and the symbolic index families
``Slice`` and ``Cat``.  Every term carries a typing judgement: a context
of free variables and an output type, computed eagerly at construction
from the children's cached judgements.  ``infer_type`` re-derives the
judgement from scratch, revalidating leaf data against declared types.
"""
from __future__ import annotations

import itertools
import threading
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .delta import DeltaAtom, point_context
from .domains import Bounded, FunsorType, RealArray, TypeContext
from .errors import BoundsError, FunsorTypeError, InvalidMatching, TypeConflict
from .gaussian import GaussianAtom
from .ops import LiftedOp, ReduceOp
from .tensor import TensorAtom

_FRESH = itertools.count()
_FRESH_LOCK = threading.Lock()


def fresh_name(base: str) -> str:
    """A name guaranteed distinct from every user name and prior fresh name."""
    stem = base.split("#", 1)[0] or "v"
    with _FRESH_LOCK:
        n = next(_FRESH)
    return f"{stem}#{n}"


class Term:
    """Base class; subclasses set ``_ctx`` and ``_out`` in ``__init__``."""

    __slots__ = ("_ctx", "_out", "_hash")

    @property
    def free_vars(self) -> TypeContext:
        return self._ctx

    @property
    def output(self) -> FunsorType:
        return self._out

    def is_scalar_real(self) -> bool:
        return isinstance(self._out, RealArray) and not self._out.shape

    def _key(self):
        raise NotImplementedError

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if type(self) is not type(other):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        if self._hash is None:
            object.__setattr__(self, "_hash", hash((type(self).__name__, self._key())))
        return self._hash

    def __repr__(self) -> str:
        return pretty(self)


def _set(term: Term, ctx: TypeContext, out: FunsorType):
    object.__setattr__(term, "_ctx", ctx)
    object.__setattr__(term, "_out", out)
    object.__setattr__(term, "_hash", None)


class TensorLeaf(Term):
    __slots__ = ("atom",)

    def __init__(self, atom: TensorAtom):
        if not isinstance(atom, TensorAtom):
            raise FunsorTypeError(f"expected a TensorAtom, got {atom!r}", atom)
        object.__setattr__(self, "atom", atom)
        _set(self, atom.context, atom.output)

    def _key(self):
        return self.atom


class GaussianLeaf(Term):
    __slots__ = ("atom",)

    def __init__(self, atom: GaussianAtom):
        if not isinstance(atom, GaussianAtom):
            raise FunsorTypeError(f"expected a GaussianAtom, got {atom!r}", atom)
        object.__setattr__(self, "atom", atom)
        _set(self, atom.context, RealArray(()))

    def _key(self):
        return self.atom


class DeltaLeaf(Term):
    __slots__ = ("atom",)

    def __init__(self, atom: DeltaAtom):
        if not isinstance(atom, DeltaAtom):
            raise FunsorTypeError(f"expected a DeltaAtom, got {atom!r}", atom)
        object.__setattr__(self, "atom", atom)
        _set(self, point_context(atom), RealArray(()))

    def _key(self):
        return self.atom


class Variable(Term):
    __slots__ = ("name", "tp")

    def __init__(self, name: str, tp: FunsorType):
        if not isinstance(name, str) or not name:
            raise FunsorTypeError(f"variable names are nonempty strings, got {name!r}")
        if not isinstance(tp, (Bounded, RealArray)):
            raise FunsorTypeError(f"not a type: {tp!r}")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "tp", tp)
        _set(self, TypeContext([(name, tp)]), tp)

    def _key(self):
        return (self.name, self.tp)


class Apply(Term):
    __slots__ = ("op", "args")

    def __init__(self, op: LiftedOp, args: Sequence[Term]):
        args = tuple(args)
        if not isinstance(op, LiftedOp):
            raise FunsorTypeError(f"not a lifted operation: {op!r}")
        for a in args:
            if not isinstance(a, Term):
                raise FunsorTypeError(f"not a term: {a!r}", a)
        out = op.result_type(*(a.output for a in args))
        ctx = TypeContext()
        try:
            for a in args:
                ctx = ctx.union(a.free_vars)
        except TypeConflict as e:
            raise FunsorTypeError(str(e), self) from e
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "args", args)
        _set(self, ctx, out)

    def _key(self):
        return (self.op, self.args)


class Subst(Term):
    """Simultaneous substitution, stored unevaluated.

    Bindings are canonicalized by name; values refer to the outer scope.
    """

    __slots__ = ("base", "bindings")

    def __init__(self, base: Term, bindings):
        if isinstance(bindings, dict):
            bindings = tuple(sorted(bindings.items()))
        else:
            bindings = tuple(sorted(bindings))
        names = [n for n, _ in bindings]
        if len(set(names)) != len(names):
            raise FunsorTypeError(f"duplicate substitution names in {names}")
        if not bindings:
            raise FunsorTypeError("substitution needs at least one binding")
        base_ctx = base.free_vars
        ctx = base_ctx
        for name, value in bindings:
            if not isinstance(value, Term):
                raise FunsorTypeError(f"not a term: {value!r}", value)
            if name in base_ctx:
                declared = base_ctx.typeof(name)
                if value.output != declared:
                    raise FunsorTypeError(
                        f"substituting {name!r}:{declared.pretty()} with a value"
                        f" of type {value.output.pretty()}",
                        value,
                    )
                ctx = ctx.remove(name)
        try:
            for name, value in bindings:
                if name in base_ctx:
                    ctx = ctx.union(value.free_vars)
        except TypeConflict as e:
            raise FunsorTypeError(str(e), self) from e
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "bindings", bindings)
        _set(self, ctx, base.output)

    def binding_map(self) -> Dict[str, Term]:
        return dict(self.bindings)

    def _key(self):
        return (self.base, self.bindings)


class Reduce(Term):
    __slots__ = ("op", "var", "body")

    def __init__(self, op: ReduceOp, var: str, body: Term):
        if not isinstance(op, ReduceOp):
            raise FunsorTypeError(f"not a reduction monoid: {op!r}")
        ctx = body.free_vars
        if var not in ctx:
            raise FunsorTypeError(
                f"cannot reduce over {var!r}: not free in {ctx.pretty()}", body
            )
        tp = ctx.typeof(var)
        if isinstance(tp, RealArray) and not op.allows_real():
            raise FunsorTypeError(
                f"monoid {op.name} folds bounded variables only; {var!r} is real", body
            )
        if not isinstance(body.output, RealArray):
            raise FunsorTypeError("reduction needs a real-valued body", body)
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "var", var)
        object.__setattr__(self, "body", body)
        _set(self, ctx.remove(var), body.output)

    def _key(self):
        return (self.op, self.var, self.body)


class MarkovProd(Term):
    """Product of a factor over a time axis, chaining matched variables."""

    __slots__ = ("timevar", "step", "body")

    def __init__(self, timevar: str, step, body: Term):
        step = tuple(sorted(tuple(p) for p in step))
        ctx = body.free_vars
        if timevar not in ctx:
            raise FunsorTypeError(f"time variable {timevar!r} not free in body", body)
        ttp = ctx.typeof(timevar)
        if not isinstance(ttp, Bounded):
            raise FunsorTypeError(f"time variable {timevar!r} must be bounded", body)
        if not body.is_scalar_real():
            raise FunsorTypeError("Markov product bodies must be scalar-real", body)
        names = [n for pair in step for n in pair]
        if len(set(names)) != 2 * len(step):
            raise InvalidMatching(f"matched names must be distinct: {step}")
        if timevar in names:
            raise InvalidMatching(f"time variable {timevar!r} cannot be matched")
        for prev, curr in step:
            for n in (prev, curr):
                if n not in ctx:
                    raise InvalidMatching(f"matched name {n!r} not free in body")
            if ctx.typeof(prev) != ctx.typeof(curr):
                raise InvalidMatching(
                    f"pair ({prev!r}, {curr!r}) must share one type, got"
                    f" {ctx.typeof(prev).pretty()} and {ctx.typeof(curr).pretty()}"
                )
        object.__setattr__(self, "timevar", timevar)
        object.__setattr__(self, "step", step)
        object.__setattr__(self, "body", body)
        _set(self, ctx.remove(timevar), RealArray(()))

    def _key(self):
        return (self.timevar, self.step, self.body)


class Slice(Term):
    """The index family ``over -> start + stride * over`` into ``Z(bound)``.

    Equivalent to an index-valued tensor over ``(over : Z(count))`` holding
    ``range(start, stop, stride)``, kept symbolic so substitutions compose
    without copying.
    """

    __slots__ = ("over", "start", "stop", "stride", "bound")

    def __init__(self, over: str, start: int, stop: int, stride: int, bound: int):
        if stride < 1 or start < 0 or start >= stop or stop > bound:
            raise BoundsError(
                f"slice [{start}:{stop}:{stride}] does not fit Z{bound}"
            )
        count = len(range(start, stop, stride))
        object.__setattr__(self, "over", over)
        object.__setattr__(self, "start", int(start))
        object.__setattr__(self, "stop", int(stop))
        object.__setattr__(self, "stride", int(stride))
        object.__setattr__(self, "bound", int(bound))
        _set(self, TypeContext([(over, Bounded(count))]), Bounded(bound))

    @property
    def count(self) -> int:
        return len(range(self.start, self.stop, self.stride))

    def to_tensor(self) -> TensorAtom:
        data = np.arange(self.start, self.stop, self.stride, dtype=np.float64)
        return TensorAtom(self.free_vars, data, Bounded(self.bound))

    def _key(self):
        return (self.over, self.start, self.stop, self.stride, self.bound)


class Cat(Term):
    """Concatenation of parts along the axis of one bounded variable.

    Parts lacking the variable contribute a single position.  All parts
    must share an output type; the result re-binds the variable to the
    total length.
    """

    __slots__ = ("over", "parts")

    def __init__(self, over: str, parts: Sequence[Term]):
        parts = tuple(parts)
        if not parts:
            raise BoundsError("cat needs at least one part")
        out = parts[0].output
        total = 0
        for p in parts:
            if not isinstance(p, Term):
                raise FunsorTypeError(f"not a term: {p!r}", p)
            if p.output != out:
                raise FunsorTypeError("cat parts must share an output type", p)
            tp = p.free_vars.get(over)
            if tp is None:
                total += 1
            elif isinstance(tp, Bounded):
                total += tp.size
            else:
                raise FunsorTypeError(f"cat variable {over!r} must be bounded", p)
        entries = []
        seen = set()
        for p in parts:
            for n, t in p.free_vars.entries:
                if n in seen:
                    continue
                seen.add(n)
                entries.append((n, Bounded(total) if n == over else t))
        if over not in seen:
            entries.append((over, Bounded(total)))
        try:
            ctx = TypeContext(entries)
        except TypeConflict as e:
            raise FunsorTypeError(str(e), self) from e
        object.__setattr__(self, "over", over)
        object.__setattr__(self, "parts", parts)
        _set(self, ctx, out)

    def part_counts(self) -> Tuple[int, ...]:
        out = []
        for p in self.parts:
            tp = p.free_vars.get(self.over)
            out.append(tp.size if isinstance(tp, Bounded) else 1)
        return tuple(out)

    def _key(self):
        return (self.over, self.parts)


def free_vars(term: Term) -> TypeContext:
    return term.free_vars


def infer_type(term: Term) -> Tuple[TypeContext, FunsorType]:
    """Re-derive a term's typing judgement from its leaves.

    Unlike the judgement cached at construction, this revalidates leaf
    data shapes against their declared types, so a corrupted leaf fails
    here with a ``TypeError``.
    """
    if isinstance(term, TensorLeaf):
        term.atom.check()
        return term.atom.context, term.atom.output
    if isinstance(term, GaussianLeaf):
        atom = term.atom
        dim = sum(tp.num_elements for _, tp in atom.reals.entries)
        bounds = tuple(tp.size for _, tp in atom.batch.entries)
        if atom.info_vec.shape != bounds + (dim,) or atom.precision.shape != bounds + (
            dim,
            dim,
        ):
            raise FunsorTypeError(
                "Gaussian parameters do not match the declared context", term
            )
        return atom.context, RealArray(())
    if isinstance(term, DeltaLeaf):
        term.atom.point.check()
        return point_context(term.atom), RealArray(())
    if isinstance(term, Variable):
        return TypeContext([(term.name, term.tp)]), term.tp
    if isinstance(term, Apply):
        ctx = TypeContext()
        outs = []
        for a in term.args:
            c, o = infer_type(a)
            ctx = ctx.union(c)
            outs.append(o)
        return ctx, term.op.result_type(*outs)
    if isinstance(term, Subst):
        base_ctx, base_out = infer_type(term.base)
        ctx = base_ctx
        for name, value in term.bindings:
            if name in base_ctx:
                vctx, vout = infer_type(value)
                if vout != base_ctx.typeof(name):
                    raise FunsorTypeError(f"binding for {name!r} has the wrong type", value)
                ctx = ctx.remove(name)
        for name, value in term.bindings:
            if name in base_ctx:
                ctx = ctx.union(infer_type(value)[0])
        return ctx, base_out
    if isinstance(term, Reduce):
        ctx, out = infer_type(term.body)
        rebuilt = Reduce(term.op, term.var, term.body)
        return rebuilt.free_vars, rebuilt.output
    if isinstance(term, MarkovProd):
        infer_type(term.body)
        rebuilt = MarkovProd(term.timevar, term.step, term.body)
        return rebuilt.free_vars, rebuilt.output
    if isinstance(term, Slice):
        return term.free_vars, term.output
    if isinstance(term, Cat):
        for p in term.parts:
            infer_type(p)
        rebuilt = Cat(term.over, term.parts)
        return rebuilt.free_vars, rebuilt.output
    raise FunsorTypeError(f"not a term: {term!r}", term)


def substitute(term: Term, bindings: Dict[str, Term]) -> Term:
    """Capture-avoiding simultaneous substitution, pushed structurally.

    Pushing stops at numeric leaves and index families, which are wrapped
    in unevaluated ``Subst`` nodes for an interpretation to resolve.
    """
    bindings = {n: v for n, v in dict(bindings).items() if n in term.free_vars}
    if not bindings:
        return term
    if isinstance(term, Variable):
        return bindings.get(term.name, term)
    if isinstance(term, Apply):
        return Apply(term.op, [substitute(a, bindings) for a in term.args])
    if isinstance(term, Subst):
        inner = term.binding_map()
        composed = {n: substitute(v, bindings) for n, v in inner.items()}
        for n, v in bindings.items():
            if n not in inner and n in term.base.free_vars:
                composed[n] = v
        return Subst(term.base, composed)
    if isinstance(term, Reduce):
        var, body = term.var, term.body
        if any(var in v.free_vars for v in bindings.values()):
            renamed = fresh_name(var)
            body = substitute(body, {var: Variable(renamed, body.free_vars.typeof(var))})
            var = renamed
        inner = {n: v for n, v in bindings.items() if n != var}
        return Reduce(term.op, var, substitute(body, inner)) if inner else Reduce(
            term.op, var, body
        )
    if isinstance(term, MarkovProd):
        matched = {n for pair in term.step for n in pair}
        hit = matched & set(bindings)
        if hit:
            raise InvalidMatching(
                f"cannot substitute matched boundary names {sorted(hit)} through"
                " a Markov product"
            )
        captured = {
            n
            for n, v in bindings.items()
            if matched & set(v.free_vars.names)
        }
        if captured:
            raise InvalidMatching(
                f"substitution values for {sorted(captured)} capture matched names"
            )
        timevar, body = term.timevar, term.body
        if any(timevar in v.free_vars for v in bindings.values()):
            renamed = fresh_name(timevar)
            body = substitute(
                body, {timevar: Variable(renamed, body.free_vars.typeof(timevar))}
            )
            timevar = renamed
        inner = {n: v for n, v in bindings.items() if n != timevar}
        body = substitute(body, inner) if inner else body
        return MarkovProd(timevar, term.step, body)
    if isinstance(term, Cat):
        over = term.over
        blocked = over in bindings or any(
            over in v.free_vars for v in bindings.values()
        )
        if not blocked:
            return Cat(over, [substitute(p, bindings) for p in term.parts])
    return Subst(term, bindings)


def alpha_rename(term: Term, new_name: str) -> Term:
    """Rename a binder (the reduced variable or the time variable)."""
    if isinstance(term, Reduce):
        tp = term.body.free_vars.typeof(term.var)
        return Reduce(term.op, new_name, substitute(term.body, {term.var: Variable(new_name, tp)}))
    if isinstance(term, MarkovProd):
        tp = term.body.free_vars.typeof(term.timevar)
        return MarkovProd(
            new_name,
            term.step,
            substitute(term.body, {term.timevar: Variable(new_name, tp)}),
        )
    raise FunsorTypeError(f"nothing to rename on {type(term).__name__}", term)


def _pretty_atom_data(atom: TensorAtom) -> str:
    if atom.data.size <= 8:
        return np.array2string(atom.data, separator=",", precision=6)
    return f"<{'x'.join(str(s) for s in atom.data.shape)}>"


def pretty(term: Term) -> str:
    """Deterministic single-line rendering of a term."""
    if isinstance(term, TensorLeaf):
        return f"Tensor({term.atom.context.pretty()}, {_pretty_atom_data(term.atom)})"
    if isinstance(term, GaussianLeaf):
        a = term.atom
        return f"Gaussian({a.batch.pretty()}|{a.reals.pretty()})"
    if isinstance(term, DeltaLeaf):
        a = term.atom
        return f"Delta({a.name}, Tensor({a.point.context.pretty()}, {_pretty_atom_data(a.point)}))"
    if isinstance(term, Variable):
        return term.name
    if isinstance(term, Apply):
        inner = ", ".join(pretty(a) for a in term.args)
        return f"{term.op.name}({inner})"
    if isinstance(term, Subst):
        inner = ", ".join(f"{n} := {pretty(v)}" for n, v in term.bindings)
        return f"{pretty(term.base)}[{inner}]"
    if isinstance(term, Reduce):
        head = {"logaddexp": "sum", "add": "prod", "max": "max"}[term.op.name]
        return f"{head}_{term.var}({pretty(term.body)})"
    if isinstance(term, MarkovProd):
        pairs = ",".join(f"({p},{c})" for p, c in term.step)
        return f"markovprod_{term.timevar}[{pairs}]({pretty(term.body)})"
    if isinstance(term, Slice):
        return (
            f"slice_{term.over}[{term.start}:{term.stop}:{term.stride}]"
            f"@Z{term.bound}"
        )
    if isinstance(term, Cat):
        inner = ", ".join(pretty(p) for p in term.parts)
        return f"cat_{term.over}({inner})"
    return repr(term)
