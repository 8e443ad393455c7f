"""Interpretations: swappable rule sets driving term evaluation.

An interpretation is an ordered list of rules.  Each rule names a head
constructor and a handler; handlers may decline by returning ``None``, in
which case later rules (and then the fallback chain) are tried.  The
first handler that fires wins.  Dispatch happens when terms are built
through the smart constructors here, so handlers that build their results
through the same constructors evaluate recursively under the current
interpretation.  Terms no rule claims are left as lazy syntax.

The default interpretation is Exact, which evaluates products,
substitutions and reductions of the atomic factors in closed form and
leaves everything else lazy.  Lazy only pushes substitutions through
non-atomic structure.  A thread-local stack makes the choice dynamically
scoped; a fuel counter bounds rule applications per top-level evaluation
(default 10000, overridable via the ``FUNSOR_FUEL`` environment variable).
"""
from __future__ import annotations

import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .delta import DeltaAtom
from .domains import Bounded, RealArray, TypeContext
from .errors import (
    FuelExhausted,
    FunsorTypeError,
    NotAffine,
    StackUnderflow,
)
from .gaussian import (
    GaussianAtom,
    gaussian_affine_substitute,
    gaussian_cat,
    gaussian_fuse,
    gaussian_index_batch,
    gaussian_marginalize,
    gaussian_plated_product,
    gaussian_substitute,
)
from .ops import (
    ADD,
    ADD_REDUCE,
    LIFTED_OPS,
    LOGADDEXP_REDUCE,
    MAX_REDUCE,
    REDUCE_OPS,
    LiftedOp,
    MUL,
    ReduceOp,
    TAKE,
)
from .tensor import (
    TensorAtom,
    index_tensor,
    scalar_tensor,
    tensor_apply,
    tensor_index,
    tensor_cat,
    tensor_reduce,
    tensor_slice,
    zeros_tensor,
)
from .terms import (
    Apply,
    Cat,
    DeltaLeaf,
    GaussianLeaf,
    MarkovProd,
    Reduce,
    Slice,
    Subst,
    TensorLeaf,
    Term,
    Variable,
    fresh_name,
    substitute,
)

DEFAULT_FUEL = 10_000


def fuel_limit() -> int:
    raw = os.environ.get("FUNSOR_FUEL")
    if raw is None:
        return DEFAULT_FUEL
    try:
        return max(1, int(raw))
    except ValueError:
        return DEFAULT_FUEL


@dataclass
class Rule:
    """One rewrite: a head constructor plus a handler that may decline."""

    head: type
    handler: Callable[[Term], Optional[Term]]
    name: str = ""


@dataclass
class WholeRule:
    """A rule tried on unevaluated nodes before their children are rebuilt."""

    head: type
    handler: Callable[[Term, Callable[[Term], Term]], Optional[Term]]
    name: str = ""


class Interpretation:
    """An ordered rule list with an optional fallback chain."""

    def __init__(
        self,
        name: str,
        rules: Sequence[Rule] = (),
        fallback: Optional["Interpretation"] = None,
        whole_rules: Sequence[WholeRule] = (),
    ):
        self.name = name
        self.rules = list(rules)
        self.fallback = fallback
        self.whole_rules = list(whole_rules)

    def chain(self):
        interp = self
        while interp is not None:
            yield interp
            interp = interp.fallback

    def __repr__(self) -> str:
        return f"Interpretation({self.name})"


class _State(threading.local):
    def __init__(self):
        self.stack: List[Interpretation] = []
        self.fuel: Optional[int] = None


_STATE = _State()


def current_interpretation() -> Interpretation:
    if _STATE.stack:
        return _STATE.stack[-1]
    return EXACT


def push_interpretation(interp: Interpretation):
    _STATE.stack.append(interp)


def pop_interpretation() -> Interpretation:
    if not _STATE.stack:
        raise StackUnderflow("no interpretation pushed")
    return _STATE.stack.pop()


@contextmanager
def interpretation(interp: Interpretation):
    push_interpretation(interp)
    try:
        yield interp
    finally:
        pop_interpretation()


def _burn_fuel():
    if _STATE.fuel is not None:
        _STATE.fuel -= 1
        if _STATE.fuel < 0:
            raise FuelExhausted(
                f"exceeded {fuel_limit()} rule applications in one evaluation"
            )


@contextmanager
def _fuel_scope():
    if _STATE.fuel is None:
        _STATE.fuel = fuel_limit()
        try:
            yield
        finally:
            _STATE.fuel = None
    else:
        yield


def dispatch(node: Term) -> Term:
    """Run the current interpretation's rules on one freshly built node."""
    with _fuel_scope():
        for interp in current_interpretation().chain():
            for rule in interp.rules:
                if isinstance(node, rule.head):
                    result = rule.handler(node)
                    if result is not None:
                        _burn_fuel()
                        return result
    return node


def reinterpret(term: Term) -> Term:
    """Rebuild a term bottom-up under the current interpretation."""
    memo: Dict[int, Term] = {}
    keep_alive: List[Term] = []

    def go(t: Term) -> Term:
        hit = memo.get(id(t))
        if hit is not None:
            return hit
        for interp in current_interpretation().chain():
            for rule in interp.whole_rules:
                if isinstance(t, rule.head):
                    result = rule.handler(t, go)
                    if result is not None:
                        _burn_fuel()
                        memo[id(t)] = result
                        keep_alive.append(t)
                        return result
        out = dispatch(_rebuild(t, go))
        memo[id(t)] = out
        keep_alive.append(t)
        return out

    with _fuel_scope():
        return go(term)


def _rebuild(t: Term, go) -> Term:
    if isinstance(t, (TensorLeaf, GaussianLeaf, DeltaLeaf, Variable, Slice)):
        return t
    if isinstance(t, Apply):
        args = [go(a) for a in t.args]
        if all(a is b for a, b in zip(args, t.args)):
            return t
        return Apply(t.op, args)
    if isinstance(t, Subst):
        base = go(t.base)
        bindings = [(n, go(v)) for n, v in t.bindings]
        if base is t.base and all(v is w for (_, v), (_, w) in zip(bindings, t.bindings)):
            return t
        return Subst(base, bindings)
    if isinstance(t, Reduce):
        body = go(t.body)
        return t if body is t.body else Reduce(t.op, t.var, body)
    if isinstance(t, MarkovProd):
        body = go(t.body)
        return t if body is t.body else MarkovProd(t.timevar, t.step, body)
    if isinstance(t, Cat):
        parts = [go(p) for p in t.parts]
        if all(p is q for p, q in zip(parts, t.parts)):
            return t
        return Cat(t.over, parts)
    return t


def interpret(interp: Interpretation, term: Term) -> Term:
    """Evaluate a term under an interpretation, restoring the prior one."""
    with interpretation(interp):
        return reinterpret(term)


# ---------------------------------------------------------------------------
# Smart constructors.


def to_term(x) -> Term:
    if isinstance(x, Term):
        return x
    if isinstance(x, TensorAtom):
        return dispatch(TensorLeaf(x))
    if isinstance(x, GaussianAtom):
        return dispatch(GaussianLeaf(x))
    if isinstance(x, DeltaAtom):
        return dispatch(DeltaLeaf(x))
    if isinstance(x, (int, float, np.floating, np.integer)):
        return dispatch(TensorLeaf(scalar_tensor(float(x))))
    raise FunsorTypeError(f"cannot convert {x!r} to a term", x)


def lift(op, *args) -> Term:
    if isinstance(op, str):
        op = LIFTED_OPS[op]
    return dispatch(Apply(op, [to_term(a) for a in args]))


def reduce_term(op, var: str, body) -> Term:
    if isinstance(op, str):
        op = REDUCE_OPS[op]
    return dispatch(Reduce(op, var, to_term(body)))


def subst_term(base, bindings: Dict[str, Term]) -> Term:
    base = to_term(base)
    coerced = {}
    for name, value in bindings.items():
        if name not in base.free_vars:
            continue
        tp = base.free_vars.typeof(name)
        if isinstance(value, Term):
            coerced[name] = value
        elif isinstance(value, TensorAtom):
            coerced[name] = to_term(value)
        elif isinstance(tp, Bounded) and isinstance(value, (int, np.integer)):
            coerced[name] = to_term(index_tensor(TypeContext(), np.float64(value), tp.size))
        elif isinstance(tp, RealArray):
            arr = np.asarray(value, dtype=np.float64).reshape(tp.shape)
            coerced[name] = to_term(TensorAtom(TypeContext(), arr, tp))
        else:
            raise FunsorTypeError(f"cannot bind {name!r} to {value!r}")
    if not coerced:
        return base
    return dispatch(Subst(base, coerced))


def markov_term(timevar: str, step, body) -> Term:
    return dispatch(MarkovProd(timevar, step, to_term(body)))


def cat_term(over: str, parts) -> Term:
    return dispatch(Cat(over, [to_term(p) for p in parts]))


def slice_term(over: str, start: int, stop: int, stride: int, bound: int) -> Term:
    return dispatch(Slice(over, start, stop, stride, bound))


def var(name: str, tp) -> Term:
    return dispatch(Variable(name, tp))


def _install_operators():
    def _add(self, other):
        return lift(ADD, self, other)

    def _radd(self, other):
        return lift(ADD, other, self)

    def _sub(self, other):
        return lift("sub", self, other)

    def _mul(self, other):
        return lift(MUL, self, other)

    def _rmul(self, other):
        return lift(MUL, other, self)

    def _neg(self):
        return lift("neg", self)

    def _reduce(self, op, v):
        return reduce_term(op, v, self)

    def _call(self, **bindings):
        return subst_term(self, bindings)

    Term.__add__ = _add
    Term.__radd__ = _radd
    Term.__sub__ = _sub
    Term.__mul__ = _mul
    Term.__rmul__ = _rmul
    Term.__neg__ = _neg
    Term.reduce = _reduce
    Term.__call__ = _call


_install_operators()


# ---------------------------------------------------------------------------
# Normal form.


@dataclass
class NormalForm:
    """A flat product: point masses, one tensor, one Gaussian, lazy rest."""

    deltas: Tuple[DeltaAtom, ...] = ()
    tensor: Optional[TensorAtom] = None
    gaussian: Optional[GaussianAtom] = None
    lazy_rest: Tuple[Term, ...] = ()

    def to_term(self) -> Term:
        parts: List[Term] = [DeltaLeaf(d) for d in self.deltas]
        if self.tensor is not None:
            parts.append(TensorLeaf(self.tensor))
        if self.gaussian is not None:
            parts.append(GaussianLeaf(self.gaussian))
        parts.extend(self.lazy_rest)
        if not parts:
            return TensorLeaf(scalar_tensor(0.0))
        out = parts[0]
        for p in parts[1:]:
            out = Apply(ADD, [out, p])
        return out

    @property
    def parts_count(self) -> int:
        return (
            len(self.deltas)
            + (self.tensor is not None)
            + (self.gaussian is not None)
            + len(self.lazy_rest)
        )


def flatten_product(term: Term) -> List[Term]:
    """Flatten nested scalar log-space sums into a factor list."""
    if (
        isinstance(term, Apply)
        and term.op.name == "add"
        and term.is_scalar_real()
        and all(a.is_scalar_real() for a in term.args)
    ):
        out: List[Term] = []
        for a in term.args:
            out.extend(flatten_product(a))
        return out
    return [term]


def _fuse_tensor(acc: Optional[TensorAtom], atom: TensorAtom) -> TensorAtom:
    if acc is None:
        return atom
    return tensor_apply(ADD, [acc, atom])


def _fuse_gaussian(acc: Optional[GaussianAtom], atom: GaussianAtom) -> GaussianAtom:
    if acc is None:
        return atom
    return gaussian_fuse(acc, atom)


def normal_form_from_parts(parts: Sequence[Term]) -> NormalForm:
    deltas: List[DeltaAtom] = []
    tensor: Optional[TensorAtom] = None
    gaussian: Optional[GaussianAtom] = None
    lazy: List[Term] = []
    for p in parts:
        if isinstance(p, TensorLeaf) and p.is_scalar_real():
            tensor = _fuse_tensor(tensor, p.atom)
        elif isinstance(p, GaussianLeaf):
            gaussian = _fuse_gaussian(gaussian, p.atom)
        elif isinstance(p, DeltaLeaf):
            deltas.append(p.atom)
        else:
            lazy.append(p)

    # Point masses trigger substitution of their point into every other
    # factor that mentions their variable.
    changed = True
    while changed:
        changed = False
        for k, d in enumerate(deltas):
            name = d.name
            if tensor is not None and name in tensor.context:
                tensor = tensor_index(tensor, name, d.point)
                changed = True
            if gaussian is not None:
                if name in gaussian.batch:
                    gaussian = gaussian_index_batch(gaussian, name, d.point)
                    changed = True
                elif name in gaussian.reals:
                    const, gaussian = gaussian_substitute(gaussian, name, d.point)
                    tensor = _fuse_tensor(tensor, const)
                    changed = True
            for j, e in enumerate(deltas):
                if j != k and name in e.point.context:
                    deltas[j] = DeltaAtom(e.name, tensor_index(e.point, name, d.point))
                    changed = True
            for j, t in enumerate(lazy):
                if name in t.free_vars:
                    lazy[j] = Subst(t, {name: TensorLeaf(d.point)})
                    changed = True
    return NormalForm(tuple(deltas), tensor, gaussian, tuple(lazy))


def normalize(term: Term) -> NormalForm:
    """Evaluate under Exact and flatten into the closed product form."""
    evaluated = interpret(EXACT, to_term(term))
    return normal_form_from_parts(flatten_product(evaluated))


# ---------------------------------------------------------------------------
# Shared substitution helpers.


def _rename_tensor(atom: TensorAtom, renames: Dict[str, str]) -> TensorAtom:
    entries = [(renames.get(n, n), t) for n, t in atom.context.entries]
    return TensorAtom(TypeContext(entries), atom.data, atom.output)


def _subst_tensor_atom(atom: TensorAtom, bindings: Dict[str, Term]):
    """Apply index-valued bindings to a tensor atom; None declines.

    Handles ground indices, index tensors, and symbolic slices.  When a
    binding's value mentions another substituted name, the substituted
    axes are renamed fresh first so values keep referring to outer scope.
    """
    todo = {n: v for n, v in bindings.items() if n in atom.context}
    if not todo:
        return None
    for v in todo.values():
        if isinstance(v, TensorLeaf):
            if not isinstance(v.atom.output, Bounded):
                return None
        elif not isinstance(v, Slice):
            return None
    value_names = set()
    for v in todo.values():
        value_names.update(v.free_vars.names)
    overlap = value_names & set(todo)
    if overlap:
        renames = {n: fresh_name(n) for n in todo}
        atom = _rename_tensor(atom, renames)
        todo = {renames[n]: v for n, v in todo.items()}
    out = atom
    for n, v in todo.items():
        if isinstance(v, Slice):
            out = tensor_slice(out, n, v.start, v.stop, v.stride)
            if v.over != n:
                out = _rename_tensor(out, {n: v.over})
        else:
            out = tensor_index(out, n, v.atom)
    return out


def _is_index_value(v: Term) -> bool:
    return (
        isinstance(v, TensorLeaf) and isinstance(v.atom.output, Bounded)
    ) or isinstance(v, Slice)


# ---------------------------------------------------------------------------
# Affine decomposition by probing.


def _affine_structural(t: Term) -> bool:
    if isinstance(t, Variable):
        return isinstance(t.tp, RealArray)
    if isinstance(t, TensorLeaf):
        return True
    if isinstance(t, Apply):
        name = t.op.name
        if name in ("add", "sub", "neg", "take"):
            return all(_affine_structural(a) for a in t.args)
        if name == "mul":
            sides = t.args
            for k in (0, 1):
                c = sides[k]
                if (
                    isinstance(c, TensorLeaf)
                    and c.is_scalar_real()
                    and _affine_structural(sides[1 - k])
                ):
                    return True
            return False
        return False
    return False


def affine_decompose(expr: Term):
    """Split a structurally affine expression over its real variables.

    Returns ``(const, coeffs)`` where ``const`` is the value at zero and
    ``coeffs`` maps each real free variable to its coefficient matrix,
    both batched over the expression's bounded free variables; returns
    ``None`` when the expression fails the structural gate.  Coefficients
    are recovered by probing with unit vectors, one basis probe per
    flattened input coordinate.
    """
    if not _affine_structural(expr):
        return None
    real_entries = expr.free_vars.real_entries()
    out_tp = expr.output
    if not isinstance(out_tp, RealArray):
        return None
    dv = out_tp.num_elements

    def probe(values: Dict[str, np.ndarray]) -> Optional[TensorAtom]:
        bindings = {
            n: TensorLeaf(TensorAtom(TypeContext(), values[n], tp))
            for n, tp in real_entries
        }
        with interpretation(EXACT):
            ev = reinterpret(substitute(expr, bindings))
        if isinstance(ev, TensorLeaf):
            return ev.atom
        return None

    zeros = {n: np.zeros(tp.shape) for n, tp in real_entries}
    c = probe(zeros)
    if c is None:
        return None
    from .tensor import align_atoms

    coeffs = []
    for n, tp in real_entries:
        du = tp.num_elements
        col_atoms = []
        for k in range(du):
            unit = dict(zeros)
            e = np.zeros(du)
            e[k] = 1.0
            unit[n] = e.reshape(tp.shape)
            col = probe(unit)
            if col is None:
                return None
            col_atoms.append(col)
        union, arrays = align_atoms([c] + col_atoms)
        bounds = tuple(t.size for _, t in union.entries)
        full = [np.broadcast_to(a, bounds + out_tp.shape) for a in arrays]
        base = full[0]
        cols = [(fa - base).reshape(bounds + (dv,)) for fa in full[1:]]
        mat = TensorAtom(union, np.stack(cols, axis=-1), RealArray((dv, du)))
        coeffs.append((n, tp, mat))
    return c, coeffs


def affine_substitute(g, name: str, expr):
    """Substitute an affine expression for one real variable of a factor.

    ``expr`` must pass the structural affinity gate; its constant and
    coefficient matrices are recovered by probing at zero and at unit
    vectors.  Returns the constant tensor and the surviving Gaussian
    factor (None when no real variables remain).
    """
    from .gaussian import gaussian_affine_substitute

    dec = affine_decompose(to_term(expr))
    if dec is None:
        raise NotAffine("expression failed the structural affinity check")
    const, coeffs = dec
    return gaussian_affine_substitute(g, name, const, coeffs)


# ---------------------------------------------------------------------------
# Exact rules.


def _chain_add(parts: Sequence[Term]) -> Term:
    if not parts:
        return TensorLeaf(scalar_tensor(0.0))
    out = parts[0]
    for p in parts[1:]:
        out = Apply(ADD, [out, p])
    return out


def _h_variable(node: Variable) -> Optional[Term]:
    if isinstance(node.tp, Bounded):
        n = node.tp.size
        ctx = TypeContext([(node.name, node.tp)])
        return TensorLeaf(index_tensor(ctx, np.arange(n, dtype=np.float64), n))
    return None


def _h_apply_tensors(node: Apply) -> Optional[Term]:
    if all(isinstance(a, TensorLeaf) for a in node.args):
        return TensorLeaf(tensor_apply(node.op, [a.atom for a in node.args]))
    return None


def _h_product_normalize(node: Apply) -> Optional[Term]:
    if node.op.name != "add" or not node.is_scalar_real():
        return None
    parts = flatten_product(node)
    if len(parts) < 2:
        return None
    candidate = normal_form_from_parts(parts).to_term()
    if candidate == node:
        return None
    return candidate


def _overlap_renames(todo: Dict[str, Term]) -> Dict[str, str]:
    value_names = set()
    for v in todo.values():
        value_names.update(v.free_vars.names)
    if value_names & set(todo):
        return {n: fresh_name(n) for n in todo}
    return {}


def _apply_index_bindings(
    atom: TensorAtom, todo: Dict[str, Term], renames: Dict[str, str]
) -> TensorAtom:
    if renames:
        atom = _rename_tensor(atom, renames)
    for n, v in todo.items():
        axis = renames.get(n, n)
        if isinstance(v, Slice):
            atom = tensor_slice(atom, axis, v.start, v.stop, v.stride)
            if v.over != axis:
                atom = _rename_tensor(atom, {axis: v.over})
        else:
            atom = tensor_index(atom, axis, v.atom)
    return atom


def _h_subst_tensor(node: Subst) -> Optional[Term]:
    base = node.base
    if not isinstance(base, TensorLeaf):
        return None
    bindings = node.binding_map()
    todo = {
        n: v for n, v in bindings.items()
        if n in base.atom.context and _is_index_value(v)
    }
    if not todo:
        return None
    leftover = {n: v for n, v in bindings.items() if n not in todo}
    out = TensorLeaf(_apply_index_bindings(base.atom, todo, _overlap_renames(todo)))
    if leftover:
        return subst_term(out, leftover)
    return out


def _h_subst_gaussian(node: Subst) -> Optional[Term]:
    from .gaussian import gaussian_rename

    base = node.base
    if not isinstance(base, GaussianLeaf):
        return None
    g = base.atom
    bindings = node.binding_map()
    batch_todo = {
        n: v for n, v in bindings.items() if n in g.batch and _is_index_value(v)
    }
    real_todo: Dict[str, tuple] = {}
    for n, v in bindings.items():
        if n in g.reals:
            if isinstance(v, TensorLeaf):
                real_todo[n] = ("ground", v.atom)
            else:
                dec = affine_decompose(v)
                if dec is not None:
                    real_todo[n] = ("affine", dec)
    if not batch_todo and not real_todo:
        return None
    leftover = {
        n: v for n, v in bindings.items()
        if n not in batch_todo and n not in real_todo
    }

    applied = set(batch_todo) | set(real_todo)
    value_fvs = set()
    for v in batch_todo.values():
        value_fvs.update(v.free_vars.names)
    for kind, payload in real_todo.values():
        if kind == "ground":
            value_fvs.update(payload.context.names)
        else:
            const, coeffs = payload
            value_fvs.update(const.context.names)
            for un, _, mat in coeffs:
                value_fvs.add(un)
                value_fvs.update(mat.context.names)
    renames = (
        {n: fresh_name(n) for n in applied} if value_fvs & applied else {}
    )
    if renames:
        g = gaussian_rename(g, renames)
        batch_todo = {renames.get(n, n): v for n, v in batch_todo.items()}
        real_todo = {renames.get(n, n): v for n, v in real_todo.items()}

    if batch_todo:
        info = _apply_index_bindings(g.info_atom(), batch_todo, {})
        prec = _apply_index_bindings(g.precision_atom(), batch_todo, {})
        g = GaussianAtom(info.context, g.reals, info.data, prec.data)

    consts: List[TensorAtom] = []
    for n, (kind, payload) in real_todo.items():
        if kind == "ground":
            const, g = gaussian_substitute(g, n, payload)
        else:
            const_atom, coeffs = payload
            const, g = gaussian_affine_substitute(g, n, const_atom, coeffs)
        consts.append(const)

    tensor = None
    for c in consts:
        tensor = _fuse_tensor(tensor, c)
    parts: List[Term] = []
    if tensor is not None:
        parts.append(TensorLeaf(tensor))
    if g is not None:
        parts.append(GaussianLeaf(g))
    out = _chain_add(parts)
    if leftover:
        return subst_term(out, leftover)
    return out


def _delta_indicator(point: TensorAtom, value: TensorAtom) -> TensorAtom:
    from .tensor import align_atoms

    union, views = align_atoms([point, value])
    bounds = tuple(tp.size for _, tp in union.entries)
    pa = np.broadcast_to(views[0], bounds + point.out_shape)
    va = np.broadcast_to(views[1], bounds + point.out_shape)
    if point.out_shape:
        axes = tuple(range(len(bounds), len(bounds) + len(point.out_shape)))
        eq = np.all(pa == va, axis=axes)
    else:
        eq = pa == va
    data = np.where(eq, 0.0, -np.inf)
    return TensorAtom(union, data, RealArray(()))


def _h_subst_delta(node: Subst) -> Optional[Term]:
    base = node.base
    if not isinstance(base, DeltaLeaf):
        return None
    d = base.atom
    bindings = node.binding_map()
    point = d.point
    point_todo = {
        n: v for n, v in bindings.items()
        if n in point.context and _is_index_value(v)
    }
    if point_todo:
        point = _apply_index_bindings(point, point_todo, _overlap_renames(point_todo))
    name_value = bindings.get(d.name)
    leftover = {
        n: v for n, v in bindings.items()
        if n not in point_todo and n != d.name
    }
    if name_value is not None and isinstance(name_value, TensorLeaf):
        out: Term = TensorLeaf(_delta_indicator(point, name_value.atom))
    elif name_value is not None:
        leftover[d.name] = name_value
        if not point_todo:
            return None
        out = DeltaLeaf(DeltaAtom(d.name, point))
    else:
        if not point_todo:
            return None
        out = DeltaLeaf(DeltaAtom(d.name, point))
    if leftover:
        return subst_term(out, leftover)
    return out


def _h_subst_slice(node: Subst) -> Optional[Term]:
    base = node.base
    if not isinstance(base, Slice):
        return None
    v = node.binding_map().get(base.over)
    if v is None:
        return None
    if isinstance(v, TensorLeaf) and isinstance(v.atom.output, Bounded):
        data = base.start + base.stride * v.atom.data
        return TensorLeaf(index_tensor(v.atom.context, data, base.bound))
    if isinstance(v, Slice):
        new_start = base.start + base.stride * v.start
        new_stride = base.stride * v.stride
        new_stop = new_start + new_stride * (v.count - 1) + 1
        return Slice(v.over, new_start, new_stop, new_stride, base.bound)
    return None


def _h_subst_cat(node: Subst) -> Optional[Term]:
    base = node.base
    if not isinstance(base, Cat):
        return None
    bindings = node.binding_map()
    counts = base.part_counts()
    if base.over in bindings:
        v = bindings[base.over]
        if not (
            isinstance(v, TensorLeaf)
            and isinstance(v.atom.output, Bounded)
            and not v.atom.context
        ):
            return None
        k = int(v.atom.data)
        inner = {n: w for n, w in bindings.items() if n != base.over}
        offset = 0
        for part, cnt in zip(base.parts, counts):
            if k < offset + cnt:
                idx = index_tensor(TypeContext(), np.float64(k - offset), cnt)
                picked = subst_term(part, {base.over: TensorLeaf(idx)})
                return subst_term(picked, inner) if inner else picked
            offset += cnt
        return None
    value_fvs = set()
    for v in bindings.values():
        value_fvs.update(v.free_vars.names)
    if base.over in value_fvs:
        return None
    return cat_term(base.over, [subst_term(p, bindings) for p in base.parts])


def _h_reduce_tensor(node: Reduce) -> Optional[Term]:
    if isinstance(node.body, TensorLeaf):
        return TensorLeaf(tensor_reduce(node.op, node.body.atom, node.var))
    return None


def _h_reduce_gaussian(node: Reduce) -> Optional[Term]:
    body = node.body
    if not isinstance(body, GaussianLeaf):
        return None
    g = body.atom
    if node.op.name == "logaddexp" and node.var in g.reals:
        w, g2 = gaussian_marginalize(g, node.var)
        parts: List[Term] = [TensorLeaf(w)]
        if g2 is not None:
            parts.append(GaussianLeaf(g2))
        return _chain_add(parts)
    if node.op.name == "add" and node.var in g.batch:
        return GaussianLeaf(gaussian_plated_product(g, node.var))
    return None


def _h_reduce_delta(node: Reduce) -> Optional[Term]:
    body = node.body
    if not isinstance(body, DeltaLeaf):
        return None
    if node.op.name == "logaddexp" and node.var == body.atom.name:
        return TensorLeaf(scalar_tensor(0.0))
    return None


def _h_reduce_product(node: Reduce) -> Optional[Term]:
    from .gaussian import gaussian_scale

    body = node.body
    if not (
        isinstance(body, Apply)
        and body.op.name == "add"
        and body.is_scalar_real()
    ):
        return None
    v = node.var
    parts = flatten_product(body)
    if node.op.name == "add":
        n = body.free_vars.typeof(v).size
        out_parts: List[Term] = []
        for p in parts:
            if v in p.free_vars:
                out_parts.append(reduce_term(node.op, v, p))
            elif isinstance(p, TensorLeaf):
                out_parts.append(
                    TensorLeaf(tensor_apply(MUL, [scalar_tensor(float(n)), p.atom]))
                )
            elif isinstance(p, GaussianLeaf):
                out_parts.append(GaussianLeaf(gaussian_scale(p.atom, float(n))))
            elif isinstance(p, DeltaLeaf):
                return None
            else:
                out_parts.append(lift(MUL, float(n), p))
        out = out_parts[0]
        for p in out_parts[1:]:
            out = lift(ADD, out, p)
        return out

    nf = normal_form_from_parts(parts)
    named = [d for d in nf.deltas if d.name == v]
    if len(named) == 1:
        rest = NormalForm(
            tuple(d for d in nf.deltas if d is not named[0]),
            nf.tensor,
            nf.gaussian,
            nf.lazy_rest,
        )
        rest_term = rest.to_term()
        if v not in rest_term.free_vars:
            return rest_term
        return None
    if named:
        return None
    if any(v in d.point.context for d in nf.deltas):
        return None
    if any(v in t.free_vars for t in nf.lazy_rest):
        return None
    if node.op.name == "logaddexp":
        if nf.gaussian is not None and v in nf.gaussian.reals:
            w, g2 = gaussian_marginalize(nf.gaussian, v)
            return NormalForm(
                nf.deltas, _fuse_tensor(nf.tensor, w), g2, nf.lazy_rest
            ).to_term()
        if nf.gaussian is not None and v in nf.gaussian.batch:
            return None
        if nf.tensor is not None and v in nf.tensor.context:
            return NormalForm(
                nf.deltas,
                tensor_reduce(node.op, nf.tensor, v),
                nf.gaussian,
                nf.lazy_rest,
            ).to_term()
        return None
    if node.op.name == "max":
        if nf.gaussian is not None and v in nf.gaussian.context:
            return None
        if nf.tensor is not None and v in nf.tensor.context:
            return NormalForm(
                nf.deltas,
                tensor_reduce(node.op, nf.tensor, v),
                nf.gaussian,
                nf.lazy_rest,
            ).to_term()
    return None


def _h_markov(node: MarkovProd) -> Optional[Term]:
    from . import markov as _markov

    return _markov.evaluate_markov(node)


def _h_cat(node: Cat) -> Optional[Term]:
    from .gaussian import gaussian_expand_batch

    parts_nf: List[NormalForm] = []
    for p in node.parts:
        nf = normal_form_from_parts(flatten_product(p))
        if nf.deltas or nf.lazy_rest:
            return None
        parts_nf.append(nf)
    counts = node.part_counts()
    any_g = any(nf.gaussian is not None for nf in parts_nf)
    tensors: List[TensorAtom] = []
    gaussians: List[GaussianAtom] = []
    for nf, cnt in zip(parts_nf, counts):
        t = nf.tensor if nf.tensor is not None else scalar_tensor(0.0)
        pad = zeros_tensor(TypeContext([(node.over, Bounded(cnt))]))
        tensors.append(tensor_apply(ADD, [t, pad]))
        if any_g:
            g = nf.gaussian
            if g is None:
                return None
            if node.over not in g.batch and cnt > 1:
                g = gaussian_expand_batch(g, node.over, cnt)
            gaussians.append(g)
    parts: List[Term] = [TensorLeaf(tensor_cat(node.over, tensors))]
    if any_g:
        parts.append(GaussianLeaf(gaussian_cat(node.over, gaussians)))
    return _chain_add(parts)


# ---------------------------------------------------------------------------
# Lazy rules: push substitutions through structure, defer everything else.


def _h_lazy_subst(node: Subst) -> Optional[Term]:
    base = node.base
    bindings = {n: v for n, v in node.bindings if n in base.free_vars}
    if len(bindings) < len(node.bindings):
        return subst_term(base, bindings) if bindings else base
    if isinstance(base, Variable):
        return bindings[base.name]
    if isinstance(base, Apply):
        return lift(base.op, *[subst_term(a, bindings) for a in base.args])
    if isinstance(base, Subst):
        inner = base.binding_map()
        composed = {n: subst_term(v, bindings) for n, v in inner.items()}
        for n, v in bindings.items():
            if n not in inner and n in base.base.free_vars:
                composed[n] = v
        return subst_term(base.base, composed)
    if isinstance(base, Reduce):
        from .terms import alpha_rename

        if any(base.var in v.free_vars for v in bindings.values()):
            base = alpha_rename(base, fresh_name(base.var))
        return reduce_term(base.op, base.var, subst_term(base.body, bindings))
    if isinstance(base, MarkovProd):
        from .errors import InvalidMatching
        from .terms import alpha_rename

        matched = set()
        for prev, curr in base.step:
            matched.add(prev)
            matched.add(curr)
        hit = matched & set(bindings)
        if hit:
            raise InvalidMatching(
                f"cannot substitute matched names {sorted(hit)} under a"
                " chained product; rename them first"
            )
        value_fvs = set()
        for v in bindings.values():
            value_fvs.update(v.free_vars.names)
        if value_fvs & matched:
            raise InvalidMatching(
                "substitution value mentions a matched name of a chained product"
            )
        if base.timevar in value_fvs:
            base = alpha_rename(base, fresh_name(base.timevar))
        return markov_term(base.timevar, base.step, subst_term(base.body, bindings))
    if isinstance(base, Cat):
        if base.over in bindings:
            return None
        value_fvs = set()
        for v in bindings.values():
            value_fvs.update(v.free_vars.names)
        if base.over in value_fvs:
            return None
        return cat_term(base.over, [subst_term(p, bindings) for p in base.parts])
    return None


LAZY = Interpretation(
    "lazy",
    rules=[Rule(Subst, _h_lazy_subst, "push-substitution")],
)

EXACT = Interpretation(
    "exact",
    rules=[
        Rule(Variable, _h_variable, "enumerate-bounded-variable"),
        Rule(Apply, _h_apply_tensors, "numeric-pointwise"),
        Rule(Apply, _h_product_normalize, "product-normal-form"),
        Rule(Subst, _h_subst_tensor, "index-into-tensor"),
        Rule(Subst, _h_subst_gaussian, "substitute-into-gaussian"),
        Rule(Subst, _h_subst_delta, "substitute-into-point-mass"),
        Rule(Subst, _h_subst_slice, "compose-slices"),
        Rule(Subst, _h_subst_cat, "index-into-cat"),
        Rule(Reduce, _h_reduce_tensor, "reduce-tensor"),
        Rule(Reduce, _h_reduce_gaussian, "reduce-gaussian"),
        Rule(Reduce, _h_reduce_delta, "integrate-point-mass"),
        Rule(Reduce, _h_reduce_product, "reduce-product"),
        Rule(MarkovProd, _h_markov, "chain-product"),
        Rule(Cat, _h_cat, "concatenate-factors"),
    ],
    fallback=LAZY,
)
