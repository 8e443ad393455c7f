"""Point-mass factors.

A ``DeltaAtom`` names a variable and stores the point it is pinned to as
an index-free or batched tensor.  Its log density is zero at the point by
convention, so multiplying by a Delta and substituting the point is value
preserving, and summing a Delta over its own variable yields log 1 = 0.
"""
from __future__ import annotations

from .domains import TypeContext
from .errors import ContextMismatch
from .tensor import TensorAtom


class DeltaAtom:
    """A point mass ``delta(name = point)`` with a ground or batched point."""

    __slots__ = ("name", "point", "_hash")

    def __init__(self, name: str, point: TensorAtom):
        if not isinstance(name, str) or not name:
            raise ContextMismatch(f"delta needs a variable name, got {name!r}")
        if not isinstance(point, TensorAtom):
            raise ContextMismatch("delta point must be a TensorAtom")
        if name in point.context:
            raise ContextMismatch(
                f"delta variable {name!r} may not appear in its own point's context"
            )
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, name, value):
        raise AttributeError("DeltaAtom is immutable")

    @property
    def context(self) -> TypeContext:
        """Free variables: the point's context plus the named variable."""
        return point_context(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DeltaAtom):
            return NotImplemented
        return self.name == other.name and self.point == other.point

    def __hash__(self) -> int:
        if self._hash is None:
            object.__setattr__(self, "_hash", hash((self.name, self.point)))
        return self._hash

    def __repr__(self) -> str:
        return f"DeltaAtom({self.name!r})"


def point_context(delta: DeltaAtom) -> TypeContext:
    return delta.point.context.union(
        TypeContext([(delta.name, delta.point.output)])
    )


def delta_product_trigger(delta: DeltaAtom, other):
    """Pin ``delta``'s variable inside a co-factor of a product.

    Returns ``delta * other[name := point]`` as a term when the variable is
    free in ``other``, or None to decline when it is not mentioned.
    """
    # Substitution machinery lives a layer up; import here to avoid a cycle.
    from .interp import lift, subst_term, to_term
    from .ops import ADD
    from .terms import TensorLeaf, free_vars

    other = to_term(other)
    if delta.name not in free_vars(other):
        return None
    pinned = subst_term(other, {delta.name: TensorLeaf(delta.point)})
    return lift(ADD, to_term(delta), pinned)


def delta_sum_eliminate(delta: DeltaAtom, rest=None):
    """Drop ``sum_v delta(v, p) * rest`` down to ``rest``.

    Valid only when ``rest`` does not mention the variable (run
    ``delta_product_trigger`` first otherwise); returns None to decline.
    A lone delta integrates to one, so ``rest=None`` yields scalar 0.
    """
    from .interp import to_term
    from .tensor import scalar_tensor
    from .terms import free_vars

    if rest is None:
        return to_term(scalar_tensor(0.0))
    rest = to_term(rest)
    if delta.name in free_vars(rest):
        return None
    return rest
