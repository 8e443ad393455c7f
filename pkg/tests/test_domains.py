"""Types and typing contexts: construction, union, removal, conflicts."""

import pytest

from funsor.domains import (
    Bounded,
    RealArray,
    TypeContext,
    check_user_name,
    context_remove,
    context_union,
    is_discrete,
    is_real,
)
from funsor.errors import NameAbsent, TypeConflict


class TestTypes:
    def test_bounded_size(self):
        assert Bounded(3).size == 3
        assert Bounded(3).num_elements == 3
        assert Bounded(1).size == 1

    def test_bounded_rejects_bad_sizes(self):
        with pytest.raises(TypeConflict):
            Bounded(0)
        with pytest.raises(TypeConflict):
            Bounded(-2)
        with pytest.raises(TypeConflict):
            Bounded(2.0)

    def test_real_array_shapes(self):
        assert RealArray(()).shape == ()
        assert RealArray((2, 3)).num_elements == 6
        with pytest.raises(TypeConflict):
            RealArray((0,))

    def test_discrimination(self):
        assert is_discrete(Bounded(2)) and not is_real(Bounded(2))
        assert is_real(RealArray(())) and not is_discrete(RealArray(()))

    def test_equality(self):
        assert Bounded(4) == Bounded(4)
        assert Bounded(4) != Bounded(5)
        assert RealArray((2,)) == RealArray((2,))
        assert RealArray((2,)) != RealArray((3,))
        assert Bounded(2) != RealArray((2,))


class TestUserNames:
    def test_accepts_plain_names(self):
        assert check_user_name("state") == "state"

    def test_rejects_reserved_marker(self):
        with pytest.raises(TypeConflict):
            check_user_name("state#1")

    def test_rejects_empty(self):
        with pytest.raises(TypeConflict):
            check_user_name("")


class TestTypeContext:
    def test_order_preserved_equality_ignores_it(self):
        a = TypeContext([("x", Bounded(2)), ("y", RealArray(()))])
        b = TypeContext([("y", RealArray(())), ("x", Bounded(2))])
        assert a == b
        assert hash(a) == hash(b)
        assert a.names == ("x", "y")
        assert b.names == ("y", "x")

    def test_duplicates_collapse_conflicts_raise(self):
        c = TypeContext([("x", Bounded(2)), ("x", Bounded(2))])
        assert len(c) == 1
        with pytest.raises(TypeConflict):
            TypeContext([("x", Bounded(2)), ("x", Bounded(3))])

    def test_typeof_and_membership(self):
        c = TypeContext([("x", Bounded(2))])
        assert c.typeof("x") == Bounded(2)
        assert "x" in c and "y" not in c
        with pytest.raises(NameAbsent):
            c.typeof("y")

    def test_union_appends_new_names(self):
        a = TypeContext([("x", Bounded(2))])
        b = TypeContext([("x", Bounded(2)), ("y", Bounded(3))])
        assert context_union(a, b).names == ("x", "y")
        assert context_union(b, a).names == ("x", "y")

    def test_union_conflict(self):
        a = TypeContext([("x", Bounded(2))])
        b = TypeContext([("x", RealArray(()))])
        with pytest.raises(TypeConflict):
            context_union(a, b)

    def test_remove(self):
        c = TypeContext([("x", Bounded(2)), ("y", Bounded(3))])
        assert context_remove(c, "x").names == ("y",)
        with pytest.raises(NameAbsent):
            context_remove(c, "z")

    def test_restrict_keeps_order(self):
        c = TypeContext([("a", Bounded(2)), ("b", Bounded(3)), ("c", Bounded(4))])
        assert c.restrict(["c", "a"]).names == ("a", "c")

    def test_num_elements(self):
        c = TypeContext([("x", Bounded(2)), ("v", RealArray((3,)))])
        assert c.num_elements == 6

    def test_partition_by_kind(self):
        c = TypeContext([("x", Bounded(2)), ("v", RealArray((3,)))])
        assert [n for n, _ in c.discrete_entries()] == ["x"]
        assert [n for n, _ in c.real_entries()] == ["v"]
