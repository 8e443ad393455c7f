"""Contraction planning: singleton pushing, greedy pairing, plan execution.

The oracle for every planned contraction is the unplanned one: fuse all
factors with a pointwise sum and reduce the variables one at a time.
"""

import numpy as np
import pytest

from funsor.domains import Bounded, TypeContext
from funsor.interp import EXACT, LAZY, interpret, interpretation, lift, reduce_term
from funsor.ops import REDUCE_OPS
from funsor.optimize import (
    OPTIMIZE,
    ContractionPlan,
    context_cost,
    contract,
    execute_plan,
    greedy_plan,
    push_singleton_sums,
)
from funsor.tensor import TensorAtom
from funsor.terms import Reduce, TensorLeaf


def table(rng, entries):
    ctx = TypeContext(entries)
    shape = tuple(tp.size for _, tp in ctx.entries)
    return TensorLeaf(TensorAtom(ctx, rng.normal(size=shape)))


def brute_reduce(op_name, rvars, parts):
    with interpretation(EXACT):
        out = parts[0]
        for p in parts[1:]:
            out = lift("add", out, p)
        for v in rvars:
            out = reduce_term(op_name, v, out)
    return interpret(EXACT, out)


def random_factor_graph(rng, n_vars=4, n_factors=4, max_bound=3):
    names = [f"v{k}" for k in range(n_vars)]
    bounds = {n: int(rng.integers(2, max_bound + 1)) for n in names}
    parts = []
    for _ in range(n_factors):
        k = int(rng.integers(1, min(3, n_vars) + 1))
        chosen = list(rng.choice(names, size=k, replace=False))
        parts.append(table(rng, [(n, Bounded(bounds[n])) for n in chosen]))
    mentioned = set()
    for p in parts:
        mentioned |= set(p.free_vars.names)
    return parts, sorted(mentioned)


class TestCost:
    def test_discrete_cost_is_element_count(self):
        ctx = TypeContext([("i", Bounded(2)), ("j", Bounded(5))])
        assert context_cost(ctx) == 10.0

    def test_empty_context_costs_one(self):
        assert context_cost(TypeContext()) == 1.0


class TestPushSingletonSums:
    def test_private_variable_is_pushed(self):
        rng = np.random.default_rng(0)
        a = table(rng, [("i", Bounded(2)), ("j", Bounded(3))])
        b = table(rng, [("i", Bounded(2))])
        out, residual = push_singleton_sums([a, b], ["i", "j"])
        assert residual == {"i"}
        assert "j" not in out[0].free_vars
        assert out[1] is b

    def test_shared_variable_stays(self):
        rng = np.random.default_rng(1)
        a = table(rng, [("i", Bounded(2))])
        b = table(rng, [("i", Bounded(2))])
        out, residual = push_singleton_sums([a, b], ["i"])
        assert residual == {"i"}
        assert out[0] is a and out[1] is b

    def test_value_unchanged(self):
        rng = np.random.default_rng(2)
        parts, rvars = random_factor_graph(rng)
        pushed, residual = push_singleton_sums(list(parts), rvars)
        with interpretation(EXACT):
            done = brute_reduce("logaddexp", sorted(residual), pushed)
        want = brute_reduce("logaddexp", rvars, parts)
        np.testing.assert_allclose(done.atom.data, want.atom.data, rtol=1e-12)


class TestGreedyPlan:
    def test_plan_shape(self):
        rng = np.random.default_rng(3)
        parts = [
            table(rng, [("i", Bounded(2)), ("j", Bounded(3))]),
            table(rng, [("j", Bounded(3)), ("k", Bounded(2))]),
            table(rng, [("k", Bounded(2))]),
        ]
        plan = greedy_plan(parts, ["j", "k"])
        assert isinstance(plan, ContractionPlan)
        assert len(plan.steps) == len(parts) - 1
        planned = {v for _, _, rvs in plan.steps for v in rvs}
        assert planned | set(plan.final_vars) == {"j", "k"}
        assert plan.estimated_cost > 0.0

    def test_set_input_gives_stable_plan(self):
        rng = np.random.default_rng(4)
        parts, rvars = random_factor_graph(rng, n_vars=5, n_factors=5)
        plans = [greedy_plan(parts, set(rvars)) for _ in range(5)]
        first = plans[0]
        for p in plans[1:]:
            assert p.steps == first.steps
            assert p.final_vars == first.final_vars
            assert p.estimated_cost == first.estimated_cost

    def test_chain_cost_beats_worst_order(self):
        # a chain i-j-k-l: greedy pairing must not build the full joint
        rng = np.random.default_rng(5)
        b = 4
        parts = [
            table(rng, [("i", Bounded(b)), ("j", Bounded(b))]),
            table(rng, [("j", Bounded(b)), ("k", Bounded(b))]),
            table(rng, [("k", Bounded(b)), ("l", Bounded(b))]),
        ]
        plan = greedy_plan(parts, ["j", "k"])
        full_joint = float(b**4)
        assert plan.estimated_cost < 2 * full_joint


class TestExecutePlan:
    def test_matches_brute_force(self):
        for seed in range(8):
            rng = np.random.default_rng(seed)
            parts, rvars = random_factor_graph(rng)
            pushed, residual = push_singleton_sums(list(parts), rvars)
            plan = greedy_plan(pushed, sorted(residual))
            got = interpret(EXACT, execute_plan(plan, pushed))
            want = brute_reduce("logaddexp", rvars, parts)
            np.testing.assert_allclose(got.atom.data, want.atom.data, rtol=1e-10)

    def test_max_semiring(self):
        for seed in range(8):
            rng = np.random.default_rng(100 + seed)
            parts, rvars = random_factor_graph(rng)
            got = interpret(EXACT, contract("max", rvars, parts))
            want = brute_reduce("max", rvars, parts)
            np.testing.assert_allclose(got.atom.data, want.atom.data, rtol=1e-12)

    def test_empty_reduction_is_identity(self):
        rng = np.random.default_rng(6)
        parts = [table(rng, [("i", Bounded(2))]), table(rng, [("i", Bounded(2))])]
        got = interpret(EXACT, contract("logaddexp", [], parts))
        want = brute_reduce("logaddexp", [], parts)
        np.testing.assert_allclose(got.atom.data, want.atom.data)
        assert set(got.atom.context.names) == {"i"}


class TestOptimizeInterpretation:
    def test_agrees_with_exact_on_random_graphs(self):
        for seed in range(10):
            rng = np.random.default_rng(200 + seed)
            parts, rvars = random_factor_graph(rng, n_vars=5, n_factors=5)
            with interpretation(LAZY):
                node = parts[0]
                for p in parts[1:]:
                    node = lift("add", node, p)
                for v in rvars:
                    node = reduce_term("logaddexp", v, node)
            got = interpret(OPTIMIZE, node)
            want = interpret(EXACT, node)
            np.testing.assert_allclose(got.atom.data, want.atom.data, rtol=1e-10)

    def test_nested_sums_plan_jointly(self):
        rng = np.random.default_rng(7)
        parts = [
            table(rng, [("i", Bounded(3)), ("j", Bounded(3))]),
            table(rng, [("j", Bounded(3)), ("k", Bounded(3))]),
        ]
        with interpretation(LAZY):
            node = lift("add", parts[0], parts[1])
            node = reduce_term("logaddexp", "i", node)
            node = reduce_term("logaddexp", "j", node)
            node = reduce_term("logaddexp", "k", node)
        got = interpret(OPTIMIZE, node)
        want = interpret(EXACT, node)
        np.testing.assert_allclose(got.atom.data, want.atom.data, rtol=1e-12)
        assert got.atom.context.names == ()
