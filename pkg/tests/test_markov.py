"""Chained products over a time axis: sequential fold and doubling scan.

The oracle is the explicit left fold: eliminate the linking variable
between consecutive slices one step at a time with plain numpy.
"""

import math

import numpy as np
import pytest

from funsor.domains import Bounded, RealArray, TypeContext
from funsor.errors import InvalidMatching
from funsor.gaussian import GaussianAtom
from funsor.interp import (
    EXACT,
    LAZY,
    interpret,
    interpretation,
    lift,
    markov_term,
    reduce_term,
    to_term,
)
from funsor.markov import (
    SCAN_MODES,
    markov_parallel,
    markov_sequential,
    scan_mode,
    validate_step,
)
from funsor.tensor import TensorAtom
from funsor.terms import (
    GaussianLeaf,
    MarkovProd,
    TensorLeaf,
    Variable,
    free_vars,
    substitute,
)


def chain_body(rng, T, K):
    ctx = TypeContext([("t", Bounded(T)), ("prev", Bounded(K)), ("curr", Bounded(K))])
    return TensorLeaf(TensorAtom(ctx, rng.normal(size=(T, K, K))))


def fold_chain(body_data, combine):
    """Left fold over time of (K, K) slices, eliminating the middle axis."""
    out = body_data[0]
    for t in range(1, body_data.shape[0]):
        out = combine(out, body_data[t])
    return out


def logaddexp_compose(a, b):
    return np.logaddexp.reduce(a[:, :, None] + b[None, :, :], axis=1)


def max_compose(a, b):
    return np.max(a[:, :, None] + b[None, :, :], axis=1)


class TestValidateStep:
    def test_accepts_legal_matching(self):
        rng = np.random.default_rng(0)
        body = chain_body(rng, 4, 2)
        validate_step(body, "t", (("prev", "curr"),))

    def test_rejects_timevar_in_matching(self):
        rng = np.random.default_rng(0)
        body = chain_body(rng, 4, 2)
        with pytest.raises(InvalidMatching):
            validate_step(body, "t", (("t", "curr"),))

    def test_rejects_repeated_names(self):
        rng = np.random.default_rng(0)
        body = chain_body(rng, 4, 2)
        with pytest.raises(InvalidMatching):
            validate_step(body, "t", (("prev", "prev"),))

    def test_rejects_unbound_names(self):
        rng = np.random.default_rng(0)
        body = chain_body(rng, 4, 2)
        with pytest.raises(InvalidMatching):
            validate_step(body, "t", (("prev", "elsewhere"),))

    def test_rejects_mismatched_types(self):
        rng = np.random.default_rng(0)
        ctx = TypeContext(
            [("t", Bounded(3)), ("prev", Bounded(2)), ("curr", Bounded(4))]
        )
        body = TensorLeaf(TensorAtom(ctx, rng.normal(size=(3, 2, 4))))
        with pytest.raises(InvalidMatching):
            validate_step(body, "t", (("prev", "curr"),))


class TestSequential:
    def test_matches_explicit_fold(self):
        rng = np.random.default_rng(1)
        T, K = 6, 3
        body = chain_body(rng, T, K)
        out = interpret(EXACT, markov_sequential(body, "t", (("prev", "curr"),)))
        want = fold_chain(body.atom.data, logaddexp_compose)
        np.testing.assert_allclose(out.atom.data, want, rtol=1e-12)

    def test_single_step_is_the_slice(self):
        rng = np.random.default_rng(2)
        body = chain_body(rng, 1, 3)
        out = interpret(EXACT, markov_sequential(body, "t", (("prev", "curr"),)))
        np.testing.assert_allclose(out.atom.data, body.atom.data[0])


class TestParallel:
    def test_matches_sequential(self):
        rng = np.random.default_rng(3)
        for T in (1, 2, 3, 5, 8, 13):
            body = chain_body(rng, T, 3)
            seq = interpret(EXACT, markov_sequential(body, "t", (("prev", "curr"),)))
            par = interpret(EXACT, markov_parallel(body, "t", (("prev", "curr"),)))
            np.testing.assert_allclose(
                par.atom.data, seq.atom.data, rtol=1e-10, atol=1e-12
            )

    def test_level_count_is_log2_ceiling(self):
        rng = np.random.default_rng(4)
        for T in (1, 2, 3, 5, 8, 16, 33):
            body = chain_body(rng, T, 2)
            stats = {}
            markov_parallel(body, "t", (("prev", "curr"),), stats=stats)
            assert stats["levels"] == math.ceil(math.log2(T))

    def test_max_elimination(self):
        rng = np.random.default_rng(5)
        T, K = 7, 3
        body = chain_body(rng, T, K)
        want = fold_chain(body.atom.data, max_compose)
        node = MarkovProd("t", (("prev", "curr"),), body)
        for mode in SCAN_MODES:
            with scan_mode(mode, elim="max"):
                got = interpret(EXACT, node)
            np.testing.assert_allclose(got.atom.data, want, rtol=1e-12)


class TestScanModeContext:
    def test_interpret_respects_mode(self):
        rng = np.random.default_rng(6)
        body = chain_body(rng, 5, 2)
        with interpretation(LAZY):
            node = markov_term("t", (("prev", "curr"),), body)
        results = []
        for mode in SCAN_MODES:
            with scan_mode(mode):
                results.append(interpret(EXACT, node).atom.data)
        np.testing.assert_allclose(results[0], results[1], rtol=1e-10)

    def test_stats_only_when_requested(self):
        rng = np.random.default_rng(7)
        body = chain_body(rng, 4, 2)
        stats = {}
        with scan_mode("parallel", stats=stats):
            interpret(EXACT, MarkovProd("t", (("prev", "curr"),), body))
        assert stats["levels"] == 2


class TestGaussianChain:
    def test_real_state_chain_agrees_across_modes(self):
        rng = np.random.default_rng(8)
        T, n = 6, 2
        F = 0.8 * np.eye(n) + 0.05 * rng.normal(size=(n, n))
        Q = 0.5 * np.eye(n)
        Qi = np.linalg.inv(Q)
        prec = np.block([[F.T @ Qi @ F, -F.T @ Qi], [-Qi @ F, Qi]])
        reals = TypeContext([("prev", RealArray((n,))), ("curr", RealArray((n,)))])
        step = GaussianAtom(TypeContext(), reals, np.zeros(2 * n), prec)
        with interpretation(LAZY):
            body = lift(
                "add",
                GaussianLeaf(step),
                to_term(
                    TensorAtom(
                        TypeContext([("t", Bounded(T))]), rng.normal(size=T) * 0.1
                    )
                ),
            )
        outs = {}
        for mode in SCAN_MODES:
            with scan_mode(mode):
                node = (
                    markov_sequential(body, "t", (("prev", "curr"),))
                    if mode == "sequential"
                    else markov_parallel(body, "t", (("prev", "curr"),))
                )
                outs[mode] = interpret(EXACT, node)
        a, b = outs["sequential"], outs["parallel"]
        from funsor.interp import normalize

        nfa, nfb = normalize(a), normalize(b)
        xv = rng.normal(size=n)
        from funsor.gaussian import gaussian_eval

        va = float(nfa.tensor.data) if nfa.tensor is not None else 0.0
        vb = float(nfb.tensor.data) if nfb.tensor is not None else 0.0
        pt = {"prev": xv, "curr": -xv}
        np.testing.assert_allclose(
            va + gaussian_eval(nfa.gaussian, pt),
            vb + gaussian_eval(nfb.gaussian, pt),
            rtol=1e-9,
            atol=1e-9,
        )


class TestSubstitutionGuard:
    def test_matched_names_are_protected(self):
        rng = np.random.default_rng(9)
        node = MarkovProd("t", (("prev", "curr"),), chain_body(rng, 3, 2))
        with pytest.raises(InvalidMatching):
            substitute(node, {"prev": Variable("curr", Bounded(2))})
        with pytest.raises(InvalidMatching):
            substitute(node, {"prev": Variable("fresh", Bounded(2))})

    def test_side_variables_substitute_freely(self):
        rng = np.random.default_rng(10)
        ctx = TypeContext(
            [
                ("t", Bounded(3)),
                ("prev", Bounded(2)),
                ("curr", Bounded(2)),
                ("cond", Bounded(2)),
            ]
        )
        body = TensorLeaf(TensorAtom(ctx, rng.normal(size=(3, 2, 2, 2))))
        node = MarkovProd("t", (("prev", "curr"),), body)
        out = substitute(node, {"cond": Variable("side", Bounded(2))})
        assert isinstance(out, MarkovProd)
        assert sorted(free_vars(out).names) == ["curr", "prev", "side"]
