"""Approximate reduction rules: moment matching and Monte Carlo.

Both interpretations intercept ``logaddexp`` reductions and fall back to
the exact rules for everything else.  Moment matching collapses a
mixture of quadratic factors over one bounded variable into the single
quadratic factor with the mixture's mean and covariance, leaving the
matched total weight behind.  Monte Carlo replaces the reduced factor
with a weighted point mass at a sampled value, so downstream factors see
the sample while the total weight stays an unbiased estimate.

Randomness is deterministic given a seed: draws come from a counter-mode
bit generator, and every draw advances the counter, so a fresh
interpretation with the same seed replays the same samples.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .delta import DeltaAtom
from .domains import Bounded, RealArray, TypeContext
from .errors import NameAbsent
from .gaussian import (
    GaussianAtom,
    _chol_solve,
    _cholesky_jitter,
    _expand_to,
    gaussian_log_normalizer,
)
from .interp import (
    EXACT,
    Interpretation,
    NormalForm,
    Rule,
    flatten_product,
    interpretation,
    lift,
    normal_form_from_parts,
    reduce_term,
)
from .ops import ADD, LOGADDEXP_REDUCE, SUB
from .tensor import TensorAtom, logsumexp, tensor_apply, tensor_reduce, zeros_tensor
from .terms import DeltaLeaf, GaussianLeaf, Reduce, TensorLeaf, Term


@dataclass(frozen=True)
class RngState:
    """A seed plus a draw counter; value-equal states replay draws."""

    seed: int
    counter: int = 0

    def advance(self, n: int = 1) -> "RngState":
        return RngState(self.seed, self.counter + n)

    def generator(self) -> np.random.Generator:
        bit = np.random.Philox(key=self.seed)
        if self.counter:
            bit = bit.advance(self.counter * (1 << 32))
        return np.random.Generator(bit)


def moment_match(
    weight: Optional[TensorAtom], g: GaussianAtom, v: str
) -> Tuple[GaussianAtom, TensorAtom]:
    """Match mean and covariance of a discrete mixture of quadratics.

    ``weight`` holds per-component log weights over ``v`` (None for a
    uniform-zero table); ``g`` is the component family, batched over
    ``v`` when components differ.  Returns the matched factor with ``v``
    gone from its batch and the total-mass tensor: the ``logaddexp``
    reduction over ``v`` of table plus component normalizer, less the
    matched factor's own normalizer, so that weight times matched factor
    integrates to exactly the mixture's mass.
    """
    norm = gaussian_log_normalizer(g)
    w_full = norm if weight is None else tensor_apply(ADD, [weight, norm])
    union = w_full.context
    if v not in union:
        raise NameAbsent(f"{v!r} indexes neither the weights nor the factor")
    axis = union.names.index(v)
    bounds = tuple(tp.size for _, tp in union.entries)
    d = g.dim

    i_full = np.broadcast_to(_expand_to(g.info_vec, g.batch, union, 1), bounds + (d,))
    p_full = np.broadcast_to(
        _expand_to(g.precision, g.batch, union, 2), bounds + (d, d)
    )
    chol = _cholesky_jitter(p_full)
    mu = _chol_solve(chol, i_full[..., None])[..., 0]
    eye = np.broadcast_to(np.eye(d), bounds + (d, d))
    cov = _chol_solve(chol, eye)

    logw = w_full.data
    total = logsumexp(logw, axis)
    p = np.exp(logw - np.expand_dims(total, axis))
    p = p / np.sum(p, axis=axis, keepdims=True)
    mu2 = np.sum(p[..., None] * mu, axis=axis)
    diff = mu - np.expand_dims(mu2, axis)
    spread = cov + diff[..., :, None] * diff[..., None, :]
    cov2 = np.sum(p[..., None, None] * spread, axis=axis)
    try:
        prec2 = np.linalg.inv(cov2)
    except np.linalg.LinAlgError:
        chol2 = _cholesky_jitter(cov2)
        eye2 = np.broadcast_to(np.eye(d), cov2.shape)
        prec2 = _chol_solve(chol2, eye2)
    prec2 = 0.5 * (prec2 + np.swapaxes(prec2, -1, -2))
    info2 = np.einsum("...de,...e->...d", prec2, mu2)

    matched = GaussianAtom(union.remove(v), g.reals, info2, prec2)
    norm2 = gaussian_log_normalizer(matched)
    w_out = tensor_apply(SUB, [w_full, norm2])
    w_red = tensor_reduce(LOGADDEXP_REDUCE, w_out, v)
    return matched, w_red


class MomentMatching(Interpretation):
    """Collapse quadratic mixtures at each reduction, exactly elsewhere."""

    def __init__(self):
        super().__init__(
            "momentmatching",
            rules=[Rule(Reduce, self._h_reduce, "match-moments")],
            fallback=EXACT,
        )

    def _h_reduce(self, node: Reduce) -> Optional[Term]:
        if node.op.name != "logaddexp":
            return None
        v = node.var
        if not isinstance(node.body.free_vars.typeof(v), Bounded):
            return None
        nf = normal_form_from_parts(flatten_product(node.body))
        if nf.deltas or nf.lazy_rest:
            return None
        if nf.gaussian is None or v not in nf.gaussian.batch:
            return None
        matched, w_red = moment_match(nf.tensor, nf.gaussian, v)
        return NormalForm((), w_red, matched, ()).to_term()


def mc_sample_discrete(
    w: TensorAtom, v: str, rest: Optional[Term], rng: RngState
) -> Term:
    """Estimate a ``logaddexp`` reduction over ``v`` by sampling it.

    Draws one categorical index per remaining batch cell from the logits
    ``w``, then returns total weight, a log-zero placeholder standing in
    for the per-draw score factor, and the point mass at the draw paired
    with ``rest``; the reduction of that pairing pins the sample into
    ``rest``.  The value is an unbiased estimate of the exact reduction.
    """
    tp = w.context.typeof(v)
    w_total = tensor_reduce(LOGADDEXP_REDUCE, w, v)
    axis = w.context.names.index(v)
    logits = np.moveaxis(w.data, axis, -1)
    probs = np.exp(logits - logsumexp(w.data, axis)[..., None])
    flat = probs.reshape(-1, tp.size)
    u = rng.generator().random(flat.shape[0])
    cdf = np.cumsum(flat, axis=-1)
    cdf[..., -1] = 1.0
    draws = np.sum(u[:, None] > cdf, axis=-1).astype(np.float64)
    rest_ctx = w.context.remove(v)
    idx = TensorAtom(
        rest_ctx, draws.reshape(tuple(t.size for _, t in rest_ctx.entries)), tp
    )
    marker = zeros_tensor(rest_ctx)
    with interpretation(EXACT):
        inner: Term = DeltaLeaf(DeltaAtom(v, idx))
        if rest is not None:
            inner = lift(ADD, inner, rest)
        picked = reduce_term(LOGADDEXP_REDUCE, v, inner)
        out = lift(ADD, lift(ADD, TensorLeaf(w_total), TensorLeaf(marker)), picked)
    return out


def mc_sample_gaussian(
    g: GaussianAtom, v: str, rest: Optional[Term], rng: RngState
) -> Optional[Term]:
    """Estimate a Gaussian marginalization over ``v`` by sampling it.

    Requires ``v`` to be the factor's only real variable (declines with
    None otherwise, so exact marginalization can run first).  The draw is
    mean plus back-solved white noise, so the sample's covariance is the
    factor's; the factor itself is replaced by its normalizer, making the
    estimate exact when ``rest`` is empty.
    """
    if v not in g.reals or len(g.reals) != 1:
        return None
    norm = gaussian_log_normalizer(g)
    bounds = tuple(tp.size for _, tp in g.batch.entries)
    d = g.dim
    chol = _cholesky_jitter(np.broadcast_to(g.precision, bounds + (d, d)))
    mu = _chol_solve(chol, g.info_vec[..., None])[..., 0]
    eps = rng.generator().standard_normal(bounds + (d,))
    # x = mu + L^{-T} eps has covariance (L L^T)^{-1}.
    shift = np.linalg.solve(
        np.swapaxes(np.broadcast_to(chol, bounds + (d, d)), -1, -2), eps[..., None]
    )[..., 0]
    sample = mu + shift
    tp = g.reals.typeof(v)
    point = TensorAtom(g.batch, sample.reshape(bounds + tp.shape), tp)
    with interpretation(EXACT):
        inner: Term = DeltaLeaf(DeltaAtom(v, point))
        if rest is not None:
            inner = lift(ADD, inner, rest)
        picked = reduce_term(LOGADDEXP_REDUCE, v, inner)
        out = lift(ADD, TensorLeaf(norm), picked)
    return out


class MonteCarlo(Interpretation):
    """Sample reduced variables, leaving weighted point masses behind."""

    def __init__(self, state):
        if isinstance(state, (int, np.integer)):
            state = RngState(int(state))
        self.state: RngState = state
        self.draws = 0
        super().__init__(
            "montecarlo",
            rules=[Rule(Reduce, self._h_reduce, "sample-reduction")],
            fallback=EXACT,
        )

    def _next_state(self) -> RngState:
        state = self.state.advance(self.draws)
        self.draws += 1
        return state

    def _h_reduce(self, node: Reduce) -> Optional[Term]:
        if node.op.name != "logaddexp":
            return None
        v = node.var
        tp = node.body.free_vars.typeof(v)
        nf = normal_form_from_parts(flatten_product(node.body))
        if nf.deltas or nf.lazy_rest:
            return None
        rest = None if nf.gaussian is None else GaussianLeaf(nf.gaussian)
        if isinstance(tp, Bounded):
            if nf.tensor is None or v not in nf.tensor.context:
                return None
            return mc_sample_discrete(nf.tensor, v, rest, self._next_state())
        if nf.gaussian is None:
            return None
        rest = None if nf.tensor is None else TensorLeaf(nf.tensor)
        return mc_sample_gaussian(nf.gaussian, v, rest, self._next_state())
