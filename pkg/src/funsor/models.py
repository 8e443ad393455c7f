"""Model builders: discrete chains, linear-Gaussian chains, switches, mixtures.

The chain builders return closed lazy terms, so one model can be
evaluated under several interpretations and scan strategies; the
switching and mixture builders run their collapse loop eagerly, because
the order in which mixtures are matched is part of the model.  The
helpers at the top convert moment-form conditionals
``N(out; M @ in + offset, noise)`` into the information-form blocks the
quadratic factors store, together with the constant that makes the
factor integrate to one over its output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .approx import MomentMatching
from .domains import Bounded, RealArray, TypeContext
from .errors import BoundsError, FunsorTypeError
from .gaussian import (
    LOG_2PI,
    GaussianAtom,
    _chol_solve,
    _cholesky_jitter,
    gaussian_log_normalizer,
)
from .interp import (
    LAZY,
    interpretation,
    lift,
    markov_term,
    reduce_term,
    subst_term,
    to_term,
    var,
)
from .ops import TAKE
from .tensor import TensorAtom
from .terms import Term


def conditional_gaussian(M, offset, noise) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Information-form blocks of ``N(out; M @ in + offset, noise)``.

    Returns ``(info, prec, const)`` over the stacked ``(in, out)`` vector,
    batched over any leading axes of the inputs.  Adding ``const`` makes
    the factor a normalized density in ``out`` for every ``in``.
    """
    M = np.asarray(M, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    dx = M.shape[-2]
    dz = M.shape[-1]
    sinv_m = np.linalg.solve(noise, M)
    sinv_b = np.linalg.solve(noise, offset[..., None])[..., 0]
    mt_sinv_m = np.einsum("...ij,...ik->...jk", M, sinv_m)
    mt_sinv = np.swapaxes(sinv_m, -1, -2)
    sinv = np.linalg.inv(noise)
    sinv = 0.5 * (sinv + np.swapaxes(sinv, -1, -2))
    batch = np.broadcast_shapes(
        M.shape[:-2], offset.shape[:-1], noise.shape[:-2]
    )
    d = dz + dx
    prec = np.zeros(batch + (d, d))
    prec[..., :dz, :dz] = mt_sinv_m
    prec[..., :dz, dz:] = -mt_sinv
    prec[..., dz:, :dz] = -sinv_m
    prec[..., dz:, dz:] = sinv
    info = np.zeros(batch + (d,))
    info[..., :dz] = -np.einsum("...ij,...i->...j", sinv_m, offset)
    info[..., dz:] = sinv_b
    _, logdet = np.linalg.slogdet(noise)
    quad = np.einsum("...i,...i->...", offset, sinv_b)
    const = -0.5 * (dx * LOG_2PI + logdet + quad)
    return info, prec, np.broadcast_to(const, batch)


def dense_gaussian(mean, cov) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Information-form ``(info, prec, const)`` of a normalized density."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    d = mean.shape[-1]
    prec = np.linalg.inv(cov)
    prec = 0.5 * (prec + np.swapaxes(prec, -1, -2))
    info = np.einsum("...de,...e->...d", prec, mean)
    _, logdet = np.linalg.slogdet(cov)
    quad = np.einsum("...d,...d->...", mean, info)
    const = -0.5 * (d * LOG_2PI + logdet + quad)
    return info, prec, const


def observation_factor(H, R, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadratic factor in the state from observing ``y = H @ state + noise``.

    ``y`` may carry leading batch axes; returns ``(info, prec, const)``
    where ``info`` and ``const`` share those axes.
    """
    H = np.asarray(H, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = H.shape[0]
    rinv_y = np.moveaxis(np.linalg.solve(R, np.moveaxis(y, -1, 0)), 0, -1)
    info = np.einsum("mi,...m->...i", H, rinv_y)
    prec = H.T @ np.linalg.solve(R, H)
    prec = 0.5 * (prec + prec.T)
    _, logdet = np.linalg.slogdet(R)
    quad = np.einsum("...m,...m->...", y, rinv_y)
    const = -0.5 * (m * LOG_2PI + logdet + quad)
    return info, prec, const


def _log_rows(p: np.ndarray, what: str) -> np.ndarray:
    """Log of row-stochastic data; rows must sum to one within 1e-9."""
    sums = p.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-9, rtol=0.0):
        raise FunsorTypeError(f"{what} rows must sum to 1, got sums {sums}")
    with np.errstate(divide="ignore"):
        return np.log(p)


# ---------------------------------------------------------------------------
# Discrete state chain.


@dataclass
class HmmSpec:
    """Bounded-state chain with per-step observation log-likelihoods.

    ``transition`` is a row-stochastic ``(K, K)`` matrix indexed
    ``[previous, current]`` in probability space; ``emission_loglik`` is
    ``(T, K)``: the log-likelihood of step ``t``'s observation under
    each state.  ``prior`` is a probability vector, uniform when omitted.
    """

    transition: np.ndarray
    emission_loglik: np.ndarray
    prior: Optional[np.ndarray] = None

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.emission_loglik = np.asarray(self.emission_loglik, dtype=np.float64)
        if self.prior is None:
            k = self.transition.shape[0]
            self.prior = np.full(k, 1.0 / k)
        self.prior = np.asarray(self.prior, dtype=np.float64)


def hmm_factors(spec: HmmSpec) -> Tuple[Term, Term]:
    """The prior factor and the chained product over the time axis."""
    log_trans = _log_rows(spec.transition, "transition")
    log_prior = _log_rows(spec.prior[None, :], "prior")[0]
    T, K = spec.emission_loglik.shape
    ctx = TypeContext([("t", Bounded(T)), ("prev", Bounded(K)), ("curr", Bounded(K))])
    body_data = log_trans[None, :, :] + spec.emission_loglik[:, None, :]
    body = to_term(TensorAtom(ctx, np.broadcast_to(body_data, (T, K, K))))
    chain = markov_term("t", [("prev", "curr")], body)
    prior = to_term(TensorAtom(TypeContext([("prev", Bounded(K))]), log_prior))
    return prior, chain


def build_hmm(spec: HmmSpec, elim: str = "logaddexp") -> Term:
    """Closed lazy term for the chain's log evidence.

    ``elim`` folds the state variables: ``logaddexp`` for the marginal
    likelihood, ``max`` for the best path score.
    """
    with interpretation(LAZY):
        prior, chain = hmm_factors(spec)
        joint = lift("add", prior, chain)
        out = reduce_term(elim, "prev", joint)
        out = reduce_term(elim, "curr", out)
    return out


# ---------------------------------------------------------------------------
# Linear-Gaussian state chain.


@dataclass
class KalmanSpec:
    """Linear dynamics with Gaussian noise and linear observations.

    The initial state is standard normal unless a mean and covariance
    are given.  When ``bias_cov`` is set, every observation shares one
    latent offset with that prior covariance:
    ``y_t = H x_t + bias + noise``.
    """

    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    observations: np.ndarray
    init_mean: Optional[np.ndarray] = None
    init_cov: Optional[np.ndarray] = None
    bias_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("F", "Q", "H", "R", "observations"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.F.shape[0]
        if self.init_mean is None:
            self.init_mean = np.zeros(n)
        if self.init_cov is None:
            self.init_cov = np.eye(n)
        self.init_mean = np.asarray(self.init_mean, dtype=np.float64)
        self.init_cov = np.asarray(self.init_cov, dtype=np.float64)
        if self.bias_cov is not None:
            self.bias_cov = np.asarray(self.bias_cov, dtype=np.float64)


def kalman_factors(spec: KalmanSpec) -> Tuple[Term, Term, Optional[Term]]:
    """Prior, chained product, and the shared-offset prior when present."""
    n = spec.F.shape[0]
    T, m = spec.observations.shape
    reals = TypeContext([("prev", RealArray((n,))), ("curr", RealArray((n,)))])
    i_tr, p_tr, c_tr = conditional_gaussian(spec.F, np.zeros(n), spec.Q)
    trans = lift(
        "add",
        to_term(GaussianAtom(TypeContext(), reals, i_tr, p_tr)),
        to_term(float(c_tr)),
    )
    t_ctx = TypeContext([("t", Bounded(T))])
    if spec.bias_cov is None:
        i_ob, p_ob, c_ob = observation_factor(spec.H, spec.R, spec.observations)
        obs_reals = TypeContext([("curr", RealArray((n,)))])
        obs = lift(
            "add",
            to_term(
                GaussianAtom(
                    t_ctx, obs_reals, i_ob, np.broadcast_to(p_ob, (T, n, n))
                )
            ),
            to_term(TensorAtom(t_ctx, c_ob)),
        )
        bias_prior = None
    else:
        stacked = np.concatenate([spec.H, np.eye(m)], axis=1)
        i_ob, p_ob, c_ob = observation_factor(stacked, spec.R, spec.observations)
        obs_reals = TypeContext(
            [("curr", RealArray((n,))), ("bias", RealArray((m,)))]
        )
        obs = lift(
            "add",
            to_term(
                GaussianAtom(
                    t_ctx, obs_reals, i_ob, np.broadcast_to(p_ob, (T, n + m, n + m))
                )
            ),
            to_term(TensorAtom(t_ctx, c_ob)),
        )
        i_b, p_b, c_b = dense_gaussian(np.zeros(m), spec.bias_cov)
        bias_prior = lift(
            "add",
            to_term(
                GaussianAtom(
                    TypeContext(),
                    TypeContext([("bias", RealArray((m,)))]),
                    i_b,
                    p_b,
                )
            ),
            to_term(float(c_b)),
        )
    body = lift("add", trans, obs)
    chain = markov_term("t", [("prev", "curr")], body)
    i_0, p_0, c_0 = dense_gaussian(spec.init_mean, spec.init_cov)
    prior = lift(
        "add",
        to_term(
            GaussianAtom(
                TypeContext(), TypeContext([("prev", RealArray((n,)))]), i_0, p_0
            )
        ),
        to_term(float(c_0)),
    )
    return prior, chain, bias_prior


def build_kalman(spec: KalmanSpec) -> Term:
    """Closed lazy term for the log evidence of the observations."""
    with interpretation(LAZY):
        prior, chain, bias_prior = kalman_factors(spec)
        joint = lift("add", prior, chain)
        if bias_prior is not None:
            joint = lift("add", joint, bias_prior)
        out = reduce_term("logaddexp", "prev", joint)
        out = reduce_term("logaddexp", "curr", out)
        if bias_prior is not None:
            out = reduce_term("logaddexp", "bias", out)
    return out


# ---------------------------------------------------------------------------
# Switching linear dynamics.


@dataclass
class SldsSpec:
    """Linear dynamics whose matrices switch with a bounded chain state.

    ``transition`` is row-stochastic ``(K, K)`` in probability space;
    the initial switch state is drawn from its first row.  ``F`` holds
    one ``(n, n)`` dynamics matrix per switch state; ``Q``, ``H``, ``R``
    are shared.  The continuous initial state is standard normal unless
    given.  ``window`` bounds how many time slices stay joint before the
    oldest pair is collapsed.
    """

    transition: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    init_mean: Optional[np.ndarray] = None
    init_cov: Optional[np.ndarray] = None
    window: int = 1

    def __post_init__(self):
        for name in ("transition", "F", "Q", "H", "R"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.F.shape[-1]
        if self.init_mean is None:
            self.init_mean = np.zeros(n)
        if self.init_cov is None:
            self.init_cov = np.eye(n)
        self.init_mean = np.asarray(self.init_mean, dtype=np.float64)
        self.init_cov = np.asarray(self.init_cov, dtype=np.float64)
        self.window = int(self.window)
        if self.window < 1:
            raise BoundsError(f"window must be at least 1, got {self.window}")


def build_slds_marginal(spec: SldsSpec, observations) -> Term:
    """Windowed log evidence: old slices collapse by moment matching.

    Factors enter one step at a time; once the window is full, the
    oldest continuous state and then its switch state are reduced, so at
    most ``window + 1`` slices are ever joint.
    """
    observations = np.asarray(observations, dtype=np.float64)
    log_trans = _log_rows(spec.transition, "transition")
    K = spec.transition.shape[0]
    n = spec.F.shape[-1]
    T = observations.shape[0]
    L = spec.window
    i_dyn, p_dyn, c_dyn = conditional_gaussian(
        spec.F, np.zeros((K, n)), spec.Q
    )
    i_0, p_0, c_0 = dense_gaussian(spec.init_mean, spec.init_cov)

    with interpretation(MomentMatching()):
        joint = to_term(0.0)
        for t in range(T):
            s_t = f"s{t}"
            x_t = f"x{t}"
            s_ctx = TypeContext([(s_t, Bounded(K))])
            if t == 0:
                joint = lift(
                    "add", joint, to_term(TensorAtom(s_ctx, log_trans[0]))
                )
                joint = lift(
                    "add",
                    joint,
                    to_term(
                        GaussianAtom(
                            TypeContext(),
                            TypeContext([(x_t, RealArray((n,)))]),
                            i_0,
                            p_0,
                        )
                    ),
                )
                joint = lift("add", joint, to_term(float(c_0)))
            else:
                pair_ctx = TypeContext(
                    [(f"s{t - 1}", Bounded(K)), (s_t, Bounded(K))]
                )
                joint = lift(
                    "add", joint, to_term(TensorAtom(pair_ctx, log_trans))
                )
                dyn_reals = TypeContext(
                    [(f"x{t - 1}", RealArray((n,))), (x_t, RealArray((n,)))]
                )
                joint = lift(
                    "add",
                    joint,
                    to_term(GaussianAtom(s_ctx, dyn_reals, i_dyn, p_dyn)),
                )
                joint = lift("add", joint, to_term(TensorAtom(s_ctx, c_dyn)))
            i_ob, p_ob, c_ob = observation_factor(
                spec.H, spec.R, observations[t]
            )
            joint = lift(
                "add",
                joint,
                to_term(
                    GaussianAtom(
                        TypeContext(),
                        TypeContext([(x_t, RealArray((n,)))]),
                        i_ob,
                        p_ob,
                    )
                ),
            )
            joint = lift("add", joint, to_term(float(c_ob)))
            if t >= L:
                joint = reduce_term("logaddexp", f"x{t - L}", joint)
                joint = reduce_term("logaddexp", f"s{t - L}", joint)
        # Real variables go first so the trailing switch states reduce
        # over a plain table once no quadratic factor mentions them.
        for t in range(max(0, T - L), T):
            joint = reduce_term("logaddexp", f"x{t}", joint)
        for t in range(max(0, T - L), T):
            joint = reduce_term("logaddexp", f"s{t}", joint)
    return joint


# ---------------------------------------------------------------------------
# Mixture with per-component parameter vectors.


@dataclass
class GmmSpec:
    """Mixture of linear-Gaussian components with latent per-component means.

    All quadratic inputs are in information form.  ``prior_info`` and
    ``prior_prec`` give the shared prior over each component's parameter
    vector ``z_c``; ``cond_info`` and ``cond_prec``, batched over the
    component index, give the conditional factor over the stacked
    ``(z, x)`` vector tying a datum to its component's parameters.
    Component weights are uniform.
    """

    data: np.ndarray
    prior_info: np.ndarray
    prior_prec: np.ndarray
    cond_info: np.ndarray
    cond_prec: np.ndarray

    def __post_init__(self):
        names = ("data", "prior_info", "prior_prec", "cond_info", "cond_prec")
        for name in names:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    @classmethod
    def from_moments(cls, loadings, offsets, noises, prior_mean, prior_cov, data):
        """Build the information form from per-component moment parameters.

        A datum from component ``c`` is
        ``N(loadings[c] @ z_c + offsets[c], noises[c])`` with
        ``z_c ~ N(prior_mean, prior_cov)``.
        """
        i_c, p_c, _ = conditional_gaussian(loadings, offsets, noises)
        i_z, p_z, _ = dense_gaussian(prior_mean, prior_cov)
        return cls(data, i_z, p_z, i_c, p_c)


def build_gmm(spec: GmmSpec) -> Term:
    """Log evidence of the data with mixtures collapsed by moment matching.

    Data are absorbed one at a time: the component assignment reduces
    against the running posterior over all component parameters, which
    keeps every mixture branch a proper density before it is matched.
    """
    K = spec.cond_info.shape[0]
    N, dx = spec.data.shape
    dz = spec.cond_info.shape[1] - dx
    # Normalizing constants follow from the information form: the prior
    # integrates to one over z, the conditional to one over x given z.
    prior_atom = GaussianAtom(
        TypeContext(),
        TypeContext([("z", RealArray((dz,)))]),
        spec.prior_info,
        spec.prior_prec,
    )
    c_z = -float(gaussian_log_normalizer(prior_atom).data)
    i_x = spec.cond_info[:, dz:]
    p_xx = spec.cond_prec[:, dz:, dz:]
    chol = _cholesky_jitter(p_xx)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    quad = np.einsum("...d,...d->...", i_x, _chol_solve(chol, i_x[..., None])[..., 0])
    c_c = -(0.5 * dx * LOG_2PI - 0.5 * logdet + 0.5 * quad)

    with interpretation(MomentMatching()):
        zs = var("zs", RealArray((K, dz)))
        c_ctx = TypeContext([("c", Bounded(K))])
        cond_reals = TypeContext([("z", RealArray((dz,))), ("x", RealArray((dx,)))])
        cond = lift(
            "add",
            to_term(GaussianAtom(c_ctx, cond_reals, spec.cond_info, spec.cond_prec)),
            to_term(TensorAtom(c_ctx, c_c)),
        )
        weights = to_term(TensorAtom(c_ctx, np.full(K, -math.log(K))))
        prior = lift("add", to_term(prior_atom), to_term(float(c_z)))
        prior_c = subst_term(prior, {"z": lift(TAKE, zs, var("c", Bounded(K)))})
        joint = reduce_term("add", "c", prior_c)
        for j in range(N):
            x_j = TensorAtom(TypeContext(), spec.data[j], RealArray((dx,)))
            z_of_c = lift(TAKE, zs, var("c", Bounded(K)))
            factor = subst_term(cond, {"z": z_of_c, "x": to_term(x_j)})
            mixed = lift("add", joint, lift("add", weights, factor))
            joint = reduce_term("logaddexp", "c", mixed)
        out = reduce_term("logaddexp", "zs", joint)
    return out
