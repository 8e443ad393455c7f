"""Log-quadratic factors in information form.

A ``GaussianAtom`` represents the log density ``i'x - x'Lx/2`` over the
concatenation ``x`` of its real variables' flattened values, batched over
a context of bounded integer variables.  The parameterization is the
information form: ``i`` is the information vector and ``L`` the precision
matrix.  Atoms are canonicalized to map the zero vector to zero log
density; normalization constants travel separately as tensors.

Precision matrices must be symmetric (tolerance 1e-8) and positive
semidefinite.  Semidefiniteness is checked with a jittered Cholesky
factorization: on failure the factorization is retried once with
``1e-10 * mean(diag) * I`` added, and a second failure raises
``RankDeficient``.  The same policy drives every solve.
"""
from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .domains import Bounded, RealArray, TypeContext
from .errors import (
    ContextMismatch,
    FunsorTypeError,
    NameAbsent,
    RankDeficient,
)
from .tensor import TensorAtom, tensor_cat, tensor_index

LOG_2PI = math.log(2.0 * math.pi)


def _cholesky_jitter(mats: np.ndarray) -> np.ndarray:
    """Batched Cholesky with one jitter retry; raises ``RankDeficient``."""
    try:
        return np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        pass
    diag = np.diagonal(mats, axis1=-2, axis2=-1)
    scale = np.mean(np.abs(diag), axis=-1)[..., None, None]
    scale = np.where(scale > 0.0, scale, 1.0)
    eye = np.eye(mats.shape[-1])
    try:
        return np.linalg.cholesky(mats + 1e-10 * scale * eye)
    except np.linalg.LinAlgError:
        raise RankDeficient(
            "matrix is not positive semidefinite (jittered Cholesky failed)"
        ) from None


def _chol_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``A x = rhs`` given ``A = chol @ chol.T`` (batched)."""
    y = np.linalg.solve(chol, rhs)
    return np.linalg.solve(np.swapaxes(chol, -1, -2), y)


def _chol_logdet(chol: np.ndarray) -> np.ndarray:
    diag = np.diagonal(chol, axis1=-2, axis2=-1)
    with np.errstate(divide="ignore"):
        return 2.0 * np.sum(np.log(diag), axis=-1)


class GaussianAtom:
    """Batched log-quadratic factor over named real variables."""

    __slots__ = ("batch", "reals", "info_vec", "precision", "_hash")

    def __init__(self, batch: TypeContext, reals: TypeContext, info_vec, precision):
        if not isinstance(batch, TypeContext):
            batch = TypeContext(batch)
        if not isinstance(reals, TypeContext):
            reals = TypeContext(reals)
        for name, tp in batch.entries:
            if not isinstance(tp, Bounded):
                raise ContextMismatch(f"batch variable {name!r} must be bounded")
        if not reals.entries:
            raise ContextMismatch("a Gaussian needs at least one real variable")
        for name, tp in reals.entries:
            if not isinstance(tp, RealArray):
                raise ContextMismatch(f"real variable {name!r} must be real-typed")
        dim = sum(tp.num_elements for _, tp in reals.entries)
        bounds = tuple(tp.size for _, tp in batch.entries)
        i = np.ascontiguousarray(np.asarray(info_vec, dtype=np.float64))
        p = np.ascontiguousarray(np.asarray(precision, dtype=np.float64))
        if i.shape != bounds + (dim,):
            raise FunsorTypeError(
                f"info vector shape {i.shape}, expected {bounds + (dim,)}"
            )
        if p.shape != bounds + (dim, dim):
            raise FunsorTypeError(
                f"precision shape {p.shape}, expected {bounds + (dim, dim)}"
            )
        asym = np.max(np.abs(p - np.swapaxes(p, -1, -2))) if p.size else 0.0
        tol = 1e-8 * max(1.0, float(np.max(np.abs(p))) if p.size else 1.0)
        if asym > tol:
            raise ContextMismatch(f"precision asymmetric beyond tolerance ({asym:.3e})")
        p = (p + np.swapaxes(p, -1, -2)) / 2.0
        _cholesky_jitter(p)
        p.setflags(write=False)
        i.setflags(write=False)
        object.__setattr__(self, "batch", batch)
        object.__setattr__(self, "reals", reals)
        object.__setattr__(self, "info_vec", i)
        object.__setattr__(self, "precision", p)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, name, value):
        raise AttributeError("GaussianAtom is immutable")

    @property
    def dim(self) -> int:
        return self.info_vec.shape[-1]

    @property
    def context(self) -> TypeContext:
        return self.batch.union(self.reals)

    def offsets(self) -> Dict[str, Tuple[int, int]]:
        out = {}
        pos = 0
        for name, tp in self.reals.entries:
            out[name] = (pos, pos + tp.num_elements)
            pos += tp.num_elements
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, GaussianAtom):
            return NotImplemented
        if self.batch != other.batch or self.reals != other.reals:
            return False
        a, b = self, other
        if a.reals.entries != b.reals.entries or a.batch.entries != b.batch.entries:
            b = reorder_like(b, a)
        return bool(
            np.array_equal(a.info_vec, b.info_vec, equal_nan=True)
            and np.array_equal(a.precision, b.precision, equal_nan=True)
        )

    def __hash__(self) -> int:
        if self._hash is None:
            key = (frozenset(self.batch.entries), frozenset(self.reals.entries))
            object.__setattr__(self, "_hash", hash(key))
        return self._hash

    def __repr__(self) -> str:
        return f"GaussianAtom{self.batch.pretty()}|{self.reals.pretty()}"

    def info_atom(self) -> TensorAtom:
        return TensorAtom(self.batch, self.info_vec, RealArray((self.dim,)))

    def precision_atom(self) -> TensorAtom:
        return TensorAtom(self.batch, self.precision, RealArray((self.dim, self.dim)))


def reorder_like(g: GaussianAtom, template: GaussianAtom) -> GaussianAtom:
    """Permute batch axes and real blocks into another atom's order."""
    perm_batch = [g.batch.names.index(n) for n in template.batch.names]
    nb = len(perm_batch)
    i = g.info_vec.transpose(tuple(perm_batch) + (nb,))
    p = g.precision.transpose(tuple(perm_batch) + (nb, nb + 1))
    offs = g.offsets()
    cols: List[int] = []
    for name, _ in template.reals.entries:
        lo, hi = offs[name]
        cols.extend(range(lo, hi))
    i = i[..., cols]
    p = p[..., cols, :][..., :, cols]
    return GaussianAtom(template.batch, template.reals, i, p)


def _aligned_params(
    atoms: Sequence[GaussianAtom], union_batch: TypeContext, reals: TypeContext
):
    """Embed each atom's parameters into a shared batch and block layout."""
    dim = sum(tp.num_elements for _, tp in reals.entries)
    offsets = {}
    pos = 0
    for name, tp in reals.entries:
        offsets[name] = (pos, pos + tp.num_elements)
        pos += tp.num_elements
    bounds = tuple(tp.size for _, tp in union_batch.entries)
    out = []
    for g in atoms:
        cols = []
        for name, _ in g.reals.entries:
            lo, hi = offsets[name]
            cols.extend(range(lo, hi))
        cols = np.asarray(cols, dtype=np.int64)
        i_full = np.zeros(bounds + (dim,))
        p_full = np.zeros(bounds + (dim, dim))
        i_view = _expand_to(g.info_vec, g.batch, union_batch, 1)
        p_view = _expand_to(g.precision, g.batch, union_batch, 2)
        i_full[..., cols] = i_view
        p_full[(Ellipsis, cols[:, None], cols[None, :])] = p_view
        out.append((i_full, p_full))
    return dim, out


def _expand_to(arr: np.ndarray, ctx: TypeContext, union: TypeContext, trailing: int):
    """Permute batch axes into union order and insert singleton axes."""
    names = ctx.names
    present = [n for n, _ in union.entries if n in ctx]
    perm = [names.index(n) for n in present]
    nb = len(names)
    arr = arr.transpose(tuple(perm) + tuple(range(nb, arr.ndim)))
    idx = []
    for n, _ in union.entries:
        idx.append(slice(None) if n in ctx else np.newaxis)
    idx.extend([slice(None)] * trailing)
    view = arr[tuple(idx)]
    bounds = tuple(tp.size for _, tp in union.entries)
    return np.broadcast_to(view, bounds + arr.shape[nb:])


def gaussian_fuse(a: GaussianAtom, b: GaussianAtom) -> GaussianAtom:
    """Multiply two factors: information vectors and precisions are added.

    Real blocks missing from one operand are zero-padded; batch contexts
    are broadcast over their union.
    """
    union_batch = a.batch.union(b.batch)
    reals = a.reals.union(b.reals)
    _, params = _aligned_params([a, b], union_batch, reals)
    (ia, pa), (ib, pb) = params
    return GaussianAtom(union_batch, reals, ia + ib, pa + pb)


def gaussian_eval(g: GaussianAtom, assignment: Dict[str, np.ndarray]) -> np.ndarray:
    """Log density at ground real values, batched over the batch context."""
    parts = []
    for name, tp in g.reals.entries:
        try:
            v = np.asarray(assignment[name], dtype=np.float64)
        except KeyError:
            raise NameAbsent(f"no value for real variable {name!r}") from None
        if v.shape != tp.shape:
            raise FunsorTypeError(
                f"value for {name!r} has shape {v.shape}, expected {tp.shape}"
            )
        parts.append(v.reshape(-1))
    x = np.concatenate(parts) if parts else np.zeros(0)
    ix = np.einsum("...d,d->...", g.info_vec, x)
    qx = np.einsum("d,...de,e->...", x, g.precision, x)
    return ix - 0.5 * qx


def gaussian_log_normalizer(g: GaussianAtom) -> TensorAtom:
    """Log integral over all real variables, as a tensor over the batch."""
    chol = _cholesky_jitter(g.precision)
    logdet = _chol_logdet(chol)
    mean = _chol_solve(chol, g.info_vec[..., None])[..., 0]
    quad = np.einsum("...d,...d->...", g.info_vec, mean)
    w = 0.5 * g.dim * LOG_2PI - 0.5 * logdet + 0.5 * quad
    return TensorAtom(g.batch, w)


def _split_indices(g: GaussianAtom, name: str):
    offs = g.offsets()
    if name not in offs:
        raise NameAbsent(f"{name!r} not a real variable of {g!r}")
    lo, hi = offs[name]
    v = np.arange(lo, hi)
    u = np.asarray([k for k in range(g.dim) if not lo <= k < hi], dtype=np.int64)
    return u, v


def gaussian_marginalize(
    g: GaussianAtom, name: str
) -> Tuple[TensorAtom, Optional[GaussianAtom]]:
    """Integrate out one real variable.

    Returns the log-normalizer tensor and the Schur-complement remainder
    (``None`` when ``name`` was the only real variable).
    """
    u, v = _split_indices(g, name)
    if len(u) == 0:
        return gaussian_log_normalizer(g), None
    i_u = g.info_vec[..., u]
    i_v = g.info_vec[..., v]
    p_uu = g.precision[..., u[:, None], u[None, :]]
    p_uv = g.precision[..., u[:, None], v[None, :]]
    p_vv = g.precision[..., v[:, None], v[None, :]]
    chol = _cholesky_jitter(p_vv)
    logdet = _chol_logdet(chol)
    x = _chol_solve(chol, i_v[..., None])[..., 0]
    quad = np.einsum("...d,...d->...", i_v, x)
    dv = len(v)
    w = TensorAtom(g.batch, 0.5 * dv * LOG_2PI - 0.5 * logdet + 0.5 * quad)
    i_new = i_u - np.einsum("...uv,...v->...u", p_uv, x)
    p_new = p_uu - np.einsum(
        "...uv,...vw->...uw", p_uv, _chol_solve(chol, np.swapaxes(p_uv, -1, -2))
    )
    rest = GaussianAtom(g.batch, g.reals.remove(name), i_new, p_new)
    return w, rest


def gaussian_substitute(
    g: GaussianAtom, name: str, value: TensorAtom
) -> Tuple[TensorAtom, Optional[GaussianAtom]]:
    """Plug ground (possibly batched) values in for one real variable.

    The result is the constant tensor ``i_v'x - x'L_vv x/2`` plus, when
    other real variables remain, a Gaussian with the cross terms folded
    into its information vector.
    """
    tp = g.reals.typeof(name)
    if value.output != tp:
        raise FunsorTypeError(
            f"substituting {name!r}:{tp.pretty()} needs values of that type,"
            f" got {value.output.pretty()}"
        )
    u, v = _split_indices(g, name)
    union = g.batch.union(value.context)
    bounds = tuple(t.size for _, t in union.entries)
    dv = len(v)
    x = _expand_to(
        value.data.reshape(value.data.shape[: len(value.context)] + (dv,)),
        value.context,
        union,
        1,
    )
    i_v = _expand_to(g.info_vec[..., v], g.batch, union, 1)
    p_vv = _expand_to(g.precision[..., v[:, None], v[None, :]], g.batch, union, 2)
    t = np.einsum("...d,...d->...", i_v, x) - 0.5 * np.einsum(
        "...d,...de,...e->...", x, p_vv, x
    )
    const = TensorAtom(union, t)
    if len(u) == 0:
        return const, None
    i_u = _expand_to(g.info_vec[..., u], g.batch, union, 1)
    p_uv = _expand_to(g.precision[..., u[:, None], v[None, :]], g.batch, union, 2)
    p_uu = _expand_to(g.precision[..., u[:, None], u[None, :]], g.batch, union, 2)
    i_new = i_u - np.einsum("...uv,...v->...u", p_uv, x)
    rest = GaussianAtom(union, g.reals.remove(name), i_new, np.ascontiguousarray(p_uu))
    return const, rest


def gaussian_plated_product(g: GaussianAtom, name: str) -> GaussianAtom:
    """Product over a batch variable: parameters sum along its axis."""
    if name not in g.batch:
        raise NameAbsent(f"{name!r} not a batch variable of {g!r}")
    axis = g.batch.names.index(name)
    i = np.sum(g.info_vec, axis=axis)
    p = np.sum(g.precision, axis=axis)
    return GaussianAtom(g.batch.remove(name), g.reals, i, p)


def gaussian_index_batch(g: GaussianAtom, name: str, idx: TensorAtom) -> GaussianAtom:
    """Substitute integer values for one batch variable (a gather)."""
    i = tensor_index(g.info_atom(), name, idx)
    p = tensor_index(g.precision_atom(), name, idx)
    return GaussianAtom(i.context, g.reals, i.data, p.data)


def gaussian_cat(name: str, parts: Sequence[GaussianAtom]) -> GaussianAtom:
    """Concatenate factors along one batch variable.

    Parts lacking the variable contribute one position; real blocks are
    aligned over the union layout with zero padding.
    """
    reals = TypeContext()
    for g in parts:
        reals = reals.union(g.reals)
    embedded = []
    for g in parts:
        dim, params = _aligned_params([g], g.batch, reals)
        (iv, pv) = params[0]
        embedded.append(
            (
                TensorAtom(g.batch, iv, RealArray((dim,))),
                TensorAtom(g.batch, pv, RealArray((dim, dim))),
            )
        )
    i = tensor_cat(name, [e[0] for e in embedded])
    p = tensor_cat(name, [e[1] for e in embedded])
    return GaussianAtom(i.context, reals, i.data, p.data)


def gaussian_affine_substitute(
    g: GaussianAtom,
    name: str,
    const: TensorAtom,
    coeffs: Sequence[Tuple[str, RealArray, TensorAtom]],
) -> Tuple[TensorAtom, Optional[GaussianAtom]]:
    """Substitute ``name := const + sum_j A_j u_j`` into the factor.

    ``const`` has the substituted variable's (real) output type; each
    coefficient is ``(u_name, u_type, A)`` with ``A`` an index-free-shape
    ``(dim(name), dim(u))`` matrix tensor, possibly batched over bounded
    variables.  Retained real variables keep their blocks; coefficients
    may target retained variables, in which case contributions add.
    """
    tp = g.reals.typeof(name)
    dv = tp.num_elements
    if const.output != tp:
        raise FunsorTypeError(
            f"affine constant must have type {tp.pretty()}, got {const.output.pretty()}"
        )
    new_reals = g.reals.remove(name)
    for u_name, u_type, mat in coeffs:
        new_reals = new_reals.union(TypeContext([(u_name, u_type)]))
        du = u_type.num_elements
        if mat.output != RealArray((dv, du)):
            raise FunsorTypeError(
                f"coefficient for {u_name!r} must be R{dv}x{du},"
                f" got {mat.output.pretty()}"
            )
    if not new_reals.entries:
        # Pure constant: plain substitution.
        return gaussian_substitute(g, name, const)

    union = g.batch.union(const.context)
    for _, _, mat in coeffs:
        union = union.union(mat.context)
    bounds = tuple(t.size for _, t in union.entries)

    new_offsets = {}
    pos = 0
    for n, t in new_reals.entries:
        new_offsets[n] = (pos, pos + t.num_elements)
        pos += t.num_elements
    d_new = pos
    old_offsets = g.offsets()
    d_old = g.dim

    m_map = np.zeros(bounds + (d_old, d_new))
    m_vec = np.zeros(bounds + (d_old,))
    for n, t in g.reals.entries:
        if n == name:
            continue
        lo, hi = old_offsets[n]
        nlo, nhi = new_offsets[n]
        m_map[..., np.arange(lo, hi), np.arange(nlo, nhi)] = 1.0
    vlo, vhi = old_offsets[name]
    m_vec[..., vlo:vhi] = _expand_to(
        const.data.reshape(const.data.shape[: len(const.context)] + (dv,)),
        const.context,
        union,
        1,
    )
    for u_name, u_type, mat in coeffs:
        nlo, nhi = new_offsets[u_name]
        block = _expand_to(
            mat.data.reshape(mat.data.shape[: len(mat.context)] + (dv, u_type.num_elements)),
            mat.context,
            union,
            2,
        )
        m_map[..., vlo:vhi, nlo:nhi] += block

    i_old = _expand_to(g.info_vec, g.batch, union, 1)
    p_old = _expand_to(g.precision, g.batch, union, 2)
    t = np.einsum("...d,...d->...", i_old, m_vec) - 0.5 * np.einsum(
        "...d,...de,...e->...", m_vec, p_old, m_vec
    )
    shifted = i_old - np.einsum("...de,...e->...d", p_old, m_vec)
    i_new = np.einsum("...dn,...d->...n", m_map, shifted)
    p_new = np.einsum("...dn,...de,...em->...nm", m_map, p_old, m_map)
    const_out = TensorAtom(union, t)
    return const_out, GaussianAtom(union, new_reals, i_new, p_new)


def gaussian_rename(g: GaussianAtom, mapping: Dict[str, str]) -> GaussianAtom:
    """Relabel batch and real variables without touching parameters."""
    batch = TypeContext([(mapping.get(n, n), t) for n, t in g.batch.entries])
    reals = TypeContext([(mapping.get(n, n), t) for n, t in g.reals.entries])
    return GaussianAtom(batch, reals, g.info_vec, g.precision)


def gaussian_scale(g: GaussianAtom, k: float) -> GaussianAtom:
    """Raise the factor to a positive power: parameters scale linearly."""
    if k <= 0:
        raise FunsorTypeError(f"scale must be positive, got {k}")
    return GaussianAtom(g.batch, g.reals, k * g.info_vec, k * g.precision)


def gaussian_expand_batch(g: GaussianAtom, name: str, size: int) -> GaussianAtom:
    """Broadcast the factor over a new batch variable (appended last)."""
    if name in g.batch:
        return g
    batch = g.batch.union(TypeContext([(name, Bounded(size))]))
    nb = len(g.batch)
    bounds = g.info_vec.shape[:nb]
    i = np.broadcast_to(
        np.expand_dims(g.info_vec, nb), bounds + (size,) + g.info_vec.shape[nb:]
    )
    p = np.broadcast_to(
        np.expand_dims(g.precision, nb), bounds + (size,) + g.precision.shape[nb:]
    )
    return GaussianAtom(batch, g.reals, i, p)
