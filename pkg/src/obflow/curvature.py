"""Curvature of a metric field in dimension 4.

Every curvature quantity is assembled pointwise from the discrete partial
derivatives of ``g`` up to fourth order.  Derivatives of intermediate tensors
(Christoffel symbols, Riemann, Schouten, Weyl, ...) are never re-differenced;
they are carried as *jets*, lists ``[T, dT, d2T, ...]`` where ``dkT`` has the
k derivative axes (over the active grid axes only) appended after the
component axes and the flattened node axis last.  Products use the Leibniz
rule, so identities such as the contracted Bianchi identity hold to roundoff.

Conventions
-----------
* ``R_ijkl = g(R(d_i, d_j) d_k, d_l)`` with ``R(X, Y) = [nabla_X, nabla_Y] -
  nabla_[X,Y]``; the round sphere has ``R_ijji > 0``.
* ``Rc_jk = g^{il} R_ijkl`` (trace over first and last slots), ``R = tr Rc``.
* ``Delta = g^{ab} nabla_a nabla_b`` (non-positive on the torus).
* In this convention the Bach tensor reads
  ``B_ij = nabla^k C_ijk + A^{kl} W_kijl`` with
  ``C_ijk = nabla_k A_ij - nabla_j A_ik``; equivalently
  ``B_ij = nabla^l nabla^k W_kijl + (1/2) R^{kl} W_kijl``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .grid import DIM, GridSpec, MetricField, TensorField, check_spd, integrate_scalar, pointwise_norm_sq
from .stencils import all_multi_indices, apply_stencil, half_width, partial_array

_LET = "bcdefghijklmnoqrstuvwxyz"
_DER = "ABCDEFGH"
_IU = np.triu_indices(DIM)


# ---------------------------------------------------------------- jet algebra


def jmul_order(spec, A, B, n, skip_top_a=False):
    """n-th derivative jet entry of ``einsum(spec, A, B)`` by the Leibniz rule.

    Jets are symmetric in their derivative axes, so one contraction per split
    size is computed and the remaining splits are axis permutations of it.
    """
    ins, out = spec.split("->")
    sa, sb = ins.split(",")
    D = _DER[:n]
    r = len(out)
    acc = None
    for s in range(n + 1):
        if skip_top_a and n and s == n:
            continue
        T = np.einsum(f"{sa}{D[:s]}...,{sb}{D[s:]}...->{out}{D}...", A[s], B[n - s])
        for S in combinations(range(n), s):
            order = list(S) + [q for q in range(n) if q not in S]
            axes = list(range(r)) + [r + order.index(q) for q in range(n)] + [r + n]
            term = T.transpose(axes)
            acc = term.copy() if acc is None else acc + term
    return acc


def jmul(spec, A, B, order):
    return [jmul_order(spec, A, B, n) for n in range(order + 1)]


def lift(arr, r, act):
    """Turn derivative axis ``r`` (active axes only) into a 4-valued component axis."""
    shp = list(arr.shape)
    shp[r] = DIM
    out = np.zeros(shp)
    idx = [slice(None)] * arr.ndim
    idx[r] = list(act)
    out[tuple(idx)] = arr
    return out


def jdiff(T, r, act):
    """Jet of the coordinate gradient; the new component index is appended last."""
    return [lift(T[k + 1], r, act) for k in range(len(T) - 1)]


def jcovd(T, variance, Gam, act, order):
    """Jet (to ``order``) of the covariant derivative; new index appended last."""
    r = len(variance)
    D = jdiff(T, r, act)[: order + 1]
    comps = _LET[:r]
    out = comps + "a"
    for s, v in enumerate(variance):
        c = comps[s]
        tspec = comps[:s] + "p" + comps[s + 1 :]
        if v == "d":
            corr = jmul(f"pa{c},{tspec}->{out}", Gam, T, order)
            D = [d - x for d, x in zip(D, corr)]
        else:
            corr = jmul(f"{c}ap,{tspec}->{out}", Gam, T, order)
            D = [d + x for d, x in zip(D, corr)]
    return D


def jinv(G, order):
    """Jets of the inverse matrix field from jets of ``G``."""
    m = np.moveaxis(G[0], -1, 0)
    inv = np.linalg.inv(m)
    inv = 0.5 * (inv + np.swapaxes(inv, 1, 2))
    Gi = [np.moveaxis(inv, 0, -1)]
    for n in range(1, order + 1):
        P = jmul_order("bc,cd->bd", Gi + [None], G, n, skip_top_a=True)
        D = _DER[:n]
        Gi.append(-np.einsum(f"bc{D}...,cd...->bd{D}...", P, Gi[0]))
    return Gi


# ------------------------------------------------------- metric derivatives


def metric_derivatives(g_vals, grid: GridSpec, p: int = 4, max_order: int = 4):
    """All partials ``d^alpha g`` with ``|alpha| <= max_order`` over active axes.

    Returns a dict keyed by sorted axis tuples; values have shape
    ``(4, 4) + grid.shape``.  Axes are differenced in increasing order, matching
    :func:`obflow.stencils.partial_array` bitwise.
    """
    act = grid.active_axes
    if act:
        grid.check_footprint(half_width(min(max_order, 4), p) if max_order else 0)
    uniq = g_vals[_IU]
    cache = {(): uniq}

    def get(t):
        if t in cache:
            return cache[t]
        a = t[-1]
        k = t.count(a)
        prefix = t[: len(t) - k]
        base = get(prefix)
        res = apply_stencil(base, base.ndim - DIM + a, k, p, grid.spacing[a])
        cache[t] = res
        return res

    out = {}
    for t in all_multi_indices(act, max_order):
        u = get(t)
        full = np.empty((DIM, DIM) + grid.shape)
        full[_IU] = u
        full[(_IU[1], _IU[0])] = u
        out[t] = full
    return out


def jets_from_derivatives(derivs, act, nodes, order=4):
    """Build jets ``G[k]`` of shape (4,4)+(nd,)*k+(n,) for a node slice."""
    nd = len(act)
    G = []
    for k in range(order + 1):
        arr = np.empty((DIM, DIM) + (nd,) * k + (nodes.stop - nodes.start,))
        for tup in product(range(nd), repeat=k):
            key = tuple(sorted(act[i] for i in tup))
            arr[(slice(None), slice(None)) + tup] = derivs[key][..., nodes]
        G.append(arr)
    return G


# ------------------------------------------------------------- assembly


def _sym_pair(X):
    return 0.5 * (X + np.swapaxes(X, 0, 1))


def assemble_pointwise(G, act, *, deturck=False, alt_bach=False, grad_rm=False):
    """All curvature quantities from metric jets ``G`` (order 4) at a batch of nodes.

    Returns a dict of arrays with components first and the node axis last.
    """
    gi_order = 3 if deturck else 2
    Gi = jinv(G, gi_order)
    dG = jdiff(G, 2, act)
    G1 = [
        0.5
        * (
            np.einsum("jli...->lij...", X)
            + np.einsum("ilj...->lij...", X)
            - np.einsum("ijl...->lij...", X)
        )
        for X in dG
    ]
    Gam = jmul("ml,lij->mij", Gi, G1, gi_order)

    dG1 = jdiff(G1, 3, act)
    lin = [np.einsum("ljki...->ijkl...", X) for X in dG1[:3]]
    quad = jmul("mjl,mik->ijkl", G1, Gam, 2)
    S = [a + b for a, b in zip(lin, quad)]
    Rm = [s - np.swapaxes(s, 0, 1) for s in S]

    Rc = jmul("il,ijkl->jk", Gi, Rm, 2)
    R = jmul("jk,jk->", Gi, Rc, 2)
    gR = jmul(",ij->ij", R, G, 2)
    A = [0.5 * (rc - gr / 6.0) for rc, gr in zip(Rc, gR)]
    w_order = 2 if alt_bach else 0
    P1 = jmul("il,jk->ijkl", A, G, w_order)
    P2 = jmul("jk,il->ijkl", A, G, w_order)
    W = [
        rm - (p1 + p2 - np.swapaxes(p1, 2, 3) - np.swapaxes(p2, 2, 3))
        for rm, p1, p2 in zip(Rm, P1, P2)
    ]

    gi = Gi[0]
    DA = jcovd(A, "dd", Gam, act, 1)
    DDA = jcovd(DA, "ddd", Gam, act, 0)[0]
    C = DA[0] - np.swapaxes(DA[0], 1, 2)
    divC = np.einsum("kb...,ijkb...->ij...", gi, DDA) - np.einsum("kb...,ikjb...->ij...", gi, DDA)
    A_up = np.einsum("ka...,lb...,ab...->kl...", gi, gi, A[0])
    AW = np.einsum("kl...,kijl...->ij...", A_up, W[0])
    B = _sym_pair(divC + AW)

    DR = jcovd(R, "", Gam, act, 1)
    DDR = jcovd(DR, "d", Gam, act, 0)[0]
    lapR = np.einsum("ab...,ab...->...", gi, DDR)
    Rc_up = np.einsum("ia...,jb...,ab...->ij...", gi, gi, Rc[0])
    rc2 = np.einsum("ij...,ij...->...", Rc_up, Rc[0])
    Q = -lapR / 6.0 - 0.5 * rc2 + R[0] ** 2 / 6.0
    Ohat = B + (lapR / 12.0) * G[0]

    out = dict(
        g=G[0],
        ginv=gi,
        Gamma=Gam[0],
        Rm=Rm[0],
        Rc=Rc[0],
        R=R[0],
        A=A[0],
        W=W[0],
        C=C,
        B=B,
        O=B,
        Ohat=Ohat,
        Q=Q,
        lapR=lapR,
        gradR=DR[0],
    )
    if grad_rm:
        out["DRm"] = jcovd(Rm, "dddd", Gam, act, 0)[0]
    if alt_bach:
        DW = jcovd(W, "dddd", Gam, act, 1)
        DDW = jcovd(DW, "ddddd", Gam, act, 0)[0]
        divdivW = np.einsum("la...,kb...,kijlba...->ij...", gi, gi, DDW)
        R_up = Rc_up
        RW = np.einsum("kl...,kijl...->ij...", R_up, W[0])
        out["B_alt"] = _sym_pair(divdivW + 0.5 * RW)
    if deturck:
        X = jmul("ij,kij->k", Gi, Gam, 3)
        DX = jcovd(X, "u", Gam, act, 2)
        DDX = jcovd(DX, "ud", Gam, act, 1)
        lapX = jmul("ab,kab->k", Gi, DDX, 1)
        gradR_up = jmul("kb,b->k", Gi, DR, 1)
        Wv = [-0.25 * lx + gr / 12.0 for lx, gr in zip(lapX, gradR_up)]
        Wl = jmul("jk,k->j", G, Wv, 1)
        DWl = jcovd(Wl, "d", Gam, act, 0)[0]
        lie = DWl + np.swapaxes(DWl, 0, 1)
        out["X"] = X[0]
        out["deturck_vector"] = Wv[0]
        out["lie"] = lie
    return out


# -------------------------------------------------------------- bundle


_SPECS = {
    "g": ("dd", ((0, 1),)),
    "ginv": ("uu", ((0, 1),)),
    "Gamma": ("udd", ((1, 2),)),
    "Rm": ("dddd", ()),
    "Rc": ("dd", ((0, 1),)),
    "R": ("", ()),
    "A": ("dd", ((0, 1),)),
    "W": ("dddd", ()),
    "C": ("ddd", ()),
    "B": ("dd", ((0, 1),)),
    "B_alt": ("dd", ((0, 1),)),
    "O": ("dd", ((0, 1),)),
    "Ohat": ("dd", ((0, 1),)),
    "Q": ("", ()),
    "lapR": ("", ()),
    "gradR": ("d", ()),
    "DRm": ("ddddd", ()),
    "X": ("u", ()),
    "deturck_vector": ("u", ()),
    "lie": ("dd", ((0, 1),)),
}


@dataclass(frozen=True, eq=False)
class CurvatureBundle:
    """Curvature tensors of one metric field (``Gamma`` is stored as a rank-3 array)."""

    g: MetricField
    accuracy: int
    fields: dict

    def __getattr__(self, name):
        try:
            return self.__dict__["fields"][name]
        except KeyError:
            raise AttributeError(name) from None

    def __contains__(self, name):
        return name in self.fields


def _workers():
    try:
        return max(1, int(os.environ.get("OBFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _chunk_size(nd, deturck):
    per_node = 4096 * max(1, nd) * (2 if deturck else 1)
    return max(64, int(4.0e6 // per_node))


def pointwise_fields(
    g_vals,
    grid: GridSpec,
    accuracy: int = 4,
    *,
    deturck: bool = False,
    alt_bach: bool = False,
    grad_rm: bool = False,
    keep=None,
):
    """Raw curvature arrays of shape ``(4,)*r + grid.shape``.

    ``keep`` restricts the returned names (all by default).  Nodes are
    processed in fixed-size chunks, optionally on ``OBFLOW_THREADS`` workers;
    results are concatenated in node order, so output is independent of the
    worker count.
    """
    act = grid.active_axes
    derivs = metric_derivatives(g_vals, grid, accuracy, 4)
    n = grid.n_nodes
    flat = {k: v.reshape(DIM, DIM, n) for k, v in derivs.items()}
    step = _chunk_size(len(act), deturck)
    slices = [slice(s, min(s + step, n)) for s in range(0, n, step)]

    def work(sl):
        G = jets_from_derivatives(flat, act, sl)
        res = assemble_pointwise(G, act, deturck=deturck, alt_bach=alt_bach, grad_rm=grad_rm)
        if keep is not None:
            res = {k: v for k, v in res.items() if k in keep}
        return res

    nw = min(_workers(), len(slices))
    if nw > 1:
        with ThreadPoolExecutor(nw) as ex:
            parts = list(ex.map(work, slices))
    else:
        parts = [work(sl) for sl in slices]
    out = {}
    for name in parts[0]:
        arr = parts[0][name] if len(parts) == 1 else np.concatenate([p[name] for p in parts], axis=-1)
        out[name] = arr.reshape(arr.shape[:-1] + grid.shape)
    return out


def curvature_bundle(
    g: MetricField,
    accuracy: int = 4,
    *,
    deturck: bool = False,
    alt_bach: bool = False,
    grad_rm: bool = False,
) -> CurvatureBundle:
    """Assemble the full :class:`CurvatureBundle` of ``g``.

    ``deturck=True`` adds the DeTurck vector field (flat background) and its
    Lie-derivative term; ``alt_bach`` adds the Bach tensor evaluated through
    the double divergence of W; ``grad_rm`` adds ``nabla Rm``.
    """
    check_spd(g.values)
    raw = pointwise_fields(
        g.values, g.grid, accuracy, deturck=deturck, alt_bach=alt_bach, grad_rm=grad_rm
    )
    fields = {}
    for name, arr in raw.items():
        if name == "g":
            continue
        var, sym = _SPECS[name]
        fields[name] = TensorField(g.grid, arr, var, sym)
    return CurvatureBundle(g, accuracy, fields)


# ------------------------------------------------ public wrappers


def connection_and_curvature(g: MetricField, accuracy: int = 4):
    b = curvature_bundle(g, accuracy, alt_bach=False)
    return {"Gamma": b.Gamma, "Rm": b.Rm, "Rc": b.Rc, "R": b.R}


def weyl(bundle: CurvatureBundle) -> TensorField:
    return bundle.W


def schouten_cotton(bundle: CurvatureBundle):
    return {"A": bundle.A, "C": bundle.C}


def bach_obstruction(bundle: CurvatureBundle):
    return {
        "B": bundle.B,
        "O": bundle.O,
        "Ohat": bundle.Ohat,
        "Q": bundle.Q,
        "lapR": bundle.lapR,
    }


# --------------------------------------- field-level covariant calculus


def christoffel(g: MetricField, accuracy: int = 4) -> np.ndarray:
    """``Gamma^k_ij`` from first differences of ``g`` (array of shape (4,4,4)+grid)."""
    grid = g.grid
    dg = gradient_array(g.values, grid, accuracy)  # dg[i, j, c] = d_c g_ij
    G1 = 0.5 * (
        np.einsum("jli...->lij...", dg) + np.einsum("ilj...->lij...", dg) - np.einsum("ijl...->lij...", dg)
    )
    m = np.moveaxis(g.values.reshape(DIM, DIM, -1), -1, 0)
    gi = np.moveaxis(np.linalg.inv(m), 0, -1).reshape((DIM, DIM) + grid.shape)
    return np.einsum("ml...,lij...->mij...", gi, G1)


def gradient_array(vals, grid: GridSpec, accuracy: int = 4):
    """Coordinate gradient with the new index appended after the component axes."""
    r = vals.ndim - DIM
    out = np.zeros(vals.shape[:r] + (DIM,) + grid.shape)
    for a in grid.active_axes:
        alpha = [0] * DIM
        alpha[a] = 1
        out[(slice(None),) * r + (a,)] = partial_array(vals, grid, alpha, accuracy)
    return out


def covariant_derivative_array(vals, variance, grid, Gamma, accuracy=4):
    r = len(variance)
    D = gradient_array(vals, grid, accuracy)
    comps = _LET[:r]
    out = comps + "a"
    for s, v in enumerate(variance):
        c = comps[s]
        tspec = comps[:s] + "p" + comps[s + 1 :]
        if v == "d":
            D -= np.einsum(f"pa{c}...,{tspec}...->{out}...", Gamma, vals)
        else:
            D += np.einsum(f"{c}ap...,{tspec}...->{out}...", Gamma, vals)
    return D


def covariant_derivative(T: TensorField, g: MetricField, accuracy: int = 4, Gamma=None) -> TensorField:
    """``nabla T`` with the derivative index appended as the last slot."""
    if T.rank > 6:
        raise ValueError("covariant derivative supports input rank <= 6")
    if Gamma is None:
        Gamma = christoffel(g, accuracy)
    vals = covariant_derivative_array(T.values, T.variance, T.grid, Gamma, accuracy)
    return TensorField(T.grid, vals, T.variance + "d", T.symmetric)


def laplacian(T: TensorField, g: MetricField, accuracy: int = 4, Gamma=None) -> TensorField:
    """Rough Laplacian ``g^{ab} nabla_b nabla_a T``."""
    if T.rank > 3:
        raise ValueError("laplacian supports rank <= 3")
    if Gamma is None:
        Gamma = christoffel(g, accuracy)
    D1 = covariant_derivative(T, g, accuracy, Gamma)
    D2 = covariant_derivative(D1, g, accuracy, Gamma)
    r = T.rank
    comps = _LET[:r]
    gi = _inv(g)
    vals = np.einsum(f"ab...,{comps}ab...->{comps}...", gi, D2.values)
    return TensorField(T.grid, vals, T.variance, T.symmetric)


def _inv(g):
    m = np.moveaxis(g.values.reshape(DIM, DIM, -1), -1, 0)
    gi = np.linalg.inv(m)
    gi = 0.5 * (gi + np.swapaxes(gi, 1, 2))
    return np.moveaxis(gi, 0, -1).reshape((DIM, DIM) + g.grid.shape)


@dataclass
class HighDerivativeNorms:
    sup: list
    l2: list
    f_m: TensorField
    fields: list


def high_derivative_norms(
    g: MetricField, m: int = 2, accuracy: int = 4, bundle: CurvatureBundle | None = None
) -> HighDerivativeNorms:
    """Norms of ``nabla^j Rm`` for ``j = 0..m`` and ``f_m = sum_{j=1}^m |nabla^j Rm|^{2/(j+2)}``.

    ``nabla Rm`` comes from the jet assembly; higher orders compose the
    stencil-based covariant derivative.
    """
    if not 0 <= m <= 3:
        raise ValueError("m must be in 0..3")
    if bundle is None:
        bundle = curvature_bundle(g, accuracy, grad_rm=m >= 1)
    Gamma = bundle.Gamma.values
    gi = bundle.ginv.values
    fields = [bundle.Rm.values]
    if m >= 1:
        fields.append(bundle.DRm.values)
    for j in range(2, m + 1):
        fields.append(covariant_derivative_array(fields[-1], "d" * (3 + j), g.grid, Gamma, accuracy))
    sup, l2 = [], []
    fm = np.zeros(g.grid.shape)
    for j, F in enumerate(fields):
        sq = np.maximum(pointwise_norm_sq(F, "d" * (4 + j), g.values, gi), 0.0)
        sup.append(float(np.sqrt(sq.max())))
        l2.append(float(np.sqrt(max(integrate_scalar(sq, g), 0.0))))
        if j >= 1:
            fm += np.sqrt(sq) ** (2.0 / (j + 2))
    return HighDerivativeNorms(sup, l2, TensorField(g.grid, fm, ""), fields)
