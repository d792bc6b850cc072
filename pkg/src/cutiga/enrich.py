"""Enrichment space construction for the unfitted interface solver.

Variants range from plain distance enrichment over single B-spline windows
to the stabilized space: window functions built from inverse enrichment
counts, one-sided-distance generators with the interface-aware
quasi-interpolation subtracted, then a local L2 projection and an LDL^T
re-basing of the enrichment block.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .bspline import SplineSpace2D, eval_basis_derivs
from .geometry import ImplicitInterface, MeshClassification
from .linalg import ldlt
from .quasi import ExtensionPair, qi_2d, qi_modified_2d

VARIANT_TAGS = ("iga", "giga", "sgiga", "cor-giga", "sgiga-multi", "giga-star", "sgiga2")

_MONOMIALS = ((0, 0), (1, 0), (0, 1))


@dataclass(frozen=True)
class MethodVariant:
    tag: str
    project: bool = False
    orthogonalize: bool = False

    def __post_init__(self):
        if self.tag not in VARIANT_TAGS:
            raise ValueError(f"unknown method tag {self.tag!r}; expected one of {VARIANT_TAGS}")


def variant(tag: str, project: Optional[bool] = None,
            orthogonalize: Optional[bool] = None) -> MethodVariant:
    """Method descriptor; the window-function variants get the conditioning
    transforms by default (they change the basis of the enrichment block,
    never its span)."""
    default = tag in ("sgiga2", "giga-star")
    return MethodVariant(
        tag,
        default if project is None else project,
        default if orthogonalize is None else orthogonalize,
    )


@dataclass(frozen=True)
class Generator:
    """Scalar factor of an enrichment function: a distance kind times a
    monomial, optionally with a spline subtracted and/or a ramp applied."""

    distance: str                      # 'one-sided' | 'unsigned'
    monomial: tuple[int, int]
    subtract: np.ndarray | None = None   # (ms, mt) spline coefficients
    ramp: np.ndarray | None = None       # (ms, mt) 0/1 spline coefficients


@dataclass
class EnrichedSpace:
    """Evaluable enrichment basis: functions[l] = (window_id, generator_id).

    With `T` set each function is understood as psi - T(psi) where T(psi) is
    the spline with coefficients T[:, l] over the subspace bases `sub_idx`.
    With `mixing` set the basis is re-based as psi' = psi @ mixing.
    """

    space: SplineSpace2D
    iface: ImplicitInterface | None
    variant: MethodVariant
    windows: list                      # [(bidx (k, 2) int array, wts (k,))]
    functions: list                    # [(window_id, gen_id)]
    generators: list
    mu: np.ndarray | None = None
    sub_idx: np.ndarray | None = None  # (n_sub, 2) basis indices
    T: np.ndarray | None = None        # (n_sub, n_fun)
    mixing: np.ndarray | None = None   # (n_fun, n_fun), columns = new basis
    _active: dict = field(default_factory=dict, repr=False)
    _local: dict = field(default_factory=dict, repr=False)

    @property
    def n_functions(self) -> int:
        return len(self.functions)

    def window_support_elements(self, wid: int):
        bidx, _ = self.windows[wid]
        elems = set()
        for bi, bj in bidx:
            rs, rt = self.space.basis_support_elements(int(bi), int(bj))
            elems.update((ei, ej) for ei in rs for ej in rt)
        return elems

    def _activity(self) -> dict:
        if self._active or not self.functions:
            return self._active
        per_window = {}
        for wid in range(len(self.windows)):
            per_window[wid] = self.window_support_elements(wid)
        for l, (wid, _) in enumerate(self.functions):
            for elem in per_window[wid]:
                self._active.setdefault(elem, []).append(l)
        return self._active

    def active_functions(self, elem) -> list:
        return self._activity().get(tuple(elem), [])

    def element_data(self, elem):
        """Local 3x3-block gathers for the element: window columns, generator
        ids and per-generator subtraction/ramp locals (raw descriptors; the
        projection part is handled algebraically elsewhere)."""
        elem = tuple(elem)
        if elem in self._local:
            return self._local[elem]
        funcs = self.active_functions(elem)
        sp = self.space
        i0, j0 = sp.active_bases(*elem)
        data = None
        if funcs:
            W = np.zeros((9, len(funcs)))
            gid = np.zeros(len(funcs), dtype=int)
            for col, l in enumerate(funcs):
                wid, g = self.functions[l]
                gid[col] = g
                bidx, wts = self.windows[wid]
                for (bi, bj), wv in zip(bidx, wts):
                    a, b = bi - i0, bj - j0
                    if 0 <= a < 3 and 0 <= b < 3:
                        W[3 * a + b, col] = wv
            sub = np.zeros((9, len(self.generators)))
            ramp = {}
            for g, gen in enumerate(self.generators):
                if gen.subtract is not None:
                    sub[:, g] = gen.subtract[i0 : i0 + 3, j0 : j0 + 3].ravel()
                if gen.ramp is not None:
                    ramp[g] = gen.ramp[i0 : i0 + 3, j0 : j0 + 3].ravel()
            data = (np.asarray(funcs, dtype=int), W, gid, sub, ramp)
        self._local[elem] = data
        return data

    def _sub_positions(self) -> dict:
        if not hasattr(self, "_sub_pos") or self._sub_pos is None:
            pos = {}
            if self.sub_idx is not None:
                for p, (bi, bj) in enumerate(self.sub_idx):
                    pos[(int(bi), int(bj))] = p
            self._sub_pos = pos
        return self._sub_pos

    def generator_values(self, gid: int, s, t, B=None, Gs=None, Gt=None):
        """Generator value and parametric gradient at points inside one
        element; B/Gs/Gt are the local 3x3 tensor basis rows used for the
        spline subtraction and ramp terms."""
        gen = self.generators[gid]
        s = np.asarray(s, float)
        t = np.asarray(t, float)
        sd = np.asarray(self.iface.signed_distance(s, t), float)
        ngx, ngy = self.iface.unit_normal(s, t)
        if gen.distance == "one-sided":
            pos = sd > 0
            dval = np.where(pos, sd, 0.0)
            dgx = np.where(pos, ngx, 0.0)
            dgy = np.where(pos, ngy, 0.0)
        else:
            sign = np.where(sd >= 0, 1.0, -1.0)
            dval = np.abs(sd)
            dgx, dgy = sign * ngx, sign * ngy
        a, b = gen.monomial
        mono = s**a * t**b
        dmx = a * s ** max(a - 1, 0) * t**b if a else np.zeros_like(s)
        dmy = b * s**a * t ** max(b - 1, 0) if b else np.zeros_like(s)
        val = dval * mono
        gx = dgx * mono + dval * dmx
        gy = dgy * mono + dval * dmy
        return val, gx, gy


def mu_counts(cls: MeshClassification, space: SplineSpace2D) -> np.ndarray:
    """Number of enriched elements inside each basis function's support."""
    enriched = cls.jf_plus(1).astype(int)
    S = np.zeros((enriched.shape[0] + 1, enriched.shape[1] + 1), dtype=int)
    S[1:, 1:] = np.cumsum(np.cumsum(enriched, axis=0), axis=1)
    ms, mt = space.shape
    mu = np.zeros((ms, mt), dtype=int)
    for bi in range(ms):
        rs = space._support_range(space.kv_s, bi)
        for bj in range(mt):
            rt = space._support_range(space.kv_t, bj)
            mu[bi, bj] = (S[rs.stop, rt.stop] - S[rs.start, rt.stop]
                          - S[rs.stop, rt.start] + S[rs.start, rt.start])
    return mu


def theta_window(cls: MeshClassification, space: SplineSpace2D, elem,
                 mu: np.ndarray | None = None):
    """Window of the enriched element: covering bases weighted by 1/mu."""
    ei, ej = elem
    if not cls.jf_plus(1)[ei, ej]:
        raise ValueError(f"element {elem} is not enriched")
    if mu is None:
        mu = mu_counts(cls, space)
    i0, j0 = space.active_bases(ei, ej)
    bidx, wts = [], []
    for a in range(3):
        for b in range(3):
            m = mu[i0 + a, j0 + b]
            if m <= 0:
                raise ValueError(f"covering basis ({i0+a},{j0+b}) has zero count")
            bidx.append((i0 + a, j0 + b))
            wts.append(1.0 / m)
    return np.asarray(bidx, dtype=int), np.asarray(wts)


def theta_function(cls: MeshClassification, space: SplineSpace2D, elem,
                   mu: np.ndarray | None = None):
    """Evaluable window function of one enriched element (vectorized)."""
    bidx, wts = theta_window(cls, space, elem, mu)
    coeffs = np.zeros(space.shape)
    coeffs[bidx[:, 0], bidx[:, 1]] = wts

    def theta(s, t):
        from .bspline import spline_value_points

        return spline_value_points(space, coeffs, s, t)

    return theta


def _signed_distance_extension(iface, monomial) -> ExtensionPair:
    a, b = monomial

    def f0(s, t):
        return np.asarray(iface.signed_distance(s, t), float) * s**a * t**b

    def f1(s, t):
        return np.zeros(np.broadcast(np.asarray(s), np.asarray(t)).shape)

    return ExtensionPair(f0, f1)


def _unsigned_distance_field(iface, monomial):
    a, b = monomial

    def f(s, t):
        return np.asarray(iface.distance(s, t), float) * s**a * t**b

    return f


def build_enrichment(mv: MethodVariant, space: SplineSpace2D,
                     iface: ImplicitInterface | None,
                     cls: MeshClassification | None) -> EnrichedSpace:
    """Construct the enrichment descriptors for one method variant."""
    if mv.tag == "iga":
        return EnrichedSpace(space, iface, mv, [], [], [])
    if cls is None or iface is None:
        raise ValueError("non-trivial variants need an interface and classification")
    if not np.any(cls.cut_mask):
        warnings.warn("interface does not cut the mesh; enrichment is empty")
        return EnrichedSpace(space, iface, mv, [], [], [])

    if mv.tag in ("giga", "sgiga", "cor-giga", "sgiga-multi"):
        basis_set = set()
        for ei, ej in zip(*np.nonzero(cls.jf(1))):
            basis_set.update(space.bases_anchored_at(int(ei), int(ej)))
        windows = [(np.asarray([b], dtype=int), np.ones(1))
                   for b in sorted(basis_set, key=lambda b: space.basis_id(*b))]
        if mv.tag == "giga":
            gens = [Generator("unsigned", (0, 0))]
        elif mv.tag == "sgiga":
            gens = [Generator("unsigned", (0, 0),
                              subtract=qi_2d(_unsigned_distance_field(iface, (0, 0)), space).coeffs)]
        elif mv.tag == "cor-giga":
            gens = [Generator("unsigned", (0, 0), ramp=_ramp_coeffs(space, cls))]
        else:
            gens = [Generator("unsigned", m,
                              subtract=qi_2d(_unsigned_distance_field(iface, m), space).coeffs)
                    for m in _MONOMIALS]
    else:  # giga-star, sgiga2
        mu = mu_counts(cls, space)
        enriched = sorted((int(ei), int(ej)) for ei, ej in zip(*np.nonzero(cls.jf_plus(1))))
        windows = [theta_window(cls, space, e, mu) for e in enriched]
        monos = _MONOMIALS if mv.tag == "sgiga2" else _MONOMIALS[:1]
        gens = [Generator("one-sided", m,
                          subtract=qi_modified_2d(_signed_distance_extension(iface, m),
                                                  cls, space).coeffs)
                for m in monos]
        out = EnrichedSpace(space, iface, mv, windows,
                            [(w, g) for w in range(len(windows)) for g in range(len(gens))],
                            gens, mu=mu)
        return out

    functions = [(w, g) for w in range(len(windows)) for g in range(len(gens))]
    return EnrichedSpace(space, iface, mv, windows, functions, gens)


def _ramp_coeffs(space: SplineSpace2D, cls: MeshClassification) -> np.ndarray:
    """Sum of the B-splines whose support contains a cut element."""
    coeffs = np.zeros(space.shape)
    cut = cls.cut_mask
    for bi in range(space.shape[0]):
        rs = space._support_range(space.kv_s, bi)
        for bj in range(space.shape[1]):
            rt = space._support_range(space.kv_t, bj)
            if np.any(cut[rs.start : rs.stop, rt.start : rt.stop]):
                coeffs[bi, bj] = 1.0
    return coeffs


# ---------------------------------------------------------------------------
# pointwise evaluation (reference path used by tests and error measures)
# ---------------------------------------------------------------------------

def _tensor_rows(space, elem, s, t):
    """B, Gs, Gt rows (P, 9) of the element's active bases at given points."""
    s = np.atleast_1d(np.asarray(s, float))
    t = np.atleast_1d(np.asarray(t, float))
    _, ds = eval_basis_derivs(space.kv_s, s, 1)
    _, dt = eval_basis_derivs(space.kv_t, t, 1)
    B = (ds[:, 0, :, None] * dt[:, 0, None, :]).reshape(s.size, 9)
    Gs = (ds[:, 1, :, None] * dt[:, 0, None, :]).reshape(s.size, 9)
    Gt = (ds[:, 0, :, None] * dt[:, 1, None, :]).reshape(s.size, 9)
    return B, Gs, Gt


def enrichment_at(enr: EnrichedSpace, elem, s, t, B=None, Gs=None, Gt=None):
    """Values and parametric gradients (P, n_active) of the active raw
    descriptor functions on one element."""
    data = enr.element_data(tuple(elem))
    s = np.atleast_1d(np.asarray(s, float))
    if data is None:
        z = np.zeros((s.size, 0))
        return np.asarray([], dtype=int), z, z.copy(), z.copy()
    funcs, W, gid, subloc, ramploc = data
    t = np.atleast_1d(np.asarray(t, float))
    if B is None:
        B, Gs, Gt = _tensor_rows(enr.space, elem, s, t)
    ngen = len(enr.generators)
    gv = np.zeros((s.size, ngen))
    ggx = np.zeros((s.size, ngen))
    ggy = np.zeros((s.size, ngen))
    for g in range(ngen):
        if not np.any(gid == g):
            continue
        val, gx, gy = enr.generator_values(g, s, t)
        if g in ramploc:
            rv = B @ ramploc[g]
            rgx = Gs @ ramploc[g]
            rgy = Gt @ ramploc[g]
            gx = gx * rv + val * rgx
            gy = gy * rv + val * rgy
            val = val * rv
        if enr.generators[g].subtract is not None:
            val = val - B @ subloc[:, g]
            gx = gx - Gs @ subloc[:, g]
            gy = gy - Gt @ subloc[:, g]
        gv[:, g] = val
        ggx[:, g] = gx
        ggy[:, g] = gy
    Wv = B @ W
    Wgx = Gs @ W
    Wgy = Gt @ W
    vals = Wv * gv[:, gid]
    dgx = Wgx * gv[:, gid] + Wv * ggx[:, gid]
    dgy = Wgy * gv[:, gid] + Wv * ggy[:, gid]
    return funcs, vals, dgx, dgy


def _element_of_point(space, s, t):
    from .bspline import find_span

    si = int(find_span(space.kv_s, s))
    ti = int(find_span(space.kv_t, t))
    ei = int(np.searchsorted(space.kv_s.span_knot_indices, si, side="right") - 1)
    ej = int(np.searchsorted(space.kv_t.span_knot_indices, ti, side="right") - 1)
    return ei, ej


def psi_point(enr: EnrichedSpace, l: int, s: float, t: float, with_mixing=True):
    """Scalar value and parametric gradient of one enrichment function,
    including the projection part and, when present and requested, the
    mixing re-basing psi'_l = sum_k mixing[k, l] psi_k.
    """
    elem = _element_of_point(enr.space, s, t)
    funcs, vals, dgx, dgy = enrichment_at(enr, elem, [s], [t])
    full = np.zeros(enr.n_functions)
    fgx = np.zeros(enr.n_functions)
    fgy = np.zeros(enr.n_functions)
    full[funcs] = vals[0]
    fgx[funcs] = dgx[0]
    fgy[funcs] = dgy[0]
    if enr.T is not None:
        B, Gs, Gt = _tensor_rows(enr.space, elem, [s], [t])
        i0, j0 = enr.space.active_bases(*elem)
        pos = enr._sub_positions()
        for a in range(3):
            for b in range(3):
                p = pos.get((i0 + a, j0 + b))
                if p is not None:
                    full -= B[0, 3 * a + b] * enr.T[p, :]
                    fgx -= Gs[0, 3 * a + b] * enr.T[p, :]
                    fgy -= Gt[0, 3 * a + b] * enr.T[p, :]
    if enr.mixing is not None and with_mixing:
        return (float(full @ enr.mixing[:, l]),
                float(fgx @ enr.mixing[:, l]),
                float(fgy @ enr.mixing[:, l]))
    return float(full[l]), float(fgx[l]), float(fgy[l])


# ---------------------------------------------------------------------------
# stabilization
# ---------------------------------------------------------------------------

def projection_subspace(space: SplineSpace2D, enriched_mask: np.ndarray) -> np.ndarray:
    """Bases whose support meets an enriched element, as (n_sub, 2) indices."""
    out = []
    for bi in range(space.shape[0]):
        rs = space._support_range(space.kv_s, bi)
        for bj in range(space.shape[1]):
            rt = space._support_range(space.kv_t, bj)
            if np.any(enriched_mask[rs.start : rs.stop, rt.start : rt.stop]):
                out.append((bi, bj))
    return np.asarray(out, dtype=int)


def apply_projection_T(enr: EnrichedSpace, cache) -> EnrichedSpace:
    """Subtract the local L2 projection onto the spline subspace spanned by
    the bases touching enriched elements; the total space is unchanged."""
    if not enr.functions:
        return enr
    space = enr.space
    cls = cache.cls
    sub_idx = projection_subspace(space, cls.jf_plus(1))
    n_sub = len(sub_idx)
    pos = {(int(bi), int(bj)): p for p, (bi, bj) in enumerate(sub_idx)}

    elements = set()
    for p, (bi, bj) in enumerate(sub_idx):
        rs, rt = space.basis_support_elements(int(bi), int(bj))
        elements.update((ei, ej) for ei in rs for ej in rt)

    M = np.zeros((n_sub, n_sub))
    G = np.zeros((n_sub, enr.n_functions))
    for elem in sorted(elements):
        pts, wts, _ = cache.element_rule(elem)
        B, Gs, Gt = _tensor_rows(space, elem, pts[:, 0], pts[:, 1])
        i0, j0 = space.active_bases(*elem)
        loc = [pos.get((i0 + a, j0 + b)) for a in range(3) for b in range(3)]
        cols = [c for c, p in enumerate(loc) if p is not None]
        rows = [loc[c] for c in cols]
        if not cols:
            continue
        Bw = B[:, cols] * wts[:, None]
        M[np.ix_(rows, rows)] += Bw.T @ B[:, cols]
        funcs, vals, _, _ = enrichment_at(enr, elem, pts[:, 0], pts[:, 1], B, Gs, Gt)
        if funcs.size:
            G[np.ix_(rows, funcs)] += Bw.T @ vals
    try:
        cho = sla.cho_factor(M, lower=True)
    except sla.LinAlgError as exc:
        raise ValueError("projection mass matrix is singular") from exc
    T = sla.cho_solve(cho, G)
    return replace_space(enr, sub_idx=sub_idx, T=T)


def replace_space(enr: EnrichedSpace, **kw) -> EnrichedSpace:
    new = type(enr)(enr.space, enr.iface, enr.variant, enr.windows,
                    enr.functions, enr.generators, mu=enr.mu,
                    sub_idx=enr.sub_idx, T=enr.T, mixing=enr.mixing)
    for k, v in kw.items():
        setattr(new, k, v)
    return new


def subset(enr: EnrichedSpace, keep) -> EnrichedSpace:
    """Restrict the space to the retained function indices."""
    keep = np.asarray(keep, dtype=int)
    funcs = [enr.functions[i] for i in keep]
    T = enr.T[:, keep] if enr.T is not None else None
    new = type(enr)(enr.space, enr.iface, enr.variant, enr.windows,
                    funcs, enr.generators, mu=enr.mu,
                    sub_idx=enr.sub_idx, T=T, mixing=None)
    return new


def orthogonalize_ldl(K_EE, enr: EnrichedSpace, drop_tol: float | None = None):
    """Re-base the enrichment block so its energy Gram matrix becomes the
    pivot diagonal; returns (space with mixing, kept ids, pivot diagonal)."""
    n = enr.n_functions
    if n == 0:
        return enr, np.arange(0), np.zeros(0)
    A = K_EE.toarray() if hasattr(K_EE, "toarray") else np.asarray(K_EE)
    if drop_tol is None:
        L, d = ldlt(A)
        kept = np.arange(n)
        base = enr
    else:
        L, d, kept = ldlt(A, drop_tol=drop_tol)
        base = subset(enr, kept) if kept.size < n else enr
    C = sla.solve_triangular(L, np.eye(len(d)), lower=True,
                             unit_diagonal=True).T  # L^{-T}
    out = replace_space(base, mixing=C)
    return out, kept, d
