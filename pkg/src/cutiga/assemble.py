"""Galerkin assembly of the block system for the elliptic interface problem,
diagonal scaling, constrained solve and error norms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .bspline import GeometryMap, identity_map
from .enrich import EnrichedSpace, _tensor_rows, enrichment_at, subset
from .linalg import solve_constrained
from .quadrature import RuleCache

JAC_TOL = 1e-12
ZERO_ROW_REL = 1e-14


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class SidedExact:
    """Exact solution per level-set side, with physical gradients."""

    u_pos: Callable
    u_neg: Callable
    grad_pos: Callable   # (s, t) -> (ux, uy) cartesian components
    grad_neg: Callable

    def u(self, s, t, pos_mask):
        return np.where(pos_mask, self.u_pos(s, t), self.u_neg(s, t))

    def grad(self, s, t, pos_mask):
        gxp, gyp = self.grad_pos(s, t)
        gxn, gyn = self.grad_neg(s, t)
        return np.where(pos_mask, gxp, gxn), np.where(pos_mask, gyp, gyn)


@dataclass(frozen=True)
class ProblemData:
    """Coefficients and data of the Neumann interface problem.

    The positive level-set side carries a_pos. f(s, t, pos_mask) is the
    source, g(s, t, nx, ny, pos_mask) the boundary flux against the outward
    physical normal, q(s, t) the interface flux jump.
    """

    a_pos: float
    a_neg: float
    f: Optional[Callable] = None
    g: Optional[Callable] = None
    q: Optional[Callable] = None
    exact: Optional[SidedExact] = None
    gmap: GeometryMap = field(default_factory=identity_map)

    def __post_init__(self):
        if self.a_pos <= 0 or self.a_neg <= 0:
            raise ValueError("diffusion coefficients must be positive")

    def a(self, pos_mask):
        return np.where(pos_mask, self.a_pos, self.a_neg)


@dataclass
class AssembledSystem:
    space: object
    enr: EnrichedSpace
    K_OO: sp.csr_matrix
    K_OE: sp.csr_matrix
    K_EE: sp.csr_matrix
    F_O: np.ndarray
    F_E: np.ndarray
    w_O: np.ndarray       # integrals of the trial functions (mean constraint)
    w_E: np.ndarray
    target: float         # integral of the exact solution, 0 when unknown
    notes: dict = field(default_factory=dict)

    @property
    def n_orig(self) -> int:
        return self.K_OO.shape[0]

    @property
    def n_enr(self) -> int:
        return self.K_EE.shape[0]

    @property
    def ndof(self) -> int:
        return self.n_orig + self.n_enr

    def full_matrix(self) -> sp.csr_matrix:
        if self.n_enr == 0:
            return self.K_OO.tocsr()
        return sp.bmat([[self.K_OO, self.K_OE], [self.K_OE.T, self.K_EE]]).tocsr()

    def full_rhs(self) -> np.ndarray:
        return np.concatenate([self.F_O, self.F_E])

    def full_constraint(self) -> np.ndarray:
        return np.concatenate([self.w_O, self.w_E])


def _phys_grads(J, det, Gs, Gt):
    gx = (J[:, 1, 1, None] * Gs - J[:, 1, 0, None] * Gt) / det[:, None]
    gy = (-J[:, 0, 1, None] * Gs + J[:, 0, 0, None] * Gt) / det[:, None]
    return gx, gy


def assemble(space, enr: EnrichedSpace, cls, iface, data: ProblemData,
             cache: RuleCache | None = None) -> AssembledSystem:
    """Element-by-element assembly; cut elements use the cached cut-cell
    rules, the interface term uses the polyline rule, boundary edges are
    split at level-set crossings. Projection stabilization, when carried by
    the space, is applied to the finished blocks (exact re-basing)."""
    if cache is None:
        cache = RuleCache(space, iface, cls)
    gmap = data.gmap
    ms, mt = space.shape
    n_orig = ms * mt
    n_enr = enr.n_functions

    oo_r, oo_c, oo_v = [], [], []
    oe_r, oe_c, oe_v = [], [], []
    ee_r, ee_c, ee_v = [], [], []
    F_O = np.zeros(n_orig)
    F_E = np.zeros(n_enr)
    w_O = np.zeros(n_orig)
    w_E = np.zeros(n_enr)
    target = 0.0

    ns, nt = space.n_elements
    for ei in range(ns):
        for ej in range(nt):
            elem = (ei, ej)
            pts, wts, side = cache.element_rule(elem)
            s, t = pts[:, 0], pts[:, 1]
            _, _, J, det = gmap.map_points(s, t)
            if np.any(np.abs(det) < JAC_TOL):
                raise AssemblyError(f"degenerate Jacobian in element {elem}")
            wphys = wts * np.abs(det)
            pos = side > 0
            a_pt = data.a(pos)
            B, Gs, Gt = _tensor_rows(space, elem, s, t)
            gx, gy = _phys_grads(J, det, Gs, Gt)
            i0, j0 = space.active_bases(ei, ej)
            rows = np.array([space.basis_id(i0 + a, j0 + b)
                             for a in range(3) for b in range(3)])
            wa = wphys * a_pt
            K_loc = (gx * wa[:, None]).T @ gx + (gy * wa[:, None]).T @ gy
            oo_r.append(np.repeat(rows, 9))
            oo_c.append(np.tile(rows, 9))
            oo_v.append(K_loc.ravel())
            w_O[rows] += B.T @ wphys
            if data.f is not None:
                fv = np.broadcast_to(np.asarray(data.f(s, t, pos), float), s.shape)
                F_O[rows] += B.T @ (wphys * fv)
            if data.exact is not None:
                target += float(wphys @ data.exact.u(s, t, pos))

            if n_enr:
                funcs, Ev, Egs, Egt = enrichment_at(enr, elem, s, t, B, Gs, Gt)
                if funcs.size:
                    egx, egy = _phys_grads(J, det, Egs, Egt)
                    Koe = (gx * wa[:, None]).T @ egx + (gy * wa[:, None]).T @ egy
                    Kee = (egx * wa[:, None]).T @ egx + (egy * wa[:, None]).T @ egy
                    oe_r.append(np.repeat(rows, funcs.size))
                    oe_c.append(np.tile(funcs, 9))
                    oe_v.append(Koe.ravel())
                    ee_r.append(np.repeat(funcs, funcs.size))
                    ee_c.append(np.tile(funcs, funcs.size))
                    ee_v.append(Kee.ravel())
                    w_E[funcs] += Ev.T @ wphys
                    if data.f is not None:
                        F_E[funcs] += Ev.T @ (wphys * fv)

    if data.g is not None:
        for elem, pts, w, n_param, side in cache.boundary_rules():
            s, t = pts[:, 0], pts[:, 1]
            _, _, J, det = gmap.map_points(s, t)
            tangent = np.array([-n_param[1], n_param[0]])
            tvec = np.einsum("pij,j->pi", J, tangent)
            dl = np.hypot(tvec[:, 0], tvec[:, 1])
            nvec = np.einsum("pji,j->pi", np.linalg.inv(J), np.asarray(n_param))
            nn = np.hypot(nvec[:, 0], nvec[:, 1])
            nx, ny = nvec[:, 0] / nn, nvec[:, 1] / nn
            gv = np.broadcast_to(np.asarray(data.g(s, t, nx, ny, side > 0), float), s.shape)
            wq = w * dl
            B, Gs, Gt = _tensor_rows(space, elem, s, t)
            i0, j0 = space.active_bases(*elem)
            rows = np.array([space.basis_id(i0 + a, j0 + b)
                             for a in range(3) for b in range(3)])
            F_O[rows] += B.T @ (wq * gv)
            if n_enr:
                funcs, Ev, _, _ = enrichment_at(enr, elem, s, t, B, Gs, Gt)
                if funcs.size:
                    F_E[funcs] += Ev.T @ (wq * gv)

    if data.q is not None:
        for e in zip(*np.nonzero(cls.cut_mask)):
            elem = (int(e[0]), int(e[1]))
            qp, qw, qn = cache.interface_rule(elem)
            if qp.shape[0] == 0:
                continue
            s, t = qp[:, 0], qp[:, 1]
            _, _, J, det = gmap.map_points(s, t)
            tau = np.column_stack([-qn[:, 1], qn[:, 0]])
            tvec = np.einsum("pij,pj->pi", J, tau)
            wq = qw * np.hypot(tvec[:, 0], tvec[:, 1])
            qv = np.broadcast_to(np.asarray(data.q(s, t), float), s.shape)
            B, Gs, Gt = _tensor_rows(space, elem, s, t)
            i0, j0 = space.active_bases(*elem)
            rows = np.array([space.basis_id(i0 + a, j0 + b)
                             for a in range(3) for b in range(3)])
            F_O[rows] += B.T @ (wq * qv)
            if n_enr:
                funcs, Ev, _, _ = enrichment_at(enr, elem, s, t, B, Gs, Gt)
                if funcs.size:
                    F_E[funcs] += Ev.T @ (wq * qv)

    def tocsr(r, c, v, shape):
        if not r:
            return sp.csr_matrix(shape)
        return sp.coo_matrix(
            (np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=shape
        ).tocsr()

    K_OO = tocsr(oo_r, oo_c, oo_v, (n_orig, n_orig))
    K_OE = tocsr(oe_r, oe_c, oe_v, (n_orig, n_enr))
    K_EE = tocsr(ee_r, ee_c, ee_v, (n_enr, n_enr))
    sys = AssembledSystem(space, enr, K_OO, K_OE, K_EE, F_O, F_E, w_O, w_E, target)
    if enr.T is not None:
        _apply_projection_blocks(sys)
        sys.notes["projected"] = True
    return sys


def _apply_projection_blocks(sys: AssembledSystem) -> None:
    """Fold psi* = psi - T(psi) into the assembled blocks (exact)."""
    enr = sys.enr
    space = sys.space
    sub = np.array([space.basis_id(int(bi), int(bj)) for bi, bj in enr.sub_idx])
    T = enr.T
    A = sys.K_OE.toarray()[sub, :]           # B(psi_l, N_i) for sub rows
    Msub = sys.K_OO.toarray()[np.ix_(sub, sub)]
    K_EE = sys.K_EE.toarray()
    K_EE = K_EE - A.T @ T - T.T @ A + T.T @ Msub @ T
    K_OE = sys.K_OE.toarray() - sys.K_OO.toarray()[:, sub] @ T
    sys.K_EE = sp.csr_matrix(K_EE)
    sys.K_OE = sp.csr_matrix(K_OE)
    sys.F_E = sys.F_E - T.T @ sys.F_O[sub]
    sys.w_E = sys.w_E - T.T @ sys.w_O[sub]


def cleanup_zero_rows(sys: AssembledSystem, rel_tol: float = ZERO_ROW_REL):
    """Drop enrichment functions whose energy diagonal is numerically zero."""
    if sys.n_enr == 0:
        return sys, sys.enr, np.arange(0)
    diag = sys.K_EE.diagonal()
    mean = diag.mean() if diag.size else 0.0
    keep = np.nonzero(diag > rel_tol * mean)[0]
    if keep.size == diag.size:
        return sys, sys.enr, keep
    sys.notes["dropped_zero_rows"] = int(diag.size - keep.size)
    enr2 = subset(sys.enr, keep)
    K_EE = sp.csr_matrix(sys.K_EE.toarray()[np.ix_(keep, keep)])
    sys2 = AssembledSystem(
        sys.space, enr2, sys.K_OO, sp.csr_matrix(sys.K_OE.toarray()[:, keep]),
        K_EE, sys.F_O, sys.F_E[keep], sys.w_O, sys.w_E[keep], sys.target,
        dict(sys.notes),
    )
    return sys2, enr2, keep


def apply_mixing(sys: AssembledSystem, C: np.ndarray, d_pivots: np.ndarray | None = None):
    """Re-base the enrichment block by psi' = psi @ C (exact transform)."""
    if sys.n_enr == 0:
        return sys
    K_EE = np.diag(d_pivots) if d_pivots is not None else C.T @ sys.K_EE.toarray() @ C
    sys2 = AssembledSystem(
        sys.space, sys.enr, sys.K_OO, sp.csr_matrix(sys.K_OE.toarray() @ C),
        sp.csr_matrix(K_EE), sys.F_O, C.T @ sys.F_E,
        sys.w_O, C.T @ sys.w_E, sys.target, dict(sys.notes),
    )
    sys2.notes["orthogonalized"] = True
    return sys2


@dataclass
class ScaledSystem:
    K_hat: sp.csr_matrix
    F_hat: np.ndarray
    w_hat: np.ndarray
    D: np.ndarray
    target: float
    n_orig: int


def scale_system(sys: AssembledSystem) -> ScaledSystem:
    """Symmetric diagonal scaling to unit diagonal: K_hat = D K D."""
    K = sys.full_matrix()
    diag = K.diagonal()
    bad = np.nonzero(diag <= 0)[0]
    if bad.size:
        raise AssemblyError(f"nonpositive diagonal at dof {int(bad[0])}: {diag[bad[0]]:.3e}")
    D = 1.0 / np.sqrt(diag)
    Dm = sp.diags(D)
    K_hat = (Dm @ K @ Dm).tocsr()
    return ScaledSystem(K_hat, D * sys.full_rhs(), D * sys.full_constraint(),
                        D, sys.target, sys.n_orig)


def solve(scaled: ScaledSystem, residual_tol: float = 1e-10):
    """Solve the scaled system with the mean-value constraint appended.

    Returns (c, d) coefficient vectors in the unscaled basis.
    """
    U_hat, lam = solve_constrained(scaled.K_hat, scaled.F_hat, scaled.w_hat,
                                   scaled.target)
    res = scaled.K_hat @ U_hat + lam * scaled.w_hat - scaled.F_hat
    scale = max(np.linalg.norm(scaled.F_hat), 1e-300)
    if np.linalg.norm(res) > residual_tol * max(scale, np.linalg.norm(U_hat)):
        raise AssemblyError(
            f"solver residual {np.linalg.norm(res):.3e} exceeds tolerance"
        )
    U = scaled.D * U_hat
    return U[: scaled.n_orig], U[scaled.n_orig :]


def recover_coefficients(enr: EnrichedSpace, c: np.ndarray, d: np.ndarray,
                         mixing: np.ndarray | None = None):
    """Coefficients against the raw descriptors: undo mixing, fold the
    projection part into the spline coefficients."""
    d_raw = mixing @ d if mixing is not None else d.copy()
    c_eff = c.copy()
    if enr.T is not None and d_raw.size:
        space = enr.space
        sub = np.array([space.basis_id(int(bi), int(bj)) for bi, bj in enr.sub_idx])
        c_eff[sub] -= enr.T @ d_raw
    return c_eff, d_raw


def error_norms(space, enr: EnrichedSpace, cls, data: ProblemData,
                c_eff: np.ndarray, d_raw: np.ndarray, cache: RuleCache):
    """(L2 error, H1 seminorm error) against the exact sided solution.

    The constant mode is removed by matching means before the L2 comparison.
    """
    if data.exact is None:
        raise ValueError("error norms need an exact solution")
    gmap = data.gmap
    area = 0.0
    ie = 0.0
    ie2 = 0.0
    ih = 0.0
    coeffs = c_eff.reshape(space.shape)
    ns, nt = space.n_elements
    for ei in range(ns):
        for ej in range(nt):
            elem = (ei, ej)
            pts, wts, side = cache.element_rule(elem)
            s, t = pts[:, 0], pts[:, 1]
            _, _, J, det = gmap.map_points(s, t)
            wphys = wts * np.abs(det)
            pos = side > 0
            B, Gs, Gt = _tensor_rows(space, elem, s, t)
            i0, j0 = space.active_bases(ei, ej)
            cl = coeffs[i0 : i0 + 3, j0 : j0 + 3].ravel()
            uh = B @ cl
            us = Gs @ cl
            ut = Gt @ cl
            if d_raw.size:
                funcs, Ev, Egs, Egt = enrichment_at(enr, elem, s, t, B, Gs, Gt)
                if funcs.size:
                    dl = d_raw[funcs]
                    uh = uh + Ev @ dl
                    us = us + Egs @ dl
                    ut = ut + Egt @ dl
            gx, gy = _phys_grads(J, det, us[:, None], ut[:, None])
            gx, gy = gx[:, 0], gy[:, 0]
            ue = data.exact.u(s, t, pos)
            ex, ey = data.exact.grad(s, t, pos)
            diff = uh - ue
            area += wphys.sum()
            ie += wphys @ diff
            ie2 += wphys @ diff**2
            ih += wphys @ ((gx - ex) ** 2 + (gy - ey) ** 2)
    l2 = float(np.sqrt(max(ie2 - ie**2 / area, 0.0)))
    h1 = float(np.sqrt(ih))
    return l2, h1


def compatibility_residual(space, cls, iface, data: ProblemData,
                           cache: RuleCache | None = None) -> float:
    """Relative size of int f + int g + int q, zero for well-posed data."""
    if cache is None:
        cache = RuleCache(space, iface, cls)
    gmap = data.gmap
    total = 0.0
    scale = 0.0
    ns, nt = space.n_elements
    for ei in range(ns):
        for ej in range(nt):
            pts, wts, side = cache.element_rule((ei, ej))
            s, t = pts[:, 0], pts[:, 1]
            _, _, _, det = gmap.map_points(s, t)
            if data.f is not None:
                fv = np.broadcast_to(np.asarray(data.f(s, t, side > 0), float), s.shape)
                v = (wts * np.abs(det)) @ fv
                total += v
                scale += abs(v)
    if data.g is not None:
        for elem, pts, w, n_param, side in cache.boundary_rules():
            s, t = pts[:, 0], pts[:, 1]
            _, _, J, det = gmap.map_points(s, t)
            tangent = np.array([-n_param[1], n_param[0]])
            tvec = np.einsum("pij,j->pi", J, tangent)
            dl = np.hypot(tvec[:, 0], tvec[:, 1])
            nvec = np.einsum("pji,j->pi", np.linalg.inv(J), np.asarray(n_param))
            nn = np.hypot(nvec[:, 0], nvec[:, 1])
            gv = np.asarray(data.g(s, t, nvec[:, 0] / nn, nvec[:, 1] / nn, side > 0), float)
            v = (w * dl) @ np.broadcast_to(gv, s.shape)
            total += v
            scale += abs(v)
    if data.q is not None:
        for e in zip(*np.nonzero(cls.cut_mask)):
            qp, qw, qn = cache.interface_rule((int(e[0]), int(e[1])))
            if qp.shape[0] == 0:
                continue
            s, t = qp[:, 0], qp[:, 1]
            _, _, J, _ = gmap.map_points(s, t)
            tau = np.column_stack([-qn[:, 1], qn[:, 0]])
            tvec = np.einsum("pij,pj->pi", J, tau)
            v = (qw * np.hypot(tvec[:, 0], tvec[:, 1])) @ np.asarray(data.q(s, t), float)
            total += v
            scale += abs(v)
    return abs(total) / max(scale, 1e-300)
