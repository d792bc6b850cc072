"""Non-uniform quadratic B-splines: knot vectors, basis evaluation, tensor
spaces and geometry maps (identity, analytic polar, NURBS)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DomainError(ValueError):
    """Evaluation point outside the knot range."""


class GeometryError(ValueError):
    """Degenerate or non-evaluable geometry map."""


# ---------------------------------------------------------------------------
# knot vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KnotVector:
    """Open (clamped) non-decreasing knot sequence of a given degree."""

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if knots.ndim != 1 or knots.size < 2 * (self.degree + 1):
            raise ValueError("need at least 2*(degree+1) knots")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        d = self.degree
        if not (np.all(knots[: d + 1] == knots[0]) and np.all(knots[-d - 1 :] == knots[-1])):
            raise ValueError("knot vector must be open (clamped at both ends)")
        if knots[0] == knots[-1]:
            raise ValueError("knot vector needs at least one span of positive length")

    @property
    def num_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def span_knot_indices(self) -> np.ndarray:
        """Knot indices i of the nonempty spans [knots[i], knots[i+1]]."""
        return np.nonzero(np.diff(self.knots) > 0)[0]

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    def greville(self, j: int) -> float:
        d = self.degree
        return float(np.mean(self.knots[j + 1 : j + d + 1]))


def make_open_knot_vector(a: float, b: float, n_elements: int, degree: int = 2) -> KnotVector:
    """Uniform open knot vector on [a, b] with n_elements interior spans."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    interior = np.linspace(a, b, n_elements + 1)
    knots = np.concatenate([np.full(degree, a), interior, np.full(degree, b)])
    return KnotVector(degree, knots)


def find_span(kv: KnotVector, s) -> np.ndarray:
    """Index i of the nonempty span with knots[i] <= s < knots[i+1].

    The last span is closed at the right endpoint.
    """
    t, d = kv.knots, kv.degree
    s_arr = np.asarray(s, dtype=float)
    a, b = kv.domain
    tol = 1e-12 * max(1.0, abs(a), abs(b))
    if np.any(s_arr < a - tol) or np.any(s_arr > b + tol):
        bad = s_arr[(s_arr < a - tol) | (s_arr > b + tol)]
        raise DomainError(f"point(s) {np.atleast_1d(bad)[:4]} outside knot range [{a}, {b}]")
    span = np.searchsorted(t, np.clip(s_arr, a, b), side="right") - 1
    return np.clip(span, d, len(t) - d - 2)


def _safe_div(num, den):
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def eval_basis_derivs(kv: KnotVector, s, max_deriv: int = 2):
    """Values and derivatives of the degree+1 active basis functions at s.

    Returns (first, ders): ders[..., k, r] is the k-th derivative of basis
    function first+r. Scalar input gives (int, (max_deriv+1, degree+1));
    array input prepends the point axis.
    """
    scalar = np.isscalar(s) or np.asarray(s).ndim == 0
    x = np.atleast_1d(np.asarray(s, dtype=float))
    t, d = kv.knots, kv.degree
    if max_deriv < 0 or max_deriv > 2:
        raise ValueError("max_deriv must be 0, 1 or 2")
    span = find_span(kv, x)

    # Cox-de Boor triangle, keeping each degree's active values for derivatives.
    vals = [np.ones((1, x.size))]
    for p in range(1, d + 1):
        prev = vals[-1]
        cur = np.zeros((p + 1, x.size))
        for r in range(p + 1):
            lo = t[span - p + r]
            if r >= 1:
                cur[r] += (x - lo) * _safe_div(prev[r - 1], t[span + r] - lo)
            if r <= p - 1:
                hi = t[span + r + 1]
                cur[r] += (hi - x) * _safe_div(prev[r], hi - t[span - p + r + 1])
        vals.append(cur)

    ders = np.zeros((x.size, max_deriv + 1, d + 1))
    ders[:, 0, :] = vals[d].T
    if max_deriv >= 1 and d >= 1:
        low = vals[d - 1]
        for r in range(d + 1):
            term = np.zeros(x.size)
            if r >= 1:
                term += _safe_div(low[r - 1], t[span + r] - t[span - d + r])
            if r <= d - 1:
                term -= _safe_div(low[r], t[span + r + 1] - t[span - d + r + 1])
            ders[:, 1, r] = d * term
    if max_deriv >= 2 and d >= 2:
        lower = vals[d - 2]
        dlow = np.zeros((d, x.size))  # first derivatives of the degree d-1 actives
        for r in range(d):
            term = np.zeros(x.size)
            if r >= 1:
                term += _safe_div(lower[r - 1], t[span + r] - t[span - d + 1 + r])
            if r <= d - 2:
                term -= _safe_div(lower[r], t[span + r + 1] - t[span - d + 2 + r])
            dlow[r] = (d - 1) * term
        for r in range(d + 1):
            term = np.zeros(x.size)
            if r >= 1:
                term += _safe_div(dlow[r - 1], t[span + r] - t[span - d + r])
            if r <= d - 1:
                term -= _safe_div(dlow[r], t[span + r + 1] - t[span - d + r + 1])
            ders[:, 2, r] = d * term

    first = span - d
    if scalar:
        return int(first[0]), ders[0]
    return first, ders


def basis_matrix(kv: KnotVector, s, deriv: int = 0) -> np.ndarray:
    """Dense collocation matrix B with B[p, j] = (d^deriv N_j)(s_p)."""
    x = np.atleast_1d(np.asarray(s, dtype=float))
    first, ders = eval_basis_derivs(kv, x, max_deriv=deriv)
    B = np.zeros((x.size, kv.num_basis))
    rows = np.arange(x.size)[:, None]
    B[rows, first[:, None] + np.arange(kv.degree + 1)[None, :]] = ders[:, deriv, :]
    return B


def tau_points(kv: KnotVector, j: int) -> tuple[float, float, float]:
    """The three knot-span midpoints (s_{j+k}+s_{j+k+1})/2, k = 0, 1, 2."""
    if not 0 <= j < kv.num_basis:
        raise IndexError(f"basis index {j} out of range [0, {kv.num_basis})")
    t = kv.knots
    return tuple(0.5 * (t[j + k] + t[j + k + 1]) for k in range(3))


def span_midpoints(kv: KnotVector) -> np.ndarray:
    """Midpoints of all consecutive knot pairs; basis j samples slots j..j+2."""
    t = kv.knots
    return 0.5 * (t[:-1] + t[1:])


# ---------------------------------------------------------------------------
# tensor-product space
# ---------------------------------------------------------------------------

def _anchor_map(kv: KnotVector) -> np.ndarray:
    """Element index each basis function is anchored at.

    Basis j is anchored at the middle span [s_{j+1}, s_{j+2}] of its support;
    when that span is empty (clamped boundary) the nearest nonempty span of
    the support is used.
    """
    span_idx = kv.span_knot_indices
    elem_of_span = -np.ones(len(kv.knots) - 1, dtype=int)
    elem_of_span[span_idx] = np.arange(len(span_idx))
    anchors = np.empty(kv.num_basis, dtype=int)
    for j in range(kv.num_basis):
        candidates = [j + 1, j + 2, j]  # middle span first, then the others
        for c in candidates:
            if 0 <= c < len(elem_of_span) and elem_of_span[c] >= 0:
                anchors[j] = elem_of_span[c]
                break
        else:  # pragma: no cover - impossible for valid open vectors
            raise ValueError(f"basis {j} has an empty support")
    return anchors


@dataclass(frozen=True)
class SplineSpace2D:
    """Tensor product of two quadratic spline spaces over a rectangle."""

    kv_s: KnotVector
    kv_t: KnotVector
    anchors_s: np.ndarray = field(init=False, repr=False)
    anchors_t: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kv_s.degree != 2 or self.kv_t.degree != 2:
            raise ValueError("SplineSpace2D requires degree 2 in both directions")
        object.__setattr__(self, "anchors_s", _anchor_map(self.kv_s))
        object.__setattr__(self, "anchors_t", _anchor_map(self.kv_t))

    @property
    def shape(self) -> tuple[int, int]:
        return self.kv_s.num_basis, self.kv_t.num_basis

    @property
    def num_basis(self) -> int:
        return self.kv_s.num_basis * self.kv_t.num_basis

    @property
    def n_elements(self) -> tuple[int, int]:
        return len(self.kv_s.span_knot_indices), len(self.kv_t.span_knot_indices)

    @property
    def num_elements(self) -> int:
        ns, nt = self.n_elements
        return ns * nt

    def element_box(self, ei: int, ej: int) -> tuple[float, float, float, float]:
        """(s0, s1, t0, t1) bounds of element (ei, ej)."""
        i = self.kv_s.span_knot_indices[ei]
        j = self.kv_t.span_knot_indices[ej]
        ts, tt = self.kv_s.knots, self.kv_t.knots
        return float(ts[i]), float(ts[i + 1]), float(tt[j]), float(tt[j + 1])

    def element_id(self, ei: int, ej: int) -> int:
        return ei * self.n_elements[1] + ej

    def element_index(self, eid: int) -> tuple[int, int]:
        nt = self.n_elements[1]
        return eid // nt, eid % nt

    def basis_id(self, bi: int, bj: int) -> int:
        return bi * self.shape[1] + bj

    def basis_index(self, bid: int) -> tuple[int, int]:
        mt = self.shape[1]
        return bid // mt, bid % mt

    def basis_anchor(self, bi: int, bj: int) -> tuple[int, int]:
        """Element the tensor basis (bi, bj) is anchored at."""
        return int(self.anchors_s[bi]), int(self.anchors_t[bj])

    def bases_anchored_at(self, ei: int, ej: int) -> list[tuple[int, int]]:
        bs = np.nonzero(self.anchors_s == ei)[0]
        bt = np.nonzero(self.anchors_t == ej)[0]
        return [(int(i), int(j)) for i in bs for j in bt]

    def active_bases(self, ei: int, ej: int) -> tuple[int, int]:
        """First (bi, bj) of the 3x3 block of bases supported on the element."""
        i = self.kv_s.span_knot_indices[ei]
        j = self.kv_t.span_knot_indices[ej]
        return int(i - 2), int(j - 2)

    def basis_support_elements(self, bi: int, bj: int) -> tuple[range, range]:
        """Element index ranges covered by the support of basis (bi, bj)."""
        return self._support_range(self.kv_s, bi), self._support_range(self.kv_t, bj)

    @staticmethod
    def _support_range(kv: KnotVector, b: int) -> range:
        span_idx = kv.span_knot_indices
        lo = np.searchsorted(span_idx, b)
        hi = np.searchsorted(span_idx, b + 2, side="right")
        return range(int(lo), int(hi))


def unit_square_space(n: int) -> SplineSpace2D:
    kv = make_open_knot_vector(0.0, 1.0, n, 2)
    return SplineSpace2D(kv, kv)


def spline_value_grid(space: SplineSpace2D, coeffs: np.ndarray, s, t) -> np.ndarray:
    """Evaluate sum_ij coeffs[i,j] N_i(s) N_j(t) on the grid s x t."""
    Bs = basis_matrix(space.kv_s, s)
    Bt = basis_matrix(space.kv_t, t)
    return Bs @ coeffs @ Bt.T


def spline_value_points(space: SplineSpace2D, coeffs: np.ndarray, s, t, deriv=(0, 0)) -> np.ndarray:
    """Evaluate a spline (or a parametric derivative) at paired points."""
    s = np.atleast_1d(np.asarray(s, float))
    t = np.atleast_1d(np.asarray(t, float))
    fs, ds = eval_basis_derivs(space.kv_s, s, max_deriv=deriv[0])
    ft, dt = eval_basis_derivs(space.kv_t, t, max_deriv=deriv[1])
    out = np.zeros(s.size)
    for a in range(3):
        rows = fs + a
        va = ds[:, deriv[0], a]
        for b in range(3):
            out += va * dt[:, deriv[1], b] * coeffs[rows, ft + b]
    return out


# ---------------------------------------------------------------------------
# geometry maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometryMap:
    """Map from the parameter rectangle to the physical domain.

    `kind` is one of 'identity', 'analytic', 'nurbs'. Analytic maps carry
    vectorized callables; NURBS maps carry a control net and weights over a
    SplineSpace2D (rational tensor-product surface).
    """

    kind: str
    fmap: Callable | None = None
    fjac: Callable | None = None
    space: SplineSpace2D | None = None
    control: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "nurbs":
            if self.space is None or self.control is None or self.weights is None:
                raise GeometryError("nurbs map needs space, control points and weights")
            w = np.asarray(self.weights, float)
            if np.any(w < 0):
                raise GeometryError("nurbs weights must be nonnegative")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def map_points(self, s, t):
        """(x, y, J, detJ) at paired parameter points; J has shape (n, 2, 2)."""
        s = np.atleast_1d(np.asarray(s, float))
        t = np.atleast_1d(np.asarray(t, float))
        n = s.size
        if self.kind == "identity":
            J = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
            return s.copy(), t.copy(), J, np.ones(n)
        if self.kind == "analytic":
            x, y = self.fmap(s, t)
            J = self.fjac(s, t)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            return x, y, J, det
        return self._nurbs_points(s, t)

    def _nurbs_points(self, s, t):
        sp = self.space
        cw = self.control * self.weights[..., None]  # weighted control points
        num_x = spline_value_points(sp, cw[..., 0], s, t)
        num_y = spline_value_points(sp, cw[..., 1], s, t)
        den = spline_value_points(sp, self.weights, s, t)
        if np.any(den <= 0):
            raise GeometryError("rational denominator vanished (all active weights zero)")
        x, y = num_x / den, num_y / den
        J = np.empty((s.size, 2, 2))
        for ax, dv in ((0, (1, 0)), (1, (0, 1))):
            dnum_x = spline_value_points(sp, cw[..., 0], s, t, deriv=dv)
            dnum_y = spline_value_points(sp, cw[..., 1], s, t, deriv=dv)
            dden = spline_value_points(sp, self.weights, s, t, deriv=dv)
            J[:, 0, ax] = (dnum_x - x * dden) / den
            J[:, 1, ax] = (dnum_y - y * dden) / den
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        return x, y, J, det


def identity_map() -> GeometryMap:
    return GeometryMap(kind="identity")


def polar_annulus_map() -> GeometryMap:
    """Exact polar map (s, t) -> (s cos t, s sin t) for the ring domain."""

    def fmap(s, t):
        return s * np.cos(t), s * np.sin(t)

    def fjac(s, t):
        J = np.empty((s.size, 2, 2))
        J[:, 0, 0] = np.cos(t)
        J[:, 0, 1] = -s * np.sin(t)
        J[:, 1, 0] = np.sin(t)
        J[:, 1, 1] = s * np.cos(t)
        return J

    return GeometryMap(kind="analytic", fmap=fmap, fjac=fjac)


def nurbs_annulus_map(r_in: float = 1.0, r_out: float = 2.0) -> GeometryMap:
    """Exact rational quadratic rendition of the annulus (four 90-degree arcs).

    The angular parameterization differs from the polar map away from the
    quadrant corners, but the image and the enclosed area are exact.
    """
    kv_s = KnotVector(2, np.array([r_in, r_in, r_in, r_out, r_out, r_out]))
    tk = np.array([0, 0, 0, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 1, 1, 1]) * 2 * np.pi
    kv_t = KnotVector(2, tk)
    space = SplineSpace2D(kv_s, kv_t)
    w2 = np.sqrt(0.5)
    ang = np.deg2rad(np.arange(0, 361, 45))
    wt = np.where(np.arange(9) % 2 == 0, 1.0, w2)
    stretch = np.where(np.arange(9) % 2 == 0, 1.0, 1.0 / w2)
    radii = np.array([r_in, 0.5 * (r_in + r_out), r_out])
    control = np.empty((3, 9, 2))
    for i, r in enumerate(radii):
        control[i, :, 0] = r * stretch * np.cos(ang)
        control[i, :, 1] = r * stretch * np.sin(ang)
    weights = np.tile(wt, (3, 1))
    return GeometryMap(kind="nurbs", space=space, control=control, weights=weights)


def eval_geometry(gmap: GeometryMap, s: float, t: float):
    """(physical point, 2x2 Jacobian, det J) at a single parameter point."""
    x, y, J, det = gmap.map_points([s], [t])
    return (float(x[0]), float(y[0])), J[0], float(det[0])
