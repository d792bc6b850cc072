"""Quadratic B-spline quasi-interpolation, plain and interface-aware.

The plain projector samples a function at three span midpoints per basis
function and combines them with weights that reproduce all quadratics.
The interface-aware variant computes each coefficient from a one-sided
smooth extension, chosen by the element its basis function is anchored at.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bspline import (
    KnotVector,
    SplineSpace2D,
    span_midpoints,
    spline_value_grid,
    spline_value_points,
)

PROV_THREE_POINT = 0
PROV_ENDPOINT = 1
PROV_BRANCH_0 = 0
PROV_BRANCH_1 = 1


class SampleError(ValueError):
    """A sampled function value was not finite."""


@dataclass(frozen=True)
class QiRule1D:
    """Per-basis sampling rule: basis j samples midpoints[j:j+3] with weights[j]."""

    kv: KnotVector
    midpoints: np.ndarray
    weights: np.ndarray  # (m, 3)
    provenance: np.ndarray  # (m,) PROV_* codes


@dataclass(frozen=True)
class QiCoefficients:
    """Spline coefficients produced by a quasi-interpolation pass."""

    coeffs: np.ndarray
    kv_s: KnotVector
    kv_t: KnotVector | None = None
    provenance: np.ndarray | None = None

    def eval(self, s, t=None):
        if self.kv_t is None:
            from .bspline import basis_matrix

            return basis_matrix(self.kv_s, s) @ self.coeffs
        space = SplineSpace2D(self.kv_s, self.kv_t)
        return spline_value_points(space, self.coeffs, s, t)

    def eval_grid(self, s, t):
        space = SplineSpace2D(self.kv_s, self.kv_t)
        return spline_value_grid(space, self.coeffs, s, t)


def alpha_weights(kv: KnotVector, j: int) -> tuple[float, float, float]:
    """Sampling weights making the coefficient rule exact for quadratics.

    Solves the local 3x3 system that matches the blossom (de Boor) coefficient
    of 1, s and s^2; where the midpoints collapse (clamped ends, triple knots)
    the rule degenerates to interpolation at the collapsed point, which is the
    exact blossom value there.
    """
    if not 0 <= j < kv.num_basis:
        raise IndexError(f"basis index {j} out of range [0, {kv.num_basis})")
    t = kv.knots
    if t[j + 1] == t[j + 2]:
        return (0.0, 1.0, 0.0)
    tau = 0.5 * (t[j : j + 3] + t[j + 1 : j + 4])
    rhs = np.array([1.0, 0.5 * (t[j + 1] + t[j + 2]), t[j + 1] * t[j + 2]])
    V = np.vstack([np.ones(3), tau, tau**2])
    try:
        w = np.linalg.solve(V, rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded above
        raise ValueError(f"degenerate sampling points for basis {j}: {tau}") from exc
    return tuple(w)


def qi_rule(kv: KnotVector) -> QiRule1D:
    m = kv.num_basis
    weights = np.zeros((m, 3))
    prov = np.zeros(m, dtype=np.int8)
    for j in range(m):
        weights[j] = alpha_weights(kv, j)
        if kv.knots[j + 1] == kv.knots[j + 2]:
            prov[j] = PROV_ENDPOINT
    return QiRule1D(kv, span_midpoints(kv), weights, prov)


def _check_finite(values: np.ndarray, points) -> None:
    bad = ~np.isfinite(values)
    if np.any(bad):
        where = np.asarray(points)[np.nonzero(bad)[0][:1]] if np.ndim(points) else points
        raise SampleError(f"non-finite sample at point(s) {where}")


def qi_1d(f: Callable, kv: KnotVector) -> QiCoefficients:
    """Project f onto the spline space by the three-point coefficient rule."""
    rule = qi_rule(kv)
    samples = np.asarray(f(rule.midpoints), dtype=float)
    _check_finite(samples, rule.midpoints)
    m = kv.num_basis
    coeffs = np.empty(m)
    for j in range(m):
        coeffs[j] = rule.weights[j] @ samples[j : j + 3]
    return QiCoefficients(coeffs, kv, provenance=rule.provenance)


def _tensor_coeffs(F: np.ndarray, rs: QiRule1D, rt: QiRule1D) -> np.ndarray:
    ms, mt = rs.kv.num_basis, rt.kv.num_basis
    out = np.zeros((ms, mt))
    for k in range(3):
        Fk = F[k : k + ms, :]
        for l in range(3):
            out += np.outer(rs.weights[:, k], rt.weights[:, l]) * Fk[:, l : l + mt]
    return out


def qi_2d(f: Callable, space: SplineSpace2D) -> QiCoefficients:
    """Tensor-product quasi-interpolation of a scalar field f(s, t)."""
    rs, rt = qi_rule(space.kv_s), qi_rule(space.kv_t)
    F = np.asarray(f(rs.midpoints[:, None], rt.midpoints[None, :]), dtype=float)
    F = np.broadcast_to(F, (rs.midpoints.size, rt.midpoints.size))
    _check_finite(F, (rs.midpoints[:, None], rt.midpoints[None, :]))
    return QiCoefficients(_tensor_coeffs(F, rs, rt), space.kv_s, space.kv_t)


@dataclass(frozen=True)
class ExtensionPair:
    """Smooth whole-domain extensions of the two one-sided branches of f."""

    f0: Callable
    f1: Callable


def qi_modified_2d(ext: ExtensionPair, classification, space: SplineSpace2D,
                   exclude_enriched: bool = False) -> QiCoefficients:
    """Interface-aware quasi-interpolation.

    Each coefficient is computed from the branch owned by the element its
    basis is anchored at: the side-0 extension on elements strictly inside
    the positive region, the side-1 extension on cut and negative-side
    elements. This confines mixed-branch pollution to the cut layer plus the
    positive-side ring, which the enrichment windows cover exactly.

    With exclude_enriched the positive-side ring also takes the side-1
    branch; that variant reproduces fewer elements and is kept only for
    comparison studies.
    """
    if classification.space is not space:
        a = classification.space
        same = a.kv_s.knots.shape == space.kv_s.knots.shape and np.array_equal(
            a.kv_s.knots, space.kv_s.knots
        ) and np.array_equal(a.kv_t.knots, space.kv_t.knots)
        if not same:
            raise ValueError("classification and space use different element grids")
    rs, rt = qi_rule(space.kv_s), qi_rule(space.kv_t)
    mids = (rs.midpoints[:, None], rt.midpoints[None, :])
    shape = (rs.midpoints.size, rt.midpoints.size)
    F0 = np.broadcast_to(np.asarray(ext.f0(*mids), dtype=float), shape)
    F1 = np.broadcast_to(np.asarray(ext.f1(*mids), dtype=float), shape)
    _check_finite(F0, mids)
    _check_finite(F1, mids)
    mu0 = _tensor_coeffs(F0, rs, rt)
    mu1 = _tensor_coeffs(F1, rs, rt)

    own_from_0 = classification.labels == classification.INSIDE_POS  # per element
    if exclude_enriched:
        own_from_0 = own_from_0 & ~classification.jf_plus(1)
    use0 = own_from_0[np.ix_(space.anchors_s, space.anchors_t)]
    coeffs = np.where(use0, mu0, mu1)
    prov = np.where(use0, PROV_BRANCH_0, PROV_BRANCH_1).astype(np.int8)
    return QiCoefficients(coeffs, space.kv_s, space.kv_t, provenance=prov)
